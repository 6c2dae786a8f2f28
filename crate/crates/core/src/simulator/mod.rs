//! Time-domain simulation of the DAE and of the `Sigma_lambda` system, fault
//! sequencing and critical-clearing-time search.

pub mod algebraic;
mod cct;
mod rk;
mod scenario;
pub(crate) mod transformed;

pub use algebraic::{find_equilibrium, solve_algebraic, AlgebraicSolution};
pub use cct::{compute_cct, compute_cct_with, is_stable, post_fault_equilibrium, Cct, CctOptions, Verdict};
pub use scenario::{Scenario, Topology};
pub use transformed::{simulate_transformed, TransformedOptions};

use crate::error::{Error, Result};
use crate::model::{Model, SystemState};
use crate::regularizer::{eigendecompose_tracked, min_modulus_eigenvalue, orientation_sign};
use crate::scalar::{c, Real};
use nalgebra::DVector;

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Reached the end of the horizon.
    Completed,
    /// Reached the singular surface; the last state is the refined contact.
    SingularSurface,
    /// Rotor angles left the divergence box.
    Divergence,
    /// Stopped by a numerical guard (voltage floor, step collapse, spectrum).
    GuardTripped,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "Completed",
            Termination::SingularSurface => "SingularSurface",
            Termination::Divergence => "Divergence",
            Termination::GuardTripped => "GuardTripped",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sampled trajectory with per-point diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub id: String,
    /// Physical time (s). For transformed runs this is reconstructed from
    /// `dt = s lambda1 dtau`.
    pub times: Vec<T>,
    /// Transformed time, present only for `Sigma_lambda` runs.
    pub tau: Option<Vec<T>>,
    pub states: Vec<SystemState<T>>,
    pub topology: Vec<Topology>,
    pub lambda1: Vec<T>,
    /// `|g|_inf` at each sample.
    pub residual: Vec<T>,
    pub termination: Termination,
    pub detail: Option<String>,
    /// Index of the first post-fault sample.
    pub clearing_index: Option<usize>,
    /// Orientation sign fixed from `lambda1` at the initial equilibrium.
    pub sign: T,
}

impl<T: Real> Trajectory<T> {
    fn new(id: &str, sign: T, tau: bool) -> Self {
        Self {
            id: id.to_string(),
            times: Vec::new(),
            tau: tau.then(Vec::new),
            states: Vec::new(),
            topology: Vec::new(),
            lambda1: Vec::new(),
            residual: Vec::new(),
            termination: Termination::Completed,
            detail: None,
            clearing_index: None,
            sign,
        }
    }

    fn pop(&mut self) {
        self.times.pop();
        self.states.pop();
        self.topology.pop();
        self.lambda1.pop();
        self.residual.pop();
    }

    fn push(&mut self, t: T, s: SystemState<T>, topo: Topology, l1: T, res: T) {
        self.times.push(t);
        self.states.push(s);
        self.topology.push(topo);
        self.lambda1.push(l1);
        self.residual.push(res);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&SystemState<T>> {
        self.states.last()
    }

    /// State right after the fault is cleared.
    pub fn clearing_state(&self) -> Option<&SystemState<T>> {
        self.clearing_index.map(|i| &self.states[i])
    }

    /// Cumulative arclength in `(x, y)`.
    pub fn arclength(&self) -> Vec<T> {
        let mut s = Vec::with_capacity(self.len());
        let mut acc = T::zero();
        for i in 0..self.len() {
            if i > 0 {
                acc += (self.states[i].z() - self.states[i - 1].z()).norm();
            }
            s.push(acc);
        }
        s
    }

    /// Linear interpolation of the state at arclength `s`.
    pub fn at_arclength(&self, arc: &[T], s: T) -> Option<DVector<T>> {
        if self.is_empty() || s < arc[0] || s > arc[arc.len() - 1] {
            return None;
        }
        let k = arc.partition_point(|a| *a < s).max(1).min(arc.len() - 1);
        let (a0, a1) = (arc[k - 1], arc[k]);
        let w = if a1 > a0 { (s - a0) / (a1 - a0) } else { T::zero() };
        let z0 = self.states[k - 1].z();
        let z1 = self.states[k].z();
        Some(&z0 + (z1 - &z0) * w)
    }
}

/// Integrator tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest step before the run is declared stuck (s).
    pub h_min: f64,
    /// Divergence box on rotor angles (rad).
    pub angle_limit: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_min: 1e-9,
            angle_limit: 4.0 * std::f64::consts::PI,
        }
    }
}

/// Largest rotor-angle excursion. Without a fixed voltage source the angles
/// are measured from the inertia-weighted centre of angle, since only angle
/// differences are defined there.
pub fn angle_excursion<T: Real>(sc: &Scenario<T>, x: &DVector<T>) -> T {
    let nd = sc.devices.len();
    let l = sc.devices.layout();
    let reference = if sc.has_reference() {
        T::zero()
    } else {
        let mut num = T::zero();
        let mut den = T::zero();
        for (k, d) in sc.devices.devices.iter().enumerate() {
            num += d.inertia() * x[l.delta(k)];
            den += d.inertia();
        }
        num / den
    };
    (0..nd).fold(T::zero(), |a, k| a.max((x[l.delta(k)] - reference).abs()))
}

/// Integrates the DAE through the pre-fault, fault-on and post-fault
/// segments.
pub fn simulate<T: Real>(sc: &Scenario<T>) -> Result<Trajectory<T>> {
    simulate_with(sc, &SimSettings::default())
}

pub fn simulate_with<T: Real>(sc: &Scenario<T>, set: &SimSettings) -> Result<Trajectory<T>> {
    sc.validate()?;
    let thr = &sc.thresholds;
    let m0 = sc.model(Topology::PreFault);
    let (x0, y0) = (sc.initial.x.clone(), sc.initial.y.clone());
    let fn0 = m0.f(&x0, &y0)?.amax().as_f64();
    let gn0 = m0.g(&x0, &y0)?.amax().as_f64();
    if fn0 > 1e-8 || gn0 > 1e-8 {
        return Err(Error::InvalidInitialCondition { f_norm: fn0, g_norm: gn0 });
    }
    let es0 = eigendecompose_tracked(&m0.dyg(&y0)?, thr, None)?;
    let sign = orientation_sign(es0.lambda1());
    let mut traj = Trajectory::new(&sc.name, sign, false);
    let mut prev_u1 = Some(es0.u1());
    traj.push(T::zero(), sc.initial.clone(), Topology::PreFault, es0.lambda1(), c(gn0));

    let mut segments = vec![(sc.fault_start, Topology::PreFault)];
    if sc.fault_duration > T::zero() {
        segments.push((sc.fault_end(), Topology::FaultOn));
    }
    segments.push((sc.t_end, Topology::PostFault));

    let mut t = T::zero();
    let mut x = x0;
    let mut y = y0;
    let mut h = sc.dt_max.min(c(1e-3));
    let mut current = Topology::PreFault;
    let mut neg = negative_det(&m0, &y);
    for (seg_end, topo) in segments {
        let m = sc.model(topo);
        if topo != current {
            match solve_algebraic(&m, &x, &y) {
                Ok(sol) => {
                    y = sol.y;
                    let k = traj.len() - 1;
                    traj.states[k].y = y.clone();
                    traj.topology[k] = topo;
                    traj.residual[k] = sol.residual;
                    traj.lambda1[k] = lambda1_of(&m, &y, &mut prev_u1);
                }
                Err(e) => {
                    traj.termination = Termination::GuardTripped;
                    traj.detail = Some(format!("no algebraic solution after switching to {topo:?}: {e}"));
                    return Ok(traj);
                }
            }
            current = topo;
            neg = negative_det(&m, &y);
            if topo == Topology::PostFault {
                traj.clearing_index = Some(traj.len() - 1);
            }
        }
        while t < seg_end {
            let remaining = seg_end - t;
            h = h.min(sc.dt_max).min(remaining);
            // avoid a sliver step at the segment end
            if remaining - h < c::<T>(set.h_min * 10.0) {
                h = remaining;
            }
            match dae_step(&m, &x, &y, h, set) {
                Ok((xn, yn, res, err)) if err <= T::one() => {
                    let (t_prev, x_prev, y_prev) = (t, x.clone(), y.clone());
                    t = if h == remaining { seg_end } else { t + h };
                    x = xn;
                    y = yn;
                    let l1 = lambda1_of(&m, &y, &mut prev_u1);
                    traj.push(t, SystemState::new(x.clone(), y.clone()), topo, l1, res);
                    if angle_excursion(sc, &x) > c(set.angle_limit) {
                        traj.termination = Termination::Divergence;
                        return Ok(traj);
                    }
                    h *= rk::factor(err);
                    let neg_new = negative_det(&m, &y);
                    let stepped_over = neg_new != neg;
                    if stepped_over {
                        // the step jumped across the surface: redo it on Sigma_lambda
                        traj.pop();
                        t = t_prev;
                        x = x_prev;
                        y = y_prev;
                    }
                    if stepped_over || l1.abs() < c(thr.eps_near) {
                        match continue_on_lambda(&m, &mut traj, t, seg_end, topo, &mut prev_u1)? {
                            Some((tn, xn, yn)) => {
                                t = tn;
                                x = xn;
                                y = yn;
                                h = sc.dt_max.min(c(1e-4));
                            }
                            None => return Ok(traj),
                        }
                        neg = negative_det(&m, &y);
                    } else {
                        neg = neg_new;
                    }
                }
                Ok((_, _, _, err)) => {
                    h *= rk::factor(err).min(c(0.5));
                }
                Err(Error::AlgebraicNoConvergence { .. }) | Err(Error::VoltageCollapseGuard { .. }) if h > c(set.h_min) => {
                    h *= c(0.25);
                }
                Err(Error::AlgebraicNoConvergence { .. }) => {
                    // the algebraic branch is ending: hand over to Sigma_lambda
                    match continue_on_lambda(&m, &mut traj, t, seg_end, topo, &mut prev_u1)? {
                        Some((tn, xn, yn)) => {
                            t = tn;
                            x = xn;
                            y = yn;
                            h = sc.dt_max.min(c(1e-4));
                        }
                        None => return Ok(traj),
                    }
                    neg = negative_det(&m, &y);
                }
                Err(e @ Error::VoltageCollapseGuard { .. }) => {
                    traj.termination = Termination::GuardTripped;
                    traj.detail = Some(format!("t = {t:.6}: {e}"));
                    return Ok(traj);
                }
                Err(e) => return Err(e),
            }
        }
    }
    traj.termination = Termination::Completed;
    Ok(traj)
}

fn lambda1_of<T: Real>(m: &Model<T>, y: &DVector<T>, prev_u1: &mut Option<DVector<T>>) -> T {
    let Ok(dyg) = m.dyg(y) else { return T::zero() };
    match eigendecompose_tracked(&dyg, m.thr, prev_u1.as_ref()) {
        Ok(es) => {
            *prev_u1 = Some(es.u1());
            es.lambda1()
        }
        Err(_) => min_modulus_eigenvalue(&dyg).unwrap_or_else(|_| T::zero()),
    }
}

/// Whether `det(D_y g) < 0`.
fn negative_det<T: Real>(m: &Model<T>, y: &DVector<T>) -> bool {
    m.dyg(y).map(|a| a.determinant() < T::zero()).unwrap_or(false)
}

/// One DAE step: explicit RK on `x` with a Newton solve of `y` at every stage.
/// Returns `(x, y, |g|_inf, error norm)`.
fn dae_step<T: Real>(
    m: &Model<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    h: T,
    set: &SimSettings,
) -> Result<(DVector<T>, DVector<T>, T, T)> {
    let k1 = m.f(x, y)?;
    // first-order predictor for the stage guesses
    let ydot = m
        .dyg(y)?
        .lu()
        .solve(&(m.dxg(x)? * &k1))
        .map(|v| -v)
        .filter(|v| v.iter().all(|e| e.is_finite()))
        .unwrap_or_else(|| DVector::zeros(y.len()));
    let mut y_last = y.clone();
    let mut res = T::zero();
    let st = rk::step(x, &k1, h, |s, xs| {
        let guess = y + &ydot * (h * c::<T>(rk::C[s]));
        let sol = solve_algebraic(m, xs, &guess)?;
        if s == 6 {
            y_last = sol.y.clone();
            res = sol.residual;
        }
        m.f(xs, &sol.y)
    })?;
    let err = rk::error_norm(&st.err, x, &st.x, set.rtol, set.atol);
    Ok((st.x, y_last, res, err))
}

/// Continues along `Sigma_lambda` from the last sample. Returns the state to
/// resume the DAE from, or `None` when the run has terminated (the
/// termination is recorded in `traj`).
fn continue_on_lambda<T: Real>(
    m: &Model<T>,
    traj: &mut Trajectory<T>,
    t: T,
    t_stop: T,
    topo: Topology,
    prev_u1: &mut Option<DVector<T>>,
) -> Result<Option<(T, DVector<T>, DVector<T>)>> {
    let start = traj.states.last().cloned().ok_or(Error::Dimension("empty trajectory".into()))?;
    // orient the leg forward in time from its start
    let l_start = traj.lambda1.last().copied().unwrap_or(traj.sign);
    let opts = TransformedOptions {
        sign: if l_start < T::zero() { -T::one() } else { T::one() },
        t_stop: Some(t_stop),
        stop_at_surface: true,
        resume_above: Some(c(2.0 * m.thr.eps_near)),
        ..TransformedOptions::default()
    };
    let (leg, stop) = transformed::integrate(m, &start, t, &opts, prev_u1.clone())?;
    for i in 1..leg.len() {
        traj.push(leg.times[i], leg.states[i].clone(), topo, leg.lambda1[i], leg.residual[i]);
    }
    if let Some(u) = stop.u1 {
        *prev_u1 = Some(u);
    }
    match stop.reason {
        transformed::StopReason::Surface => {
            traj.termination = Termination::SingularSurface;
            Ok(None)
        }
        transformed::StopReason::Resume | transformed::StopReason::TimeLimit => {
            let last = traj.states.last().cloned().unwrap_or(start);
            match solve_algebraic(m, &last.x, &last.y) {
                Ok(sol) => Ok(Some((*traj.times.last().unwrap_or(&t), last.x, sol.y))),
                Err(e) => {
                    traj.termination = Termination::GuardTripped;
                    traj.detail = Some(format!("could not resume the DAE after a near-surface leg: {e}"));
                    Ok(None)
                }
            }
        }
        transformed::StopReason::Other(msg) => {
            traj.termination = Termination::GuardTripped;
            traj.detail = Some(msg);
            Ok(None)
        }
    }
}
