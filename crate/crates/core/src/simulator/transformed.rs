//! Integration of the `Sigma_lambda` system in transformed time `tau`.
//!
//! Physical time is carried as an extra state with `dt/dtau = s lambda1`, so
//! it is reconstructed to integrator accuracy rather than by a separate
//! quadrature.

use super::algebraic::pinv_solve;
use super::{rk, Scenario, Termination, Topology, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Model, SystemState};
use crate::regularizer::{eigendecompose_tracked, sigma_lambda_field};
use crate::scalar::{c, Real};
use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct TransformedOptions<T: Real> {
    /// Orientation `s`. Flipping it integrates the same path backwards.
    pub sign: T,
    pub tau_max: T,
    /// Stop once the reconstructed time passes this value.
    pub t_stop: Option<T>,
    /// Stop (after refinement) when `lambda1` changes sign.
    pub stop_at_surface: bool,
    /// Stop once `|lambda1|` rises above this on the regular side.
    pub resume_above: Option<T>,
    /// Stop once the path leaves a ball of this radius around the start.
    pub max_distance: Option<T>,
    pub max_steps: usize,
    pub h_max: T,
    pub rtol: f64,
    pub atol: f64,
    /// One Newton projection of `y` onto `g = 0` every this many steps.
    pub project_every: usize,
}

impl<T: Real> Default for TransformedOptions<T> {
    fn default() -> Self {
        Self {
            sign: T::one(),
            tau_max: c(1e6),
            t_stop: None,
            stop_at_surface: false,
            resume_above: None,
            max_distance: None,
            max_steps: 200_000,
            h_max: c(1.0),
            rtol: 1e-9,
            atol: 1e-11,
            project_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StopReason {
    Surface,
    Resume,
    TimeLimit,
    Other(String),
}

pub(crate) struct Stop<T: Real> {
    pub reason: StopReason,
    pub u1: Option<DVector<T>>,
}

struct Eval<T: Real> {
    dw: DVector<T>,
    lambda1: T,
    u1: DVector<T>,
}

fn rhs<T: Real>(m: &Model<T>, w: &DVector<T>, sign: T, u1: Option<&DVector<T>>) -> Result<Eval<T>> {
    let (nx, ny) = (m.nx(), m.ny());
    let x = w.rows(0, nx).into_owned();
    let y = w.rows(nx, ny).into_owned();
    let lf = sigma_lambda_field(m, &x, &y, sign, u1)?;
    let mut dw = DVector::zeros(nx + ny + 1);
    dw.rows_mut(0, nx).copy_from(&lf.dx);
    dw.rows_mut(nx, ny).copy_from(&lf.dy);
    dw[nx + ny] = sign * lf.lambda1();
    Ok(Eval { dw, lambda1: lf.lambda1(), u1: lf.eig.u1() })
}

fn pack<T: Real>(s: &SystemState<T>, t: T) -> DVector<T> {
    let mut w = DVector::zeros(s.x.len() + s.y.len() + 1);
    w.rows_mut(0, s.x.len()).copy_from(&s.x);
    w.rows_mut(s.x.len(), s.y.len()).copy_from(&s.y);
    w[s.x.len() + s.y.len()] = t;
    w
}

fn unpack<T: Real>(m: &Model<T>, w: &DVector<T>) -> (SystemState<T>, T) {
    let (nx, ny) = (m.nx(), m.ny());
    (
        SystemState::new(w.rows(0, nx).into_owned(), w.rows(nx, ny).into_owned()),
        w[nx + ny],
    )
}

/// `lambda1`, its eigenvector and whether `det(D_y g) < 0`. A change of the
/// determinant sign marks a genuine crossing of the singular surface; a sign
/// change of `lambda1` alone can also come from two eigenvalues of opposite
/// sign trading places as the minimum-modulus one.
fn tracked_lambda<T: Real>(m: &Model<T>, y: &DVector<T>, u1: Option<&DVector<T>>) -> Result<(T, DVector<T>, bool)> {
    let es = eigendecompose_tracked(&m.dyg(y)?, m.thr, u1)?;
    Ok((es.lambda1(), es.u1(), negative_det(&es.lambdas)))
}

pub(crate) fn negative_det<T: Real>(l: &DVector<T>) -> bool {
    l.iter().filter(|v| **v < T::zero()).count() % 2 == 1
}

pub(crate) fn integrate<T: Real>(
    m: &Model<T>,
    start: &SystemState<T>,
    t0: T,
    opts: &TransformedOptions<T>,
    u1_prev: Option<DVector<T>>,
) -> Result<(Trajectory<T>, Stop<T>)> {
    let (nx, ny) = (m.nx(), m.ny());
    let mut traj = Trajectory::new("sigma_lambda", opts.sign, true);
    let mut w = pack(start, t0);
    let first = rhs(m, &w, opts.sign, u1_prev.as_ref())?;
    let mut lam = first.lambda1;
    let mut u1 = first.u1.clone();
    let mut neg = tracked_lambda(m, &start.y, Some(&u1))?.2;
    let g0 = m.g(&start.x, &start.y)?.amax();
    traj.push(t0, start.clone(), Topology::PostFault, lam, g0);
    if let Some(tv) = traj.tau.as_mut() {
        tv.push(T::zero());
    }
    let dir = if opts.sign * lam >= T::zero() { T::one() } else { -T::one() };
    let z0 = start.z();
    let hit_tol = c::<T>((m.thr.eps_near * 1e-2).min(0.1 * m.thr.eps_sing));

    let nrm = first.dw.rows(0, nx + ny).amax();
    let mut h = opts.h_max.min(c::<T>(1e-3) / nrm.max(c(1e-12)));
    let mut tau = T::zero();
    let mut steps = 0usize;
    let stop = |reason, u1: &DVector<T>| Stop { reason, u1: Some(u1.clone()) };
    loop {
        if steps >= opts.max_steps {
            return Ok((traj, stop(StopReason::Other("step cap reached on Sigma_lambda".into()), &u1)));
        }
        if tau >= opts.tau_max {
            return Ok((traj, stop(StopReason::TimeLimit, &u1)));
        }
        h = h.min(opts.h_max).min(opts.tau_max - tau);
        let k1 = match rhs(m, &w, opts.sign, Some(&u1)) {
            Ok(e) => e.dw,
            Err(e) => return Ok((traj, stop(StopReason::Other(e.to_string()), &u1))),
        };
        let u1_ref = u1.clone();
        let attempt = rk::step(&w, &k1, h, |_, ws| rhs(m, ws, opts.sign, Some(&u1_ref)).map(|e| e.dw));
        let st = match attempt {
            Ok(st) => st,
            Err(e) => {
                if h > c::<T>(1e-14) * (T::one() + tau) {
                    h *= c(0.25);
                    continue;
                }
                return Ok((traj, stop(StopReason::Other(e.to_string()), &u1)));
            }
        };
        let err = rk::error_norm(&st.err, &w, &st.x, opts.rtol, opts.atol);
        if err > T::one() {
            h *= rk::factor(err).min(c(0.5));
            continue;
        }
        let (s_new, _) = unpack(m, &st.x);
        let (lam_new, u1_new, neg_new) = match tracked_lambda(m, &s_new.y, Some(&u1)) {
            Ok(v) => v,
            Err(e) => return Ok((traj, stop(StopReason::Other(e.to_string()), &u1))),
        };
        let crossed = lam_new == T::zero() || neg_new != neg;
        let swapped = !crossed && (lam_new > T::zero()) != (lam > T::zero());
        if opts.stop_at_surface && crossed {
            // bisect the step length until |lambda1| is small
            let (mut lo, mut hi) = (T::zero(), h);
            let mut best = (st.x.clone(), lam_new, u1_new.clone(), h);
            for _ in 0..100 {
                if best.1.abs() < hit_tol || hi - lo < c::<T>(1e-15) * h {
                    break;
                }
                let mid = (lo + hi) * c(0.5);
                let sm = rk::step(&w, &k1, mid, |_, ws| rhs(m, ws, opts.sign, Some(&u1_ref)).map(|e| e.dw))?;
                let (sm_state, _) = unpack(m, &sm.x);
                let (lm, um, nm) = tracked_lambda(m, &sm_state.y, Some(&u1))?;
                if nm == neg && lm != T::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
                best = (sm.x, lm, um, mid);
            }
            let (s_hit, t_hit) = unpack(m, &best.0);
            let g = m.g(&s_hit.x, &s_hit.y)?.amax();
            traj.push(t_hit, s_hit, Topology::PostFault, best.1, g);
            if let Some(tv) = traj.tau.as_mut() {
                tv.push(tau + best.3);
            }
            return Ok((traj, stop(StopReason::Surface, &best.2)));
        }
        w = st.x;
        tau += h;
        steps += 1;
        lam = lam_new;
        u1 = u1_new;
        neg = neg_new;
        if opts.project_every > 0 && steps.is_multiple_of(opts.project_every) {
            let (s, _) = unpack(m, &w);
            if let (Ok(g), Ok(dyg)) = (m.g(&s.x, &s.y), m.dyg(&s.y)) {
                if let Some(dy) = pinv_solve(dyg, &g) {
                    let mut yv = w.rows_mut(nx, ny);
                    yv -= dy;
                }
            }
        }
        let (s, t) = unpack(m, &w);
        let g = m.g(&s.x, &s.y).map(|g| g.amax()).unwrap_or_else(|_| c(f64::NAN));
        let dist = (s.z() - &z0).norm();
        traj.push(t, s, Topology::PostFault, lam, g);
        if let Some(tv) = traj.tau.as_mut() {
            tv.push(tau);
        }
        if let Some(ts) = opts.t_stop {
            if dir * (t - ts) >= T::zero() {
                return Ok((traj, stop(StopReason::TimeLimit, &u1)));
            }
        }
        if let Some(r) = opts.max_distance {
            if dist > r {
                return Ok((traj, stop(StopReason::TimeLimit, &u1)));
            }
        }
        if let Some(r) = opts.resume_above {
            if lam.abs() > r && (opts.sign * lam > T::zero() || swapped) {
                return Ok((traj, stop(StopReason::Resume, &u1)));
            }
        }
        h *= rk::factor(err);
    }
}

/// Integrates `Sigma_lambda` on the network `topo` from `from` (which must
/// satisfy `g = 0`), starting the reconstructed clock at `t0`.
pub fn simulate_transformed<T: Real>(
    sc: &Scenario<T>,
    topo: Topology,
    from: &SystemState<T>,
    t0: T,
    opts: &TransformedOptions<T>,
) -> Result<Trajectory<T>> {
    let m = sc.model(topo);
    let g = m.g(&from.x, &from.y)?.amax();
    if g > c(1e-6) {
        return Err(Error::InvalidInitialCondition { f_norm: f64::NAN, g_norm: g.as_f64() });
    }
    let (mut traj, stop) = integrate(&m, from, t0, opts, None)?;
    traj.id = format!("{}:sigma_lambda", sc.name);
    for tp in traj.topology.iter_mut() {
        *tp = topo;
    }
    traj.termination = match stop.reason {
        StopReason::Surface => Termination::SingularSurface,
        StopReason::Resume | StopReason::TimeLimit => Termination::Completed,
        StopReason::Other(msg) => {
            traj.detail = Some(msg);
            Termination::GuardTripped
        }
    };
    Ok(traj)
}
