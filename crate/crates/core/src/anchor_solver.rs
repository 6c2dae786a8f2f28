//! Singular-surface contact and the controlling pseudo-saddle.
//!
//! The controlling pseudo-saddle is taken as the point of the
//! pseudo-equilibrium set nearest (plain 2-norm over `z = [x; y]`) to the
//! contact point `z_sp` of a collapsing trajectory.

use crate::error::{Error, Result};
use crate::manifold_margin::{split_spectrum, transformed_jacobian, unstable_direction};
use crate::model::{Model, SystemState};
use crate::regularizer::{eigendecompose_tracked, Eigenstructure};
use crate::scalar::{c, gaussian, Real};
use crate::simulator::algebraic::pinv_solve;
use crate::simulator::transformed::{integrate, StopReason};
use crate::simulator::{Scenario, Termination, TransformedOptions, Trajectory};
use crate::singularity::{eigenvalue_gradient_y, PsiResidual};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SingularHit<T: Real> {
    pub z_sp: SystemState<T>,
    pub t_hit: T,
    pub lambda1_at_hit: T,
    pub trajectory_id: String,
}

/// Contact point of a trajectory that ended on the singular surface.
///
/// The simulator already refines the last sample; if it is not within
/// `eps_near * 1e-2` the last step is re-integrated on `Sigma_lambda` with
/// surface detection.
pub fn detect_singular_hit<T: Real>(sc: &Scenario<T>, traj: &Trajectory<T>) -> Result<SingularHit<T>> {
    if traj.termination != Termination::SingularSurface {
        return Err(Error::NoSingularContact { reason: traj.termination.to_string() });
    }
    let n = traj.len();
    let last = traj.last().ok_or(Error::NoSingularContact { reason: "empty trajectory".into() })?;
    let tol = c::<T>(sc.thresholds.eps_near * 1e-2);
    let hit = |z: &SystemState<T>, t: T, l: T| SingularHit {
        z_sp: z.clone(),
        t_hit: t,
        lambda1_at_hit: l,
        trajectory_id: traj.id.clone(),
    };
    let l_last = traj.lambda1[n - 1];
    if l_last.abs() < tol || n < 2 {
        return Ok(hit(last, traj.times[n - 1], l_last));
    }
    let topo = traj.topology[n - 1];
    let m = sc.model(topo);
    let prev = &traj.states[n - 2];
    let (t0, t1) = (traj.times[n - 2], traj.times[n - 1]);
    let opts = TransformedOptions {
        sign: traj.lambda1[n - 2].signum(),
        stop_at_surface: true,
        t_stop: Some(t1 + (t1 - t0)),
        h_max: c((t1 - t0).as_f64().max(1e-6)),
        ..TransformedOptions::default()
    };
    let (leg, stop) = integrate(&m, prev, t0, &opts, None)?;
    let i = leg.len() - 1;
    if stop.reason == StopReason::Surface || leg.lambda1[i].abs() < l_last.abs() {
        return Ok(hit(&leg.states[i], leg.times[i], leg.lambda1[i]));
    }
    Ok(hit(last, t1, l_last))
}

/// Options for [`controlling_pseudo_saddle`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleOptions {
    pub max_iter: usize,
    /// Bound on the norm of the projected distance gradient.
    pub stationarity: f64,
    pub restarts: usize,
    pub restart_sigma: f64,
    pub seed: u64,
    /// Orientation of `Sigma_lambda` used for the saddle spectrum.
    pub sign: f64,
    /// Relative step of the finite-difference gradient of the `kappa` row.
    pub fd_step: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { max_iter: 200, stationarity: 1e-6, restarts: 5, restart_sigma: 0.01, seed: 0, sign: 1.0, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSaddle<T: Real> {
    pub z_cps: SystemState<T>,
    pub mu_unstable: T,
    pub mu_stable: T,
    /// Unit left eigenvector for `mu_unstable`.
    pub eta: DVector<T>,
    pub residuals: PsiResidual<T>,
    pub distance: T,
    pub stationarity: T,
    pub iterations: usize,
}

/// Constraint vector `[g; lambda1; kappa]` with `kappa = v1^T (D_x g) f`.
pub(crate) struct Constraints<T: Real> {
    pub value: DVector<T>,
    pub es: Eigenstructure<T>,
}

/// Sign of the eigenvector pair aligned with `u_ref`, so `kappa` is a smooth
/// function of `z`.
fn kappa_of<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>, es: &Eigenstructure<T>, u_ref: Option<&DVector<T>>) -> Result<T> {
    let w = m.dxg(x)? * m.f(x, y)?;
    let k = es.v1().dot(&w);
    let flip = u_ref.is_some_and(|u| es.u1().dot(u) < T::zero());
    Ok(if flip { -k } else { k })
}

pub(crate) fn constraints<T: Real>(m: &Model<T>, z: &DVector<T>, u_ref: Option<&DVector<T>>) -> Result<Constraints<T>> {
    let (x, y) = m.split(z);
    let ny = m.ny();
    let es = eigendecompose_tracked(&m.dyg(&y)?, m.thr, u_ref)?;
    let mut value = DVector::zeros(ny + 2);
    value.rows_mut(0, ny).copy_from(&m.g(&x, &y)?);
    value[ny] = es.lambda1();
    value[ny + 1] = kappa_of(m, &x, &y, &es, u_ref.or(Some(&es.u1())))?;
    Ok(Constraints { value, es })
}

/// Jacobian of the constraint vector: analytic for `g` and `lambda1`,
/// central differences for `kappa`.
pub(crate) fn constraint_jacobian<T: Real>(m: &Model<T>, z: &DVector<T>, es: &Eigenstructure<T>, fd_step: f64) -> Result<DMatrix<T>> {
    let (nx, ny) = (m.nx(), m.ny());
    let (x, y) = m.split(z);
    let mut a = DMatrix::zeros(ny + 2, nx + ny);
    a.view_mut((0, 0), (ny, nx)).copy_from(&m.dxg(&x)?);
    a.view_mut((0, nx), (ny, ny)).copy_from(&m.dyg(&y)?);
    let grad = eigenvalue_gradient_y(m.net, &y, es, 0, m.thr.eps_v)?;
    a.view_mut((ny, nx), (1, ny)).copy_from(&grad.transpose());
    let u1 = es.u1();
    for j in 0..nx + ny {
        let h = c::<T>(fd_step) * (T::one() + z[j].abs());
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let kp = {
            let (xp, yp) = m.split(&zp);
            let e = eigendecompose_tracked(&m.dyg(&yp)?, m.thr, Some(&u1))?;
            kappa_of(m, &xp, &yp, &e, Some(&u1))?
        };
        let km = {
            let (xm, ym) = m.split(&zm);
            let e = eigendecompose_tracked(&m.dyg(&ym)?, m.thr, Some(&u1))?;
            kappa_of(m, &xm, &ym, &e, Some(&u1))?
        };
        a[(ny + 1, j)] = (kp - km) / (h + h);
    }
    Ok(a)
}

fn residual_triple<T: Real>(m: &Model<T>, cv: &DVector<T>) -> PsiResidual<T> {
    let ny = m.ny();
    PsiResidual { g_norm: cv.rows(0, ny).amax(), lambda1: cv[ny], kappa_norm: cv[ny + 1].abs() }
}

fn tight<T: Real>(m: &Model<T>, r: &PsiResidual<T>) -> bool {
    let t = m.thr;
    r.g_norm < c(0.1 * t.eps_g) && r.lambda1.abs() < c(0.1 * t.eps_sing) && r.kappa_norm < c(0.1 * t.eps_psi)
}

/// Projected gradient `(I - A^+ A)(z - z_sp)`.
fn projected_gradient<T: Real>(a: &DMatrix<T>, r: &DVector<T>) -> DVector<T> {
    match pinv_solve(a.transpose(), r) {
        Some(nu) => r - a.transpose() * nu,
        None => r.clone(),
    }
}

struct LocalResult<T: Real> {
    z: DVector<T>,
    residuals: PsiResidual<T>,
    stationarity: T,
    iterations: usize,
    converged: bool,
}

/// Gauss-Newton projection of `z_sp` onto the constraint set from `start`.
fn local_solve<T: Real>(m: &Model<T>, z_sp: &DVector<T>, start: &DVector<T>, opts: &SaddleOptions) -> Result<LocalResult<T>> {
    let mut z = start.clone();
    let mut u_ref: Option<DVector<T>> = None;
    let mut best: Option<LocalResult<T>> = None;
    for it in 0..=opts.max_iter {
        let cons = constraints(m, &z, u_ref.as_ref())?;
        let u1 = cons.es.u1();
        let a = constraint_jacobian(m, &z, &cons.es, opts.fd_step)?;
        let res = residual_triple(m, &cons.value);
        let r = &z - z_sp;
        let pg = projected_gradient(&a, &r).norm();
        let cur = LocalResult { z: z.clone(), residuals: res, stationarity: pg, iterations: it, converged: false };
        if tight(m, &res) && pg < c(opts.stationarity) {
            return Ok(LocalResult { converged: true, ..cur });
        }
        let better = best.as_ref().is_none_or(|b| {
            let score = |l: &LocalResult<T>| l.residuals.g_norm + l.residuals.lambda1.abs() + l.residuals.kappa_norm + l.stationarity;
            score(&cur) < score(b)
        });
        if better {
            best = Some(cur);
        }
        if it == opts.max_iter {
            break;
        }
        // min |z + dz - z_sp| subject to c + A dz = 0
        let rhs = &a * &r - &cons.value;
        let Some(nu) = pinv_solve(a.clone(), &rhs) else { break };
        let mut dz = nu - &r;
        let big = dz.amax();
        if big > c(0.2) {
            dz *= c::<T>(0.2) / big;
        }
        z += dz;
        u_ref = Some(u1);
    }
    Ok(best.expect("at least one iterate"))
}

/// Nearest pseudo-equilibrium to the contact point, checked to be a saddle
/// of the transformed field.
pub fn controlling_pseudo_saddle<T: Real>(m: &Model<T>, hit: &SingularHit<T>, opts: &SaddleOptions) -> Result<PseudoSaddle<T>> {
    let z_sp = hit.z_sp.z();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut attempt = local_solve(m, &z_sp, &z_sp, opts)?;
    let mut restarts = 0;
    while !attempt.converged && restarts < opts.restarts {
        restarts += 1;
        let start = z_sp.map(|v| v + c::<T>(opts.restart_sigma * gaussian(&mut rng)));
        if let Ok(a) = local_solve(m, &z_sp, &start, opts) {
            if a.converged {
                attempt = a;
            }
        }
    }
    if !attempt.converged {
        let r = attempt.residuals;
        return Err(Error::NoConvergence {
            what: "controlling pseudo-saddle",
            iterations: opts.max_iter,
            residual: (r.g_norm.max(r.lambda1.abs()).max(r.kappa_norm).max(attempt.stationarity)).as_f64(),
        });
    }
    let (x, y) = m.split(&attempt.z);
    let sign = c::<T>(opts.sign);
    let j = transformed_jacobian(m, &x, &y, sign, true, None)?;
    let sp = split_spectrum(&j.j, m.thr.eps_eig_rel);
    if sp.positive.len() != 1 || sp.negative.len() != 1 {
        return Err(Error::NotASaddle {
            detail: format!(
                "{} positive and {} negative eigenvalues above {:.3e}",
                sp.positive.len(),
                sp.negative.len(),
                sp.floor.as_f64()
            ),
        });
    }
    let (mu, eta) = unstable_direction(&j.j, m.thr.eps_eig_rel)?;
    Ok(PseudoSaddle {
        distance: (&attempt.z - &z_sp).norm(),
        z_cps: SystemState::new(x, y),
        mu_unstable: mu,
        mu_stable: sp.negative[0],
        eta,
        residuals: attempt.residuals,
        stationarity: attempt.stationarity,
        iterations: attempt.iterations,
    })
}

/// Newton restoration of `z` onto the pseudo-equilibrium set with the listed
/// coordinates held fixed. Returns `None` if it does not reach the
/// thresholds within `max_iter` steps.
pub fn restore_to_psi<T: Real>(m: &Model<T>, z: &DVector<T>, fixed: &[usize], max_iter: usize) -> Result<Option<DVector<T>>> {
    let n = z.len();
    let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
    let mut z = z.clone();
    let mut u_ref: Option<DVector<T>> = None;
    for _ in 0..max_iter {
        let cons = constraints(m, &z, u_ref.as_ref())?;
        if tight(m, &residual_triple(m, &cons.value)) {
            return Ok(Some(z));
        }
        let a = constraint_jacobian(m, &z, &cons.es, 1e-7)?;
        let af = a.select_columns(&free);
        let Some(dz) = pinv_solve(af, &cons.value) else { return Ok(None) };
        let big = dz.amax();
        let damp = if big > c(0.2) { c::<T>(0.2) / big } else { T::one() };
        for (k, &i) in free.iter().enumerate() {
            z[i] -= dz[k] * damp;
        }
        u_ref = Some(cons.es.u1());
    }
    Ok(None)
}
