//! Local stable manifold of a pseudo-saddle and the margin `C_V`.
//!
//! Near `z_cps` the stable manifold is approximated by the hyperplane
//! `d_p(z) = (z - z_cps)^T eta = 0`, where `eta` is the unit left eigenvector
//! of the transformed Jacobian for its unstable eigenvalue `mu`.

mod jacobian;

pub use jacobian::{numeric_transformed_jacobian, transformed_jacobian, TransformedJacobian};

use crate::error::{Error, Result};
use crate::model::{Model, SystemState};
use crate::scalar::{c, Real};
use crate::simulator::algebraic::pinv_solve;
use crate::simulator::transformed::integrate;
use crate::simulator::{TransformedOptions, Trajectory};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel<T: Real> {
    pub z_cps: DVector<T>,
    pub eta: DVector<T>,
    pub mu: T,
}

/// Eigenvalues of `J` split by the noise floor `eps_eig_rel * |J|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSplit<T: Real> {
    pub positive: Vec<T>,
    pub negative: Vec<T>,
    pub floor: T,
}

pub fn split_spectrum<T: Real>(j: &DMatrix<T>, eps_eig_rel: f64) -> SpectrumSplit<T> {
    let floor = j.norm() * c(eps_eig_rel);
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for l in j.complex_eigenvalues().iter() {
        if l.re > floor {
            positive.push(l.re);
        } else if l.re < -floor {
            negative.push(l.re);
        }
    }
    positive.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    negative.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    SpectrumSplit { positive, negative, floor }
}

/// The single unstable eigenvalue of `j` and its unit left eigenvector.
pub fn unstable_direction<T: Real>(j: &DMatrix<T>, eps_eig_rel: f64) -> Result<(T, DVector<T>)> {
    let sp = split_spectrum(j, eps_eig_rel);
    let mu = match sp.positive.len() {
        0 => return Err(Error::NoUnstableDirection),
        1 => sp.positive[0],
        n => return Err(Error::MultipleUnstable { count: n }),
    };
    let n = j.nrows();
    let a = j.transpose() - DMatrix::identity(n, n) * mu;
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(Error::NoUnstableDirection)?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, T::max_value().unwrap_or_else(|| c(f64::MAX))), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let eta = vt.row(imin).transpose();
    let eta = &eta / eta.norm();
    Ok((mu, eta))
}

/// Orients `eta` so that the SEP has `d_p > 0`.
pub fn build_manifold<T: Real>(z_cps: &DVector<T>, mu: T, eta: &DVector<T>, sep: &SystemState<T>) -> ManifoldModel<T> {
    let mut model = ManifoldModel { z_cps: z_cps.clone(), eta: eta.clone(), mu };
    if manifold_value(&sep.z(), &model) < T::zero() {
        model.eta = -model.eta;
    }
    model
}

/// Builds the model straight from the analytic Jacobian at `z_cps`.
pub fn build_manifold_at<T: Real>(m: &Model<T>, z_cps: &SystemState<T>, sign: T, sep: &SystemState<T>) -> Result<ManifoldModel<T>> {
    let j = transformed_jacobian(m, &z_cps.x, &z_cps.y, sign, true, None)?;
    let (mu, eta) = unstable_direction(&j.j, m.thr.eps_eig_rel)?;
    Ok(build_manifold(&z_cps.z(), mu, &eta, sep))
}

/// `d_p(z) = (z - z_cps)^T eta`.
pub fn manifold_value<T: Real>(z: &DVector<T>, model: &ManifoldModel<T>) -> T {
    (z - &model.z_cps).dot(&model.eta)
}

/// `C_V = d_p(z_f1) / d_p(z_s)`.
pub fn stability_margin<T: Real>(z_f1: &DVector<T>, z_s: &DVector<T>, model: &ManifoldModel<T>) -> Result<T> {
    let ds = manifold_value(z_s, model);
    if ds.abs() < c(1e-9) {
        return Err(Error::DegenerateSep { value: ds.as_f64() });
    }
    Ok(manifold_value(z_f1, model) / ds)
}

/// Residual of `F(z)^T eta = mu d_p(z)` for the linear representation, used
/// to gauge how far a sample lies outside the region where it is accurate.
pub fn invariance_residual<T: Real>(m: &Model<T>, z: &SystemState<T>, sign: T, model: &ManifoldModel<T>) -> Result<T> {
    let lf = crate::regularizer::sigma_lambda_field(m, &z.x, &z.y, sign, None)?;
    let field = Model::join(&lf.dx, &lf.dy);
    Ok(field.dot(&model.eta) - model.mu * manifold_value(&z.z(), model))
}

/// `C_V` along a trajectory, from the clearing sample on.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSeries<T: Real> {
    pub times: Vec<T>,
    pub cv: Vec<T>,
    pub d_p: Vec<T>,
    pub lambda1: Vec<T>,
}

impl<T: Real> MarginSeries<T> {
    /// First time `C_V` turns non-positive, linearly interpolated.
    pub fn cv_zero_crossing(&self) -> Option<T> {
        first_crossing(&self.times, &self.cv)
    }

    /// First sample with `|lambda1| < eps_sing`. A sign change alone is not
    /// used, since it can come from two eigenvalues trading places as the
    /// minimum-modulus one.
    pub fn lambda1_crossing(&self, eps_sing: f64) -> Option<T> {
        self.lambda1.iter().position(|l| l.abs() < c(eps_sing)).map(|i| self.times[i])
    }
}

fn first_crossing<T: Real>(t: &[T], v: &[T]) -> Option<T> {
    if v.first().is_none_or(|v0| *v0 <= T::zero()) {
        return v.first().map(|_| t[0]).filter(|_| v[0] <= T::zero());
    }
    for i in 1..v.len() {
        if v[i] <= T::zero() {
            let a = v[i - 1] / (v[i - 1] - v[i]);
            return Some(t[i - 1] + (t[i] - t[i - 1]) * a);
        }
    }
    None
}

pub fn margin_series<T: Real>(traj: &Trajectory<T>, sep: &SystemState<T>, model: &ManifoldModel<T>) -> Result<MarginSeries<T>> {
    let ds = manifold_value(&sep.z(), model);
    if ds.abs() < c(1e-9) {
        return Err(Error::DegenerateSep { value: ds.as_f64() });
    }
    let start = traj.clearing_index.unwrap_or(0);
    let mut out = MarginSeries { times: vec![], cv: vec![], d_p: vec![], lambda1: vec![] };
    for i in start..traj.len() {
        let d = manifold_value(&traj.states[i].z(), model);
        out.times.push(traj.times[i]);
        out.d_p.push(d);
        out.cv.push(d / ds);
        out.lambda1.push(traj.lambda1[i]);
    }
    Ok(out)
}

/// Right eigenvector of `j` for its most negative eigenvalue above the noise
/// floor.
pub fn stable_direction<T: Real>(j: &DMatrix<T>, eps_eig_rel: f64) -> Result<(T, DVector<T>)> {
    let sp = split_spectrum(j, eps_eig_rel);
    let nu = *sp.negative.first().ok_or(Error::NotASaddle { detail: "no stable eigenvalue".into() })?;
    let n = j.nrows();
    let svd = (j - DMatrix::identity(n, n) * nu).svd(false, true);
    let vt = svd.v_t.ok_or(Error::NotASaddle { detail: "SVD failed".into() })?;
    let imin = svd.singular_values.imin();
    let r = vt.row(imin).transpose();
    Ok((nu, &r / r.norm()))
}

/// Settings for [`stable_manifold_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSampling {
    /// Offset from `z_cps` along the stable eigenvector.
    pub offset: f64,
    /// Backward runs stop at this distance from `z_cps`.
    pub radius: f64,
    /// Samples closer than this to `z_cps` are dropped.
    pub min_distance: f64,
}

impl Default for ManifoldSampling {
    fn default() -> Self {
        Self { offset: 1e-6, radius: 0.05, min_distance: 1e-4 }
    }
}

/// A point near `W^s` with its distance to `z_cps` and `|d_p|` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSample<T> {
    pub distance: T,
    pub d_p: T,
}

/// Samples of the stable manifold of the pseudo-saddle. `Sigma_lambda` is run
/// backwards from `z_cps +- offset r`, `r` the stable right eigenvector, after
/// a minimum-norm projection onto `g = 0`. Going backwards the component
/// along the unstable direction decays, so the runs hug `W^s` while moving
/// away from `z_cps`.
pub fn stable_manifold_samples<T: Real>(
    m: &Model<T>,
    model: &ManifoldModel<T>,
    sign: T,
    opts: &ManifoldSampling,
) -> Result<Vec<ManifoldSample<T>>> {
    let (x, y) = m.split(&model.z_cps);
    let j = transformed_jacobian(m, &x, &y, sign, true, None)?;
    let (_, r) = stable_direction(&j.j, m.thr.eps_eig_rel)?;
    let mut out = Vec::new();
    for side in [T::one(), -T::one()] {
        let mut z = &model.z_cps + &r * (side * c::<T>(opts.offset));
        for _ in 0..3 {
            let (xs, ys) = m.split(&z);
            let gv = m.g(&xs, &ys)?;
            let mut a = DMatrix::zeros(m.ny(), m.nx() + m.ny());
            a.view_mut((0, 0), (m.ny(), m.nx())).copy_from(&m.dxg(&xs)?);
            a.view_mut((0, m.nx()), (m.ny(), m.ny())).copy_from(&m.dyg(&ys)?);
            let dz = pinv_solve(a, &gv).ok_or(Error::NoConvergence { what: "manifold start projection", iterations: 3, residual: gv.amax().as_f64() })?;
            z -= dz;
        }
        let (xs, ys) = m.split(&z);
        let start = SystemState::new(xs, ys);
        let topts = TransformedOptions {
            sign: -sign,
            max_distance: Some(c(opts.radius)),
            ..TransformedOptions::default()
        };
        let (traj, _) = integrate(m, &start, T::zero(), &topts, None)?;
        for s in &traj.states {
            let zz = s.z();
            let d = (&zz - &model.z_cps).norm();
            if d >= c(opts.min_distance) {
                out.push(ManifoldSample { distance: d, d_p: manifold_value(&zz, model).abs() });
            }
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln |d_p|` on `ln distance`.
pub fn error_law_slope<T: Real>(samples: &[ManifoldSample<T>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.d_p > T::zero() && s.distance > T::zero())
        .map(|s| (s.distance.as_f64().ln(), s.d_p.as_f64().ln()))
        .collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return None;
    }
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
