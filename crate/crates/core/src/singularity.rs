//! Indicators for the singular surface `S`, the pseudo-equilibrium set `Psi`
//! and the semi-singular set `Xi`.

use crate::error::{Error, Result};
use crate::grid_model::{load_sensitivity_partials, PowerNetwork};
use crate::model::{Model, SystemState};
use crate::regularizer::{eigendecompose, eigendecompose_tracked, Eigenstructure};
use crate::scalar::{c, gaussian, Real};
use nalgebra::DVector;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Regular,
    SingularGeneric,
    PseudoEquilibrium,
    SemiSingularCandidate,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Regular => "Regular",
            Classification::SingularGeneric => "SingularGeneric",
            Classification::PseudoEquilibrium => "PseudoEquilibrium",
            Classification::SemiSingularCandidate => "SemiSingularCandidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularityReport<T: Real> {
    pub lambda1: T,
    pub g_norm: T,
    /// `|u1 v1^T (D_x g) f|`.
    pub psi_residual: T,
    /// `(D_y lambda1) u1`, exact sum; `None` away from the surface.
    pub xi_scalar: Option<T>,
    /// Diagnostic approximation keeping only the `V_x` self terms.
    pub xi_approx: Option<T>,
    pub classification: Classification,
}

/// Residual triple of the pseudo-equilibrium conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiResidual<T> {
    pub g_norm: T,
    pub lambda1: T,
    pub kappa_norm: T,
}

impl<T: Real> PsiResidual<T> {
    pub fn accepted(&self, thr: &crate::Thresholds) -> bool {
        self.g_norm < c(thr.eps_g) && self.lambda1.abs() < c(thr.eps_sing) && self.kappa_norm < c(thr.eps_psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiSingular<T> {
    pub exact: T,
    pub approx: T,
}

/// Minimum-modulus eigenvalue of `D_y g`.
pub fn singularity_indicator<T: Real>(m: &Model<T>, y: &DVector<T>) -> Result<T> {
    Ok(eigendecompose(&m.dyg(y)?, m.thr)?.lambda1())
}

/// `d lambda_i / d y_k = v_i^T (d D_y g / d y_k) u_i` for every `k`.
///
/// `D_y g` depends on `y` only through the constant-power terms of each bus,
/// so each partial touches four entries.
pub fn eigenvalue_gradient_y<T: Real>(
    net: &PowerNetwork<T>,
    y: &DVector<T>,
    es: &Eigenstructure<T>,
    i: usize,
    eps_v: f64,
) -> Result<DVector<T>> {
    let nb = net.n_bus();
    let u = es.u.column(i);
    let v = es.v.column(i);
    let mut grad = DVector::zeros(2 * nb);
    for b in 0..nb {
        if !net.has_constant_power(b) {
            continue;
        }
        let (db, dg) = load_sensitivity_partials(y[b], y[nb + b], net.p[b], net.q[b], eps_v, b)?;
        let diag = v[b] * u[b] + v[nb + b] * u[nb + b];
        let cross = v[nb + b] * u[b] - v[b] * u[nb + b];
        grad[b] = -db.0 * diag + dg.0 * cross;
        grad[nb + b] = -db.1 * diag + dg.1 * cross;
    }
    Ok(grad)
}

/// `(|g|, lambda1, |u1 v1^T (D_x g) f|)`.
pub fn pseudo_equilibrium_residual<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>) -> Result<PsiResidual<T>> {
    let es = eigendecompose(&m.dyg(y)?, m.thr)?;
    psi_with(m, x, y, &es)
}

pub(crate) fn psi_with<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>, es: &Eigenstructure<T>) -> Result<PsiResidual<T>> {
    let g = m.g(x, y)?;
    let w = m.dxg(x)? * m.f(x, y)?;
    let kappa = es.u1() * es.v1().dot(&w);
    Ok(PsiResidual { g_norm: g.amax(), lambda1: es.lambda1(), kappa_norm: kappa.norm() })
}

/// `(D_y lambda1) u1`, meaningful only near the singular surface.
pub fn semi_singular_scalar<T: Real>(m: &Model<T>, y: &DVector<T>) -> Result<SemiSingular<T>> {
    let es = eigendecompose(&m.dyg(y)?, m.thr)?;
    if es.lambda1().abs() >= c(m.thr.eps_near) {
        return Err(Error::InvalidParameter(format!(
            "semi-singular scalar requested at |lambda1| = {:.3e}, not near the singular surface",
            es.lambda1().abs().as_f64()
        )));
    }
    semi_singular_with(m.net, y, &es, m.thr.eps_v)
}

pub(crate) fn semi_singular_with<T: Real>(
    net: &PowerNetwork<T>,
    y: &DVector<T>,
    es: &Eigenstructure<T>,
    eps_v: f64,
) -> Result<SemiSingular<T>> {
    let grad = eigenvalue_gradient_y(net, y, es, 0, eps_v)?;
    let u1 = es.u1();
    let v1 = es.v1();
    let exact = grad.dot(&u1);
    let nb = net.n_bus();
    let mut approx = T::zero();
    for b in 0..nb {
        if !net.has_constant_power(b) {
            continue;
        }
        let (db, _) = load_sensitivity_partials(y[b], y[nb + b], net.p[b], net.q[b], eps_v, b)?;
        approx -= v1[b] * db.0 * u1[b] * u1[b];
    }
    Ok(SemiSingular { exact, approx })
}

/// Full report at one state.
pub fn classify<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>) -> Result<SingularityReport<T>> {
    let es = eigendecompose(&m.dyg(y)?, m.thr)?;
    let psi = psi_with(m, x, y, &es)?;
    let near = es.lambda1().abs() < c(m.thr.eps_near);
    let xi = if near { Some(semi_singular_with(m.net, y, &es, m.thr.eps_v)?) } else { None };
    let classification = if psi.lambda1.abs() >= c(m.thr.eps_sing) {
        Classification::Regular
    } else if psi.kappa_norm < c(m.thr.eps_psi) {
        Classification::PseudoEquilibrium
    } else if xi.is_some_and(|s| s.exact.abs() < c(m.thr.eps_xi)) {
        Classification::SemiSingularCandidate
    } else {
        Classification::SingularGeneric
    };
    Ok(SingularityReport {
        lambda1: psi.lambda1,
        g_norm: psi.g_norm,
        psi_residual: psi.kappa_norm,
        xi_scalar: xi.map(|s| s.exact),
        xi_approx: xi.map(|s| s.approx),
        classification,
    })
}

/// One Newton step on `lambda1(y) = 0` along its gradient.
pub fn project_to_surface<T: Real>(m: &Model<T>, y: &DVector<T>, prev_u1: Option<&DVector<T>>) -> Result<DVector<T>> {
    let es = eigendecompose_tracked(&m.dyg(y)?, m.thr, prev_u1)?;
    let grad = eigenvalue_gradient_y(m.net, y, &es, 0, m.thr.eps_v)?;
    let n2 = grad.norm_squared();
    if n2 == T::zero() {
        return Err(Error::InvalidParameter("lambda1 does not depend on y here".into()));
    }
    Ok(y - grad * (es.lambda1() / n2))
}

/// Near-singular points around `seed`: Gaussian perturbations of `y` with
/// standard deviation `sigma`, each projected back towards `lambda1 = 0` by
/// one Newton step. Points that do not land within `eps_near` are dropped.
pub fn sample_near_singular<T: Real, R: Rng>(
    m: &Model<T>,
    seed: &SystemState<T>,
    count: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<SystemState<T>>> {
    let es0 = eigendecompose(&m.dyg(&seed.y)?, m.thr)?;
    let u0 = es0.u1();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 20 * count {
        attempts += 1;
        let pert = DVector::from_fn(seed.y.len(), |_, _| c::<T>(gaussian(rng) * sigma));
        let y = &seed.y + pert;
        let Ok(yp) = project_to_surface(m, &y, Some(&u0)) else { continue };
        let Ok(l) = singularity_indicator(m, &yp) else { continue };
        if l.abs() < c(m.thr.eps_near) {
            out.push(SystemState::new(seed.x.clone(), yp));
        }
    }
    Ok(out)
}
