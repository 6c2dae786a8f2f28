//! Newton solves on `g = 0` and on the full equilibrium `f = 0, g = 0`.

use crate::error::{Error, Result};
use crate::model::{Model, SystemState};
use crate::scalar::{c, Real};
use nalgebra::{DMatrix, DVector};

/// Result of [`solve_algebraic`].
#[derive(Debug, Clone)]
pub struct AlgebraicSolution<T: Real> {
    pub y: DVector<T>,
    pub iterations: usize,
    pub residual: T,
}

/// Newton on `g(x, y) = 0` in `y` until `|g|_inf < eps_alg`.
pub fn solve_algebraic<T: Real>(m: &Model<T>, x: &DVector<T>, y_guess: &DVector<T>) -> Result<AlgebraicSolution<T>> {
    let tol = c::<T>(m.thr.eps_alg);
    let max_iter = m.thr.newton_max_iter;
    let mut y = y_guess.clone();
    let mut r = m.g(x, &y)?;
    let mut rn = r.amax();
    let first = rn;
    for it in 0..=max_iter {
        if rn < tol {
            return Ok(AlgebraicSolution { y, iterations: it, residual: rn });
        }
        if it == max_iter || !rn.is_finite() || rn > first * c(1e6) + c(1e3) {
            break;
        }
        let step = match m.dyg(&y)?.lu().solve(&r) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => break,
        };
        y -= step;
        r = match m.g(x, &y) {
            Ok(r) => r,
            Err(Error::VoltageCollapseGuard { .. }) => break,
            Err(e) => return Err(e),
        };
        rn = r.amax();
    }
    Err(Error::AlgebraicNoConvergence { iterations: max_iter, residual: rn.as_f64() })
}

/// Stacked `[f; g]` and its Jacobian.
pub(crate) fn full_residual<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let (nx, ny) = (m.nx(), m.ny());
    let f = m.f(x, y)?;
    let g = m.g(x, y)?;
    let (fx, fy) = m.fjac(x, y)?;
    let mut jac = DMatrix::zeros(nx + ny, nx + ny);
    jac.view_mut((0, 0), (nx, nx)).copy_from(&fx);
    jac.view_mut((0, nx), (nx, ny)).copy_from(&fy);
    jac.view_mut((nx, 0), (ny, nx)).copy_from(&m.dxg(x)?);
    jac.view_mut((nx, nx), (ny, ny)).copy_from(&m.dyg(y)?);
    Ok((Model::join(&f, &g), jac))
}

/// Minimum-norm Newton step `J^+ r` through the SVD, so the rotational
/// degeneracy of source-free networks does not stall the iteration.
pub(crate) fn pinv_solve<T: Real>(jac: DMatrix<T>, r: &DVector<T>) -> Option<DVector<T>> {
    let svd = jac.svd(true, true);
    let smax = svd.singular_values.max();
    let s = svd.solve(r, smax * c(1e-13)).ok()?;
    s.iter().all(|v| v.is_finite()).then_some(s)
}

/// Equilibrium of the DAE near `guess` (`|f|_inf, |g|_inf < tol`).
pub fn find_equilibrium<T: Real>(m: &Model<T>, guess: &SystemState<T>, tol: f64) -> Result<SystemState<T>> {
    let nx = m.nx();
    let mut z = guess.z();
    let max_iter = m.thr.newton_max_iter;
    let mut rn = T::max_value().unwrap_or_else(|| c(f64::MAX));
    for _ in 0..=max_iter {
        let (x, y) = m.split(&z);
        let (r, jac) = full_residual(m, &x, &y)?;
        rn = r.amax();
        if rn < c(tol) {
            return Ok(SystemState::new(x, y));
        }
        let dz = pinv_solve(jac, &r).ok_or(Error::NoConvergence {
            what: "equilibrium",
            iterations: 0,
            residual: rn.as_f64(),
        })?;
        // damp large steps so the iterate stays on the intended branch
        let big = dz.rows(0, nx).amax().max(dz.rows(nx, z.len() - nx).amax());
        let damp = if big > c(0.5) { c::<T>(0.5) / big } else { T::one() };
        z -= dz * damp;
    }
    Err(Error::NoConvergence { what: "equilibrium", iterations: max_iter, residual: rn.as_f64() })
}
