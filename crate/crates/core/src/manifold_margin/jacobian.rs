//! Jacobian of the `Sigma_lambda` field.
//!
//! With `w = (D_x g) f` and `K = sum_i (lambda1 / lambda_i) u_i v_i^T` the
//! field is `[s lambda1 f; -s K w]`. `D_y g` depends on `y` only and `D_x g`
//! on `x` only, which keeps the blocks below short.

use crate::error::Result;
use crate::grid_model::{jacobian_y_derivative, PowerNetwork};
use crate::model::Model;
use crate::regularizer::{eigendecompose_tracked, eigenvector_derivatives, Eigenstructure};
use crate::scalar::{c, Real};
use crate::singularity::eigenvalue_gradient_y;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedJacobian<T: Real> {
    pub j: DMatrix<T>,
    pub at: DVector<T>,
    pub at_saddle: bool,
}

/// `d((D_x g) f)/dx` with `f` held fixed.
fn dxg_f_x<T: Real>(net: &PowerNetwork<T>, x: &DVector<T>, f: &DVector<T>) -> DMatrix<T> {
    let nb = net.n_bus();
    let nd = net.n_dev();
    let mut h = DMatrix::zeros(2 * nb, 4 * nd);
    for k in 0..nd {
        let (s, co) = (x[k].sin(), x[k].cos());
        let e = x[2 * nd + k];
        let (fd, fe) = (f[k], f[2 * nd + k]);
        for i in 0..nb {
            let ble = net.b_le[(i, k)];
            if ble == T::zero() {
                continue;
            }
            h[(i, k)] = -ble * (e * co * fd + s * fe);
            h[(nb + i, k)] = ble * (e * s * fd - co * fe);
            h[(i, 2 * nd + k)] = -ble * s * fd;
            h[(nb + i, 2 * nd + k)] = -ble * co * fd;
        }
    }
    h
}

/// `(dK/dy_j) w` for one coordinate. `lam1` is the value of `lambda1` used in
/// the explicit factors (zero on the saddle branch).
fn dk_times_w<T: Real>(
    es: &Eigenstructure<T>,
    da: &DMatrix<T>,
    w: &DVector<T>,
    lam1: T,
    m: &Model<T>,
) -> Result<DVector<T>> {
    let n = es.n();
    let (du, dv) = eigenvector_derivatives(es, da, m.thr)?;
    let vw = es.v.transpose() * w;
    let dvw = dv.transpose() * w;
    let dl: Vec<T> = (0..n).map(|i| (es.v.column(i).transpose() * da * es.u.column(i))[(0, 0)]).collect();
    let mut out = du.column(0) * vw[0] + es.u.column(0) * dvw[0];
    for i in 1..n {
        let li = es.lambdas[i];
        let coef = dl[0] / li - lam1 * dl[i] / (li * li);
        out += es.u.column(i) * (coef * vw[i]);
        let r = lam1 / li;
        if r != T::zero() {
            out += (du.column(i) * vw[i] + es.u.column(i) * dvw[i]) * r;
        }
    }
    Ok(out)
}

/// Analytic Jacobian of `Sigma_lambda` at `(x, y)` with orientation `sign`.
///
/// With `at_saddle` the explicit `lambda1` factors are set to zero, which is
/// the exact Jacobian at a point of the pseudo-equilibrium set.
pub fn transformed_jacobian<T: Real>(
    m: &Model<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    sign: T,
    at_saddle: bool,
    prev_u1: Option<&DVector<T>>,
) -> Result<TransformedJacobian<T>> {
    let (nx, ny) = (m.nx(), m.ny());
    let es = eigendecompose_tracked(&m.dyg(y)?, m.thr, prev_u1)?;
    let lam1 = if at_saddle { T::zero() } else { es.lambda1() };
    let f = m.f(x, y)?;
    let (fx, fy) = m.fjac(x, y)?;
    let dxg = m.dxg(x)?;
    let w = &dxg * &f;
    let grad = eigenvalue_gradient_y(m.net, y, &es, 0, m.thr.eps_v)?;
    let k = if at_saddle { es.projector(0) } else { es.regularized_inverse() };

    let mut j = DMatrix::zeros(nx + ny, nx + ny);
    // x rows
    j.view_mut((0, 0), (nx, nx)).copy_from(&(&fx * (sign * lam1)));
    let xy = &f * grad.transpose() + &fy * lam1;
    j.view_mut((0, nx), (nx, ny)).copy_from(&(xy * sign));
    // y rows
    let wx = dxg_f_x(m.net, x, &f) + &dxg * &fx;
    j.view_mut((nx, 0), (ny, nx)).copy_from(&(-(&k * wx) * sign));
    let mut yy = &k * (&dxg * &fy);
    for col in 0..ny {
        let da = jacobian_y_derivative(y, m.net, col, m.thr.eps_v)?;
        if da.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let d = dk_times_w(&es, &da, &w, lam1, m)?;
        let mut cv = yy.column_mut(col);
        cv += d;
    }
    j.view_mut((nx, nx), (ny, ny)).copy_from(&(-yy * sign));
    Ok(TransformedJacobian { j, at: Model::join(x, y), at_saddle })
}

/// Central-difference Jacobian of the `Sigma_lambda` field, the reference
/// the analytic assembly is checked against.
pub fn numeric_transformed_jacobian<T: Real>(
    m: &Model<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    sign: T,
    h: f64,
) -> Result<DMatrix<T>> {
    let (nx, ny) = (m.nx(), m.ny());
    let u1 = eigendecompose_tracked(&m.dyg(y)?, m.thr, None)?.u1();
    let z = Model::join(x, y);
    let field = |z: &DVector<T>| -> Result<DVector<T>> {
        let (xs, ys) = m.split(z);
        let lf = crate::regularizer::sigma_lambda_field(m, &xs, &ys, sign, Some(&u1))?;
        Ok(Model::join(&lf.dx, &lf.dy))
    };
    let mut j = DMatrix::zeros(nx + ny, nx + ny);
    let hh = c::<T>(h);
    for col in 0..nx + ny {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += hh;
        zm[col] -= hh;
        let d = (field(&zp)? - field(&zm)?) / (hh + hh);
        j.set_column(col, &d);
    }
    Ok(j)
}
