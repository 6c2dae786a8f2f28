//! Dormand-Prince 5(4) embedded pair.

use crate::error::Result;
use crate::scalar::{c, Real};
use nalgebra::DVector;

pub(crate) const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

pub(crate) struct Step<T: Real> {
    pub x: DVector<T>,
    pub err: DVector<T>,
}

/// One step from `x` with known derivative `k1`. `rhs(stage, x_stage)` is
/// called for stages 1..=6; stage 6 is evaluated at the returned point.
pub(crate) fn step<T: Real, F>(x: &DVector<T>, k1: &DVector<T>, h: T, mut rhs: F) -> Result<Step<T>>
where
    F: FnMut(usize, &DVector<T>) -> Result<DVector<T>>,
{
    let mut k: Vec<DVector<T>> = Vec::with_capacity(7);
    k.push(k1.clone());
    for s in 1..7 {
        let mut xs = x.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                xs.axpy(h * c::<T>(a), kj, T::one());
            }
        }
        k.push(rhs(s, &xs)?);
        if s == 6 {
            let mut err = DVector::zeros(x.len());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err.axpy(h * c::<T>(E[j]), kj, T::one());
                }
            }
            return Ok(Step { x: xs, err });
        }
    }
    unreachable!("loop returns at the last stage")
}

/// Weighted RMS error norm.
pub(crate) fn error_norm<T: Real>(err: &DVector<T>, x0: &DVector<T>, x1: &DVector<T>, rtol: f64, atol: f64) -> T {
    if err.is_empty() {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..err.len() {
        let sc = c::<T>(atol) + c::<T>(rtol) * x0[i].abs().max(x1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / c(err.len() as f64)).sqrt()
}

/// Step-size factor from an error norm, clamped to [0.2, 5].
pub(crate) fn factor<T: Real>(err: T) -> T {
    if err <= T::zero() {
        return c(5.0);
    }
    let f = c::<T>(0.9) * err.powf(c(-0.2));
    f.max(c(0.2)).min(c(5.0))
}
