//! Minimal polar Newton power flow used to initialize fixtures.

use crate::error::{Error, Result};
use crate::scalar::{c, cabs, cpolar, Real};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// Data for one bus. `p`, `q` are net injections (generation minus
/// load); `v`, `angle` are used only where the bus kind fixes them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfBus<T> {
    pub kind: BusKind,
    pub p: T,
    pub q: T,
    pub v: T,
    pub angle: T,
}

/// Complex power injected at every bus for voltages `v`.
pub fn injections<T: Real>(y: &DMatrix<Complex<T>>, v: &DVector<Complex<T>>) -> DVector<Complex<T>> {
    let i = y * v;
    v.zip_map(&i, |a, b| a * b.conj())
}

/// Solves the power flow; returns complex bus voltages.
pub fn solve_power_flow<T: Real>(
    y: &DMatrix<Complex<T>>,
    buses: &[PfBus<T>],
    tol: f64,
    max_iter: usize,
) -> Result<DVector<Complex<T>>> {
    let n = buses.len();
    if y.nrows() != n || y.ncols() != n {
        return Err(Error::Dimension("admittance matrix does not match bus list".into()));
    }
    if buses.iter().filter(|b| b.kind == BusKind::Slack).count() != 1 {
        return Err(Error::InvalidParameter("power flow needs exactly one slack bus".into()));
    }
    let ang: Vec<usize> = (0..n).filter(|&i| buses[i].kind != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| buses[i].kind == BusKind::Pq).collect();
    let mut vm: Vec<T> = buses.iter().map(|b| if b.kind == BusKind::Pq { T::one() } else { b.v }).collect();
    let mut va: Vec<T> = buses.iter().map(|b| if b.kind == BusKind::Slack { b.angle } else { T::zero() }).collect();
    let na = ang.len();
    let nm = mag.len();
    let mut last = f64::INFINITY;
    for it in 0..=max_iter {
        let v = DVector::from_fn(n, |i, _| cpolar(vm[i], va[i]));
        let s = injections(y, &v);
        let mut mis = DVector::zeros(na + nm);
        for (r, &i) in ang.iter().enumerate() {
            mis[r] = s[i].re - buses[i].p;
        }
        for (r, &i) in mag.iter().enumerate() {
            mis[na + r] = s[i].im - buses[i].q;
        }
        last = mis.amax().as_f64();
        if last < tol {
            return Ok(v);
        }
        if it == max_iter {
            break;
        }
        let ibus = y * &v;
        let j = Complex::new(T::zero(), T::one());
        let vn = v.map(|a| a / cabs(a));
        let mut ds_da = DMatrix::zeros(n, n);
        let mut ds_dm = DMatrix::zeros(n, n);
        for r in 0..n {
            for col in 0..n {
                let mut a = -y[(r, col)] * v[col];
                let mut b = y[(r, col)] * vn[col];
                if r == col {
                    a += ibus[r];
                    b = b.conj() * v[r] + ibus[r].conj() * vn[r];
                } else {
                    b = b.conj() * v[r];
                }
                ds_da[(r, col)] = j * v[r] * a.conj();
                ds_dm[(r, col)] = b;
            }
        }
        let mut jac = DMatrix::zeros(na + nm, na + nm);
        for (r, &i) in ang.iter().enumerate() {
            for (q, &k) in ang.iter().enumerate() {
                jac[(r, q)] = ds_da[(i, k)].re;
            }
            for (q, &k) in mag.iter().enumerate() {
                jac[(r, na + q)] = ds_dm[(i, k)].re;
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (q, &k) in ang.iter().enumerate() {
                jac[(na + r, q)] = ds_da[(i, k)].im;
            }
            for (q, &k) in mag.iter().enumerate() {
                jac[(na + r, na + q)] = ds_dm[(i, k)].im;
            }
        }
        let dx = jac.lu().solve(&(-mis)).ok_or(Error::NoConvergence {
            what: "power flow",
            iterations: it,
            residual: last,
        })?;
        for (r, &i) in ang.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag.iter().enumerate() {
            vm[i] += dx[na + r];
            if vm[i] < c(0.05) {
                vm[i] = c(0.05);
            }
        }
    }
    Err(Error::NoConvergence {
        what: "power flow",
        iterations: max_iter,
        residual: last,
    })
}
