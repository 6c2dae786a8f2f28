//! Reduced network model and the algebraic equations `0 = g(x, y)`.
//!
//! The algebraic vector is `y = [V_x; V_y]` over the retained buses, with
//! device terminal buses first and load/source buses after. Rows of `g` are
//! ordered the same way: first the imaginary-part current balance
//! `B V_x + G V_y + I_Gx - I_Lx`, then the real-part balance
//! `G V_x - B V_y + I_Gy - I_Ly`. With this ordering `D_y g` is the nearly
//! symmetric block matrix `[[B - b, G - g], [G + g, -B - b]]`.
//!
//! Sign convention: `p`, `q` are constant-power *injections*. A load that
//! consumes `P + jQ` appears as `-(rho P) - j(rho Q)`, a grid-following
//! converter exporting power appears with positive `p`. With this convention
//! the current term `I_L = conj(S) / conj(V)` enters `g` with a minus sign, so
//! the residual vanishes at a power-flow solution where loads draw current
//! out of the network node.

use crate::error::{Error, Result};
use crate::scalar::{c, cabs, Real};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

/// Reduced network: dense `G + jB` over retained buses plus load data.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork<T: Real> {
    /// Device terminal buses (one per machine or grid-forming converter).
    pub n_gen: usize,
    /// Remaining retained buses (loads, converters, fixed sources).
    pub n_load: usize,
    pub b: DMatrix<T>,
    pub g: DMatrix<T>,
    /// Couples device EMFs to bus injections, `n_bus x n_dev`.
    pub b_le: DMatrix<T>,
    /// Constant-power active injection per bus (already scaled by rho).
    pub p: DVector<T>,
    /// Constant-power reactive injection per bus (already scaled by rho).
    pub q: DVector<T>,
    /// Constant-power share per bus, kept for reporting.
    pub rho: DVector<T>,
    /// Constant-impedance load admittance per bus, already folded into `g`/`b`.
    pub yz_diag: DVector<Complex<T>>,
    /// Norton current `V_src / (j x_src)` injected by fixed voltage sources.
    pub source: DVector<Complex<T>>,
    /// Synchronous speed in rad/s.
    pub base_frequency: T,
}

impl<T: Real> PowerNetwork<T> {
    /// Builds a network from a reduced admittance matrix `Y_red = G + jB`.
    ///
    /// `x_internal` holds the internal reactance of every device in order; the
    /// first `x_internal.len()` buses are their terminals.
    #[allow(clippy::too_many_arguments)]
    pub fn from_admittance(
        y_red: &DMatrix<Complex<T>>,
        x_internal: &[T],
        p: DVector<T>,
        q: DVector<T>,
        rho: DVector<T>,
        yz_diag: DVector<Complex<T>>,
        source: DVector<Complex<T>>,
        base_frequency: T,
    ) -> Result<Self> {
        let nb = y_red.nrows();
        let nd = x_internal.len();
        if nd > nb {
            return Err(Error::Dimension(format!(
                "{nd} devices but only {nb} retained buses"
            )));
        }
        let mut b_le = DMatrix::zeros(nb, nd);
        for (k, &xk) in x_internal.iter().enumerate() {
            if xk <= T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "device {k}: internal reactance must be positive"
                )));
            }
            b_le[(k, k)] = T::one() / xk;
        }
        let net = Self {
            n_gen: nd,
            n_load: nb - nd,
            b: y_red.map(|v| v.im),
            g: y_red.map(|v| v.re),
            b_le,
            p,
            q,
            rho,
            yz_diag,
            source,
            base_frequency,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn n_bus(&self) -> usize {
        self.n_gen + self.n_load
    }

    pub fn n_dev(&self) -> usize {
        self.b_le.ncols()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let nb = self.n_bus();
        let square = |m: &DMatrix<T>| m.nrows() == nb && m.ncols() == nb;
        if !square(&self.b) || !square(&self.g) {
            return Err(Error::Dimension("B and G must be n_bus x n_bus".into()));
        }
        if self.b_le.nrows() != nb {
            return Err(Error::Dimension("B_LE row count differs from bus count".into()));
        }
        for v in [&self.p, &self.q, &self.rho] {
            if v.len() != nb {
                return Err(Error::Dimension("per-bus vector has wrong length".into()));
            }
        }
        if self.yz_diag.len() != nb || self.source.len() != nb {
            return Err(Error::Dimension("per-bus complex vector has wrong length".into()));
        }
        let tol = c::<T>(1e-9) * (T::one() + self.b.amax());
        for i in 0..nb {
            for j in 0..i {
                if (self.b[(i, j)] - self.b[(j, i)]).abs() > tol {
                    return Err(Error::InvalidParameter(format!(
                        "B is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        for (i, r) in self.rho.iter().enumerate() {
            if *r < T::zero() || *r > T::one() {
                return Err(Error::InvalidParameter(format!("rho[{i}] outside [0, 1]")));
            }
        }
        for k in 0..self.n_gen {
            if self.p[k] != T::zero() || self.q[k] != T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "constant-power injection at device terminal bus {k}"
                )));
            }
        }
        Ok(())
    }

    /// Whether bus `i` carries a constant-power term (and hence needs the
    /// voltage floor).
    pub(crate) fn has_constant_power(&self, i: usize) -> bool {
        self.p[i] != T::zero() || self.q[i] != T::zero()
    }
}

/// Eliminates every bus not listed in `retained`.
///
/// Returns `Y_rr - Y_re Y_ee^{-1} Y_er` with rows/columns in the order of
/// `retained`.
pub fn kron_reduce<T: Real>(
    y_full: &DMatrix<Complex<T>>,
    retained: &[usize],
) -> Result<DMatrix<Complex<T>>> {
    let n = y_full.nrows();
    if y_full.ncols() != n {
        return Err(Error::Dimension("admittance matrix must be square".into()));
    }
    let mut keep = vec![false; n];
    for &r in retained {
        if r >= n || keep[r] {
            return Err(Error::Dimension(format!("retained index {r} invalid or repeated")));
        }
        keep[r] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|i| !keep[*i]).collect();
    let nr = retained.len();
    let yrr = DMatrix::from_fn(nr, nr, |i, j| y_full[(retained[i], retained[j])]);
    if elim.is_empty() {
        return Ok(yrr);
    }
    let ne = elim.len();
    let yee = DMatrix::from_fn(ne, ne, |i, j| y_full[(elim[i], elim[j])]);
    let yre = DMatrix::from_fn(nr, ne, |i, j| y_full[(retained[i], elim[j])]);
    let yer = DMatrix::from_fn(ne, nr, |i, j| y_full[(elim[i], retained[j])]);

    let inv = yee
        .clone()
        .try_inverse()
        .ok_or(Error::SingularElimination { cond: f64::INFINITY })?;
    let norm1 = |m: &DMatrix<Complex<T>>| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().fold(T::zero(), |a, v| a + cabs(*v)))
            .fold(T::zero(), |a, v| if v > a { v } else { a })
    };
    let cond = norm1(&yee) * norm1(&inv);
    let limit = T::one() / (T::epsilon() * c(1e4));
    if !(cond < limit) {
        return Err(Error::SingularElimination { cond: cond.as_f64() });
    }
    Ok(yrr - yre * inv * yer)
}

/// Constant-impedance share of a load: `(1 - rho) conj(S_L) / |V_L0|^2`.
///
/// `s_l` is the consumed complex power, so the result is the load admittance.
pub fn build_constant_impedance_loads<T: Real>(
    s_l: &[Complex<T>],
    rho: &[T],
    v_l0: &[Complex<T>],
) -> Result<Vec<Complex<T>>> {
    if s_l.len() != rho.len() || s_l.len() != v_l0.len() {
        return Err(Error::Dimension("load vectors differ in length".into()));
    }
    s_l.iter()
        .zip(rho)
        .zip(v_l0)
        .enumerate()
        .map(|(i, ((s, r), v))| {
            let mag2 = v.norm_sqr();
            if mag2 == T::zero() {
                return Err(Error::ZeroBaseVoltage { bus: i });
            }
            Ok(s.conj() * (T::one() - *r) / mag2)
        })
        .collect()
}

/// Load-current components `(I_Lx, I_Ly)` of the constant-power terms.
pub fn load_currents<T: Real>(
    y: &DVector<T>,
    net: &PowerNetwork<T>,
    eps_v: f64,
) -> Result<(DVector<T>, DVector<T>)> {
    let nb = net.n_bus();
    check_y_len(y, nb)?;
    let floor = c::<T>(eps_v);
    let mut ilx = DVector::zeros(nb);
    let mut ily = DVector::zeros(nb);
    for i in 0..nb {
        if !net.has_constant_power(i) {
            continue;
        }
        let (vx, vy) = (y[i], y[nb + i]);
        let r2 = vx * vx + vy * vy;
        if r2 < floor * floor {
            return Err(Error::VoltageCollapseGuard {
                bus: i,
                magnitude: r2.sqrt().as_f64(),
            });
        }
        let (p, q) = (net.p[i], net.q[i]);
        ilx[i] = (p * vy - q * vx) / r2;
        ily[i] = (p * vx + q * vy) / r2;
    }
    Ok((ilx, ily))
}

/// Stacked residual of the network equations.
pub fn algebraic_residual<T: Real>(
    x: &DVector<T>,
    y: &DVector<T>,
    net: &PowerNetwork<T>,
    eps_v: f64,
) -> Result<DVector<T>> {
    let nb = net.n_bus();
    let nd = net.n_dev();
    check_x_len(x, nd)?;
    let (ilx, ily) = load_currents(y, net, eps_v)?;
    let vx = y.rows(0, nb);
    let vy = y.rows(nb, nb);
    let delta = x.rows(0, nd);
    let e = x.rows(2 * nd, nd);
    let ecos = DVector::from_fn(nd, |k, _| e[k] * delta[k].cos());
    let esin = DVector::from_fn(nd, |k, _| e[k] * delta[k].sin());
    let igx = &net.b_le * ecos;
    let igy = -(&net.b_le * esin);
    let mut r = DVector::zeros(2 * nb);
    let top = &net.b * vx + &net.g * vy + igx - ilx;
    let bot = &net.g * vx - &net.b * vy + igy - ily;
    for i in 0..nb {
        // fixed sources enter like device currents: -Im in the first block, -Re in the second
        r[i] = top[i] - net.source[i].im;
        r[nb + i] = bot[i] - net.source[i].re;
    }
    Ok(r)
}

/// Diagonal load-sensitivity terms `(b_ii, g_ii)`.
pub fn load_sensitivity_diagonals<T: Real>(
    y: &DVector<T>,
    net: &PowerNetwork<T>,
    eps_v: f64,
) -> Result<(DVector<T>, DVector<T>)> {
    let nb = net.n_bus();
    check_y_len(y, nb)?;
    let floor = c::<T>(eps_v);
    let two = c::<T>(2.0);
    let mut bd = DVector::zeros(nb);
    let mut gd = DVector::zeros(nb);
    for i in 0..nb {
        if !net.has_constant_power(i) {
            continue;
        }
        let (vx, vy) = (y[i], y[nb + i]);
        let r2 = vx * vx + vy * vy;
        if r2 < floor * floor {
            return Err(Error::VoltageCollapseGuard {
                bus: i,
                magnitude: r2.sqrt().as_f64(),
            });
        }
        let (p, q) = (net.p[i], net.q[i]);
        let r4 = r2 * r2;
        bd[i] = (q * (vx * vx - vy * vy) - two * p * vx * vy) / r4;
        gd[i] = (p * (vx * vx - vy * vy) + two * q * vx * vy) / r4;
    }
    Ok((bd, gd))
}

/// `D_y g = [[B - b, G - g], [G + g, -B - b]]`.
pub fn jacobian_y<T: Real>(y: &DVector<T>, net: &PowerNetwork<T>, eps_v: f64) -> Result<DMatrix<T>> {
    let nb = net.n_bus();
    let (bd, gd) = load_sensitivity_diagonals(y, net, eps_v)?;
    let mut j = DMatrix::zeros(2 * nb, 2 * nb);
    j.view_mut((0, 0), (nb, nb)).copy_from(&net.b);
    j.view_mut((0, nb), (nb, nb)).copy_from(&net.g);
    j.view_mut((nb, 0), (nb, nb)).copy_from(&net.g);
    j.view_mut((nb, nb), (nb, nb)).copy_from(&(-&net.b));
    for i in 0..nb {
        j[(i, i)] -= bd[i];
        j[(i, nb + i)] -= gd[i];
        j[(nb + i, i)] += gd[i];
        j[(nb + i, nb + i)] -= bd[i];
    }
    Ok(j)
}

/// `D_x g`, shape `2 n_bus x 4 n_dev`, columns ordered `[delta, omega, E, E_fd]`.
///
/// Only the `delta` and `E` column blocks are populated.
pub fn jacobian_x<T: Real>(x: &DVector<T>, net: &PowerNetwork<T>) -> Result<DMatrix<T>> {
    let nb = net.n_bus();
    let nd = net.n_dev();
    check_x_len(x, nd)?;
    let mut j = DMatrix::zeros(2 * nb, 4 * nd);
    for k in 0..nd {
        let (s, co) = (x[k].sin(), x[k].cos());
        let e = x[2 * nd + k];
        for i in 0..nb {
            let ble = net.b_le[(i, k)];
            if ble == T::zero() {
                continue;
            }
            j[(i, k)] = -ble * e * s;
            j[(nb + i, k)] = -ble * e * co;
            j[(i, 2 * nd + k)] = ble * co;
            j[(nb + i, 2 * nd + k)] = -ble * s;
        }
    }
    Ok(j)
}

/// Partial derivative of `D_y g` with respect to `y[k]` (a `V_x` or `V_y`
/// component). Non-zero only at the four entries of the affected bus.
pub fn jacobian_y_derivative<T: Real>(
    y: &DVector<T>,
    net: &PowerNetwork<T>,
    k: usize,
    eps_v: f64,
) -> Result<DMatrix<T>> {
    let nb = net.n_bus();
    check_y_len(y, nb)?;
    let mut d = DMatrix::zeros(2 * nb, 2 * nb);
    let (i, wrt_x) = if k < nb { (k, true) } else { (k - nb, false) };
    if !net.has_constant_power(i) {
        return Ok(d);
    }
    let (db, dg) = load_sensitivity_partials(y[i], y[nb + i], net.p[i], net.q[i], eps_v, i)?;
    let (db, dg) = if wrt_x { (db.0, dg.0) } else { (db.1, dg.1) };
    d[(i, i)] = -db;
    d[(i, nb + i)] = -dg;
    d[(nb + i, i)] = dg;
    d[(nb + i, nb + i)] = -db;
    Ok(d)
}

/// `((db/dVx, db/dVy), (dg/dVx, dg/dVy))` for one bus.
pub(crate) fn load_sensitivity_partials<T: Real>(
    vx: T,
    vy: T,
    p: T,
    q: T,
    eps_v: f64,
    bus: usize,
) -> Result<((T, T), (T, T))> {
    let two = c::<T>(2.0);
    let r2 = vx * vx + vy * vy;
    let floor = c::<T>(eps_v);
    if r2 < floor * floor {
        return Err(Error::VoltageCollapseGuard {
            bus,
            magnitude: r2.sqrt().as_f64(),
        });
    }
    let r4 = r2 * r2;
    let r6 = r4 * r2;
    let nb_ = q * (vx * vx - vy * vy) - two * p * vx * vy;
    let ng_ = p * (vx * vx - vy * vy) + two * q * vx * vy;
    let db_dx = two * ((q * vx - p * vy) / r4 - two * vx * nb_ / r6);
    let db_dy = two * ((-q * vy - p * vx) / r4 - two * vy * nb_ / r6);
    let dg_dx = two * ((p * vx + q * vy) / r4 - two * vx * ng_ / r6);
    let dg_dy = two * ((-p * vy + q * vx) / r4 - two * vy * ng_ / r6);
    Ok(((db_dx, db_dy), (dg_dx, dg_dy)))
}

fn check_y_len<T: Real>(y: &DVector<T>, nb: usize) -> Result<()> {
    if y.len() != 2 * nb {
        return Err(Error::Dimension(format!(
            "algebraic vector has length {} (expected {})",
            y.len(),
            2 * nb
        )));
    }
    Ok(())
}

fn check_x_len<T: Real>(x: &DVector<T>, nd: usize) -> Result<()> {
    if x.len() != 4 * nd {
        return Err(Error::Dimension(format!(
            "state vector has length {} (expected {})",
            x.len(),
            4 * nd
        )));
    }
    Ok(())
}
