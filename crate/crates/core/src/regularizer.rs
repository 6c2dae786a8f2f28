//! Eigenstructure of `D_y g` and the regularized vector fields.
//!
//! * `Sigma'`: `x' = f`, `y' = -(D_y g)^{-1} (D_x g) f`
//! * `Sigma''`: the same field multiplied by `det(D_y g)`
//! * `Sigma_lambda`: the same field multiplied by `s * lambda1`, where
//!   `lambda1` is the minimum-modulus eigenvalue of `D_y g` and `s` is a sign
//!   fixed once per trajectory.

use crate::config::Thresholds;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::{c, Real};
use nalgebra::{DMatrix, DVector, Schur};

/// Real eigen-decomposition `A = U diag(lambdas) V^T` with `V^T U = I`.
///
/// Eigenvalues are sorted ascending by modulus; column `i` of `u`/`v` belongs
/// to `lambdas[i]`. Right eigenvectors have unit 2-norm and their
/// largest-magnitude entry positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenstructure<T: Real> {
    pub lambdas: DVector<T>,
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
}

impl<T: Real> Eigenstructure<T> {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambda1(&self) -> T {
        self.lambdas[0]
    }

    pub fn u1(&self) -> DVector<T> {
        self.u.column(0).into_owned()
    }

    pub fn v1(&self) -> DVector<T> {
        self.v.column(0).into_owned()
    }

    /// `u_i v_i^T`.
    pub fn projector(&self, i: usize) -> DMatrix<T> {
        self.u.column(i) * self.v.column(i).transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.u * DMatrix::from_diagonal(&self.lambdas) * self.v.transpose()
    }

    pub fn min_gap(&self) -> T {
        min_gap(self.lambdas.as_slice())
    }

    /// `sum_i (lambda1 / lambda_i) u_i v_i^T`, with the first term exactly
    /// `u_1 v_1^T` (so it stays finite on the singular surface).
    pub fn regularized_inverse(&self) -> DMatrix<T> {
        let l1 = self.lambda1();
        let mut k = self.projector(0);
        for i in 1..self.n() {
            k += self.projector(i) * (l1 / self.lambdas[i]);
        }
        k
    }

    /// Product of all eigenvalues.
    pub fn determinant(&self) -> T {
        self.lambdas.iter().fold(T::one(), |a, l| a * *l)
    }
}

fn min_gap<T: Real>(l: &[T]) -> T {
    let mut g = T::max_value().unwrap_or_else(|| c(f64::MAX));
    for i in 0..l.len() {
        for j in 0..i {
            let d = (l[i] - l[j]).abs();
            if d < g {
                g = d;
            }
        }
    }
    g
}

/// Real eigenvalues of `a` from its real Schur form.
///
/// Fails with `ComplexSpectrum` when a 2x2 block carries an imaginary part
/// above `eps_complex_rel * |re| + eps_complex_abs`.
pub fn real_eigenvalues<T: Real>(a: &DMatrix<T>, thr: &Thresholds) -> Result<Vec<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("eigendecomposition of a non-square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    let (_, t) = Schur::new(a.clone()).unpack();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let tiny = T::epsilon() * (T::one() + t.amax());
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > tiny {
            let (p, q, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let half = c::<T>(0.5);
            let mid = (p + s) * half;
            let disc = (p - s) * (p - s) * half * half + q * r;
            if disc >= T::zero() {
                let sq = disc.sqrt();
                out.push(mid + sq);
                out.push(mid - sq);
            } else {
                let im = (-disc).sqrt();
                if im > c::<T>(thr.eps_complex_rel) * mid.abs() + c::<T>(thr.eps_complex_abs) {
                    return Err(Error::ComplexSpectrum {
                        index: i,
                        re: mid.as_f64(),
                        im: im.as_f64(),
                    });
                }
                out.push(mid);
                out.push(mid);
            }
            i += 2;
        } else {
            out.push(t[(i, i)]);
            i += 1;
        }
    }
    Ok(out)
}

/// Minimum-modulus eigenvalue, tolerating complex pairs (their real part is
/// returned). Diagnostic use only; the analysis paths go through
/// [`eigendecompose`].
pub fn min_modulus_eigenvalue<T: Real>(a: &DMatrix<T>) -> Result<T> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    let ev = a.complex_eigenvalues();
    let mut best: Option<(T, T)> = None;
    for z in ev.iter() {
        let m = (z.re * z.re + z.im * z.im).sqrt();
        if best.is_none_or(|(bm, _)| m < bm) {
            best = Some((m, z.re));
        }
    }
    best.map(|b| b.1).ok_or_else(|| Error::Dimension("empty matrix".into()))
}

/// Right eigenvector for a known real eigenvalue by shifted inverse iteration.
fn right_eigenvector<T: Real>(a: &DMatrix<T>, lambda: T) -> Result<DVector<T>> {
    let n = a.nrows();
    let scale = T::one() + a.amax();
    let mut shift = T::epsilon() * scale * c(16.0);
    for _ in 0..8 {
        let lu = (a - DMatrix::identity(n, n) * (lambda + shift)).lu();
        let mut x = DVector::from_fn(n, |i, _| T::one() + c::<T>(0.1 * ((i * 7 + 3) % 11) as f64));
        x /= x.norm();
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&x) {
                Some(s) if s.iter().all(|v| v.is_finite()) && s.norm() > T::zero() => {
                    let nrm = s.norm();
                    x = s / nrm;
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(normalize_sign(x));
        }
        shift *= c(100.0);
    }
    Err(Error::DegenerateSpectrum { gap: 0.0 })
}

/// Unit norm, largest-magnitude entry positive.
pub fn normalize_sign<T: Real>(mut x: DVector<T>) -> DVector<T> {
    let nrm = x.norm();
    if nrm > T::zero() {
        x /= nrm;
    }
    let mut best = 0;
    for i in 1..x.len() {
        if x[i].abs() > x[best].abs() * (T::one() + c(1e-9)) {
            best = i;
        }
    }
    if !x.is_empty() && x[best] < T::zero() {
        x = -x;
    }
    x
}

/// Full eigenstructure with `lambda1` the minimum-modulus eigenvalue.
pub fn eigendecompose<T: Real>(a: &DMatrix<T>, thr: &Thresholds) -> Result<Eigenstructure<T>> {
    eigendecompose_tracked(a, thr, None)
}

/// As [`eigendecompose`], breaking modulus ties in favour of the eigenvector
/// closest to `prev_u1`.
pub fn eigendecompose_tracked<T: Real>(
    a: &DMatrix<T>,
    thr: &Thresholds,
    prev_u1: Option<&DVector<T>>,
) -> Result<Eigenstructure<T>> {
    let n = a.nrows();
    let mut lam = real_eigenvalues(a, thr)?;
    lam.sort_by(|p, q| p.abs().partial_cmp(&q.abs()).unwrap_or(std::cmp::Ordering::Equal));
    let gap = min_gap(&lam);
    if n > 1 && gap < c(thr.eps_gap) {
        return Err(Error::DegenerateSpectrum { gap: gap.as_f64() });
    }
    let mut u = DMatrix::zeros(n, n);
    for (i, l) in lam.iter().enumerate() {
        u.set_column(i, &right_eigenvector(a, *l)?);
    }
    if let (Some(prev), true) = (prev_u1, n > 1) {
        let m0 = lam[0].abs();
        let tie = m0 * c(1e-6) + c(thr.eps_complex_abs);
        let mut best = 0;
        let mut best_ov = u.column(0).dot(prev).abs();
        for i in 1..n {
            if lam[i].abs() - m0 > tie {
                break;
            }
            let ov = u.column(i).dot(prev).abs();
            if ov > best_ov {
                best = i;
                best_ov = ov;
            }
        }
        if best != 0 {
            lam.swap(0, best);
            u.swap_columns(0, best);
        }
    }
    let v = u
        .clone()
        .try_inverse()
        .ok_or(Error::DegenerateSpectrum { gap: gap.as_f64() })?
        .transpose();
    Ok(Eigenstructure {
        lambdas: DVector::from_vec(lam),
        u,
        v,
    })
}

/// `d lambda_i / dp = v_i^T (dA/dp) u_i`.
pub fn eigenvalue_derivative<T: Real>(es: &Eigenstructure<T>, da: &DMatrix<T>, i: usize) -> T {
    (es.v.column(i).transpose() * da * es.u.column(i))[(0, 0)]
}

/// Modal coefficients `alpha[(i, k)]` of the right-eigenvector derivatives,
/// `du_i/dp = sum_k alpha_ik u_k`, under the unit-norm normalization.
pub fn eigenvector_coefficients<T: Real>(es: &Eigenstructure<T>, da: &DMatrix<T>, thr: &Thresholds) -> Result<DMatrix<T>> {
    let n = es.n();
    let gap = es.min_gap();
    if n > 1 && gap < c(thr.eps_gap) {
        return Err(Error::DegenerateSpectrum { gap: gap.as_f64() });
    }
    // w[(k, i)] = v_k^T A' u_i
    let w = es.v.transpose() * da * &es.u;
    let gram = es.u.transpose() * &es.u;
    let mut alpha = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = T::zero();
        for k in 0..n {
            if k != i {
                let a = -w[(k, i)] / (es.lambdas[k] - es.lambdas[i]);
                alpha[(i, k)] = a;
                diag -= a * gram[(k, i)];
            }
        }
        alpha[(i, i)] = diag;
    }
    Ok(alpha)
}

/// Derivatives `(dU/dp, dV/dp)` of all right and left eigenvectors.
pub fn eigenvector_derivatives<T: Real>(
    es: &Eigenstructure<T>,
    da: &DMatrix<T>,
    thr: &Thresholds,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let alpha = eigenvector_coefficients(es, da, thr)?;
    let du = &es.u * alpha.transpose();
    // beta_ik = -alpha_ki  =>  dV = V beta^T = -V alpha
    let dv = -(&es.v * &alpha);
    Ok((du, dv))
}

/// Adjugate from the eigen-expansion `sum_i (prod_{j != i} lambda_j) u_i v_i^T`.
pub fn adjugate_spectral<T: Real>(es: &Eigenstructure<T>) -> Result<DMatrix<T>> {
    let n = es.n();
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut w = T::one();
        for j in 0..n {
            if j != i {
                w *= es.lambdas[j];
            }
        }
        adj += es.projector(i) * w;
    }
    if adj.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(adj)
}

/// Classical adjugate from cofactors.
pub fn adjugate_cofactor<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, T::one());
    }
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let minor = a.clone().remove_row(i).remove_column(j);
            let sgn = if (i + j) % 2 == 0 { T::one() } else { -T::one() };
            adj[(j, i)] = sgn * minor.determinant();
        }
    }
    adj
}

/// Adjugate: cofactors for `n <= 5`, eigen-expansion above.
pub fn adjugate<T: Real>(a: &DMatrix<T>, thr: &Thresholds) -> Result<DMatrix<T>> {
    let adj = if a.nrows() <= 5 {
        adjugate_cofactor(a)
    } else {
        adjugate_spectral(&eigendecompose(a, thr)?)?
    };
    if adj.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(adj)
}

/// Orientation sign for `Sigma_lambda`, chosen from `lambda1` at the SEP.
pub fn orientation_sign<T: Real>(lambda1_at_sep: T) -> T {
    if lambda1_at_sep < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// `Sigma'` field.
pub fn sigma_prime_field<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
    let dyg = m.dyg(y)?;
    let l1 = real_eigenvalues(&dyg, m.thr)?
        .into_iter()
        .fold(None::<T>, |a, l| match a {
            Some(b) if b.abs() <= l.abs() => Some(b),
            _ => Some(l),
        })
        .unwrap_or(T::one());
    if l1.abs() <= c(m.thr.eps_sing) {
        return Err(Error::NearSingular { lambda1: l1.as_f64() });
    }
    let f = m.f(x, y)?;
    let rhs = m.dxg(x)? * &f;
    let dy = dyg
        .lu()
        .solve(&rhs)
        .ok_or(Error::NearSingular { lambda1: l1.as_f64() })?;
    Ok((f, -dy))
}

/// Evaluation of the `Sigma_lambda` field with the eigen-data it used.
#[derive(Debug, Clone)]
pub struct LambdaField<T: Real> {
    pub dx: DVector<T>,
    pub dy: DVector<T>,
    pub eig: Eigenstructure<T>,
}

impl<T: Real> LambdaField<T> {
    pub fn lambda1(&self) -> T {
        self.eig.lambda1()
    }
}

/// `Sigma_lambda` field with orientation `sign`.
pub fn sigma_lambda_field<T: Real>(
    m: &Model<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    sign: T,
    prev_u1: Option<&DVector<T>>,
) -> Result<LambdaField<T>> {
    let eig = eigendecompose_tracked(&m.dyg(y)?, m.thr, prev_u1)?;
    let f = m.f(x, y)?;
    let w = m.dxg(x)? * &f;
    let k = eig.regularized_inverse();
    let dx = &f * (sign * eig.lambda1());
    let dy = -(k * w) * sign;
    Ok(LambdaField { dx, dy, eig })
}

/// `Sigma''` field, with the adjugate from the eigen-expansion.
pub fn sigma_dprime_field<T: Real>(m: &Model<T>, x: &DVector<T>, y: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
    let eig = eigendecompose(&m.dyg(y)?, m.thr)?;
    let det = eig.determinant();
    if !det.is_finite() {
        return Err(Error::Overflow);
    }
    let adj = adjugate_spectral(&eig)?;
    let f = m.f(x, y)?;
    let w = m.dxg(x)? * &f;
    Ok((&f * det, -(adj * w)))
}
