//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All model equations, eigen-machinery and integrators are written against
//! [`Real`], so the same code runs in `f64` (the production type) and `f32`
//! (useful for quick sensitivity sweeps where half the memory matters more
//! than the last digits).

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};

pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent a finite f64, which does not happen for f32/f64.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn epsilon() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand used throughout the numerical modules.
#[inline]
pub(crate) fn c<T: Real>(v: f64) -> T {
    T::lit(v)
}

/// `|z|` without requiring `num_traits::Float`.
#[inline]
pub fn cabs<T: Real>(z: num_complex::Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// `arg(z)` in `(-pi, pi]`.
#[inline]
pub fn carg<T: Real>(z: num_complex::Complex<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn cpolar<T: Real>(r: T, theta: T) -> num_complex::Complex<T> {
    num_complex::Complex::new(r * theta.cos(), r * theta.sin())
}

/// Standard normal draw (Box-Muller).
pub(crate) fn gaussian<R: rand::Rng>(rng: &mut R) -> f64 {
    let (a, b): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
    (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
}
