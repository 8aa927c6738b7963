//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All public math is generic over [`Real`], implemented for `f32` and `f64`.
//! Special functions (gamma, incomplete beta, erfc), the dense Cholesky
//! factorization and the FFT are evaluated in `f64` and cast back.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + LinalgScalar + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static {
    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    /// Conversion to `f64` (exact for both implementors).
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Gamma function.
pub fn gamma<T: Real>(x: T) -> T {
    T::of(statrs::function::gamma::gamma(x.f64()))
}

/// Regularized lower incomplete beta function `I_x(a, b)`.
pub fn beta_reg<T: Real>(a: T, b: T, x: T) -> T {
    T::of(statrs::function::beta::beta_reg(a.f64(), b.f64(), x.f64()))
}

/// Complete beta function `B(a, b)`.
pub fn beta<T: Real>(a: T, b: T) -> T {
    T::of(statrs::function::beta::beta(a.f64(), b.f64()))
}

/// Standard normal cumulative distribution function.
pub fn norm_cdf<T: Real>(x: T) -> T {
    let z = -x.f64() / std::f64::consts::SQRT_2;
    T::of(0.5 * statrs::function::erf::erfc(z))
}
