//! Scalar abstraction: everything is generic over a real float type.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar for all physics code; implemented by `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal; panics only if the target type cannot
    /// represent any finite approximation (never for f32/f64).
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Complex number over the generic real scalar.
pub type Cx<T> = Complex<T>;

pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

pub fn cre<T: Real>(re: T) -> Cx<T> {
    Complex::new(re, T::zero())
}

/// e^{i phi}
pub fn cis<T: Real>(phi: T) -> Cx<T> {
    Complex::new(phi.cos(), phi.sin())
}

/// Tolerance that degrades gracefully for wider epsilon types: at least
/// `abs` but never tighter than a few hundred ulps of the scalar.
pub fn tol<T: Real>(abs: f64) -> T {
    T::lit(abs).max(T::epsilon() * T::lit(256.0))
}
