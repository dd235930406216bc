//! Scalar abstraction for the numeric core.
//!
//! Geometry, the pair potential, and the autodiff graph are written against
//! this trait so they work with `f32` or `f64` alike. Everything above them
//! (environment, policy, training) uses the crate-level `Real` alias.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` literals and constants.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable in this scalar type")
    }

    /// Conversion to `f64` for reporting and I/O.
    fn to_f64_c(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_c(self) -> f64 {
        self
    }
}
