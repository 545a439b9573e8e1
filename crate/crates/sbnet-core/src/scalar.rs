use std::fmt::{Debug, Display};

use num_traits::Float;

/// Element type for tensors and graphs.
///
/// Training runs at `f32`; the finite-difference oracle re-evaluates the same
/// graph code at `f64`, so everything numeric is written against this trait
/// and instantiated at both widths.
pub trait Scalar:
    Float + num_traits::NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;

    /// Guard added to log arguments and divisors so finite inputs always
    /// produce finite outputs.
    fn eps_guard() -> Self {
        Self::from_f64(1e-8)
    }
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn to_f64(self) -> f64 {
        self
    }
}
