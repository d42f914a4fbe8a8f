use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for tensors and kernels.
///
/// Training runs in `f32`; gradient checking re-instantiates the same graphs
/// in `f64`. Everything numeric in this crate is generic over this trait.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Sum + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
