//! Floating-point abstraction so the same code serves 32-bit training and
//! 64-bit gradient checking.

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    num_traits::Float + Debug + Display + Sum + Send + Sync + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
