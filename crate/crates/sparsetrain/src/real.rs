//! Scalar abstraction over the two training precisions.
//!
//! Training defaults to `f32`; gradient-check tests and oracles run the
//! same code in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub trait Real:
    Float + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
