//! ReLU and All-ReLU.
//!
//! All-ReLU keeps the standard positive identity branch but gives the
//! negative side a slope of ±α whose sign alternates with the parity of
//! the absolute (1-indexed) layer index. The alternation breaks symmetry
//! across consecutive hidden layers without any trainable parameters.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    AllRelu { alpha: f64 },
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T, layer_index: usize, total_layers: usize) -> T {
        match self {
            Activation::Relu => relu(x),
            Activation::AllRelu { alpha } => {
                all_relu(x, layer_index, total_layers, T::from_f64(alpha))
            }
        }
    }

    #[inline]
    pub fn grad<T: Real>(self, x: T, layer_index: usize, total_layers: usize) -> T {
        match self {
            Activation::Relu => relu_grad(x),
            Activation::AllRelu { alpha } => {
                all_relu_grad(x, layer_index, total_layers, T::from_f64(alpha))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::AllRelu { .. } => "all_relu",
        }
    }
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn relu_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Alternate Left ReLU for hidden layer `layer_index` (1-indexed absolute
/// position; the input layer is 1 and the output layer `total_layers` are
/// excluded by the caller). Negative inputs map to `−αx` on even layers
/// and `αx` on odd layers.
#[inline]
pub fn all_relu<T: Real>(x: T, layer_index: usize, total_layers: usize, alpha: T) -> T {
    debug_assert!(layer_index >= 2 && layer_index + 1 <= total_layers);
    if x > T::zero() {
        x
    } else if layer_index % 2 == 0 {
        -alpha * x
    } else {
        alpha * x
    }
}

/// Derivative of [`all_relu`]; the negative-side slope applies at `x = 0`.
#[inline]
pub fn all_relu_grad<T: Real>(x: T, layer_index: usize, total_layers: usize, alpha: T) -> T {
    debug_assert!(layer_index >= 2 && layer_index + 1 <= total_layers);
    if x > T::zero() {
        T::one()
    } else if layer_index % 2 == 0 {
        -alpha
    } else {
        alpha
    }
}
