// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod fields;
pub mod harness;
pub mod network;
pub mod optimize;
pub mod physics;
pub mod refsolver;

/// A location `(x1, x2)` in the flow domain.
pub type Point = [f64; 2];
