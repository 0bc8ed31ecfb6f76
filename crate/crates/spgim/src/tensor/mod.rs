//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! The engine is a flat tape: every operation appends a node holding its
//! forward value and a closure producing parent gradients. Insertion order is
//! a topological order, so `backward` is a single reverse sweep. All values
//! are `f64` and all computation is single-threaded, which keeps forward
//! passes bit-reproducible for a fixed input.

mod conv;
mod graph;
mod ops_basic;
mod ops_nn;
mod resize;

pub use conv::ConvSpec;
pub use graph::{Gradients, Graph, Var};
pub use resize::resize_plane_bilinear;

use ndarray::{ArrayD, IxDyn};

/// Convenience constructor for a 0-d scalar tensor.
pub fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

/// Read a 0-d (or single-element) tensor back as `f64`.
pub fn to_scalar(a: &ArrayD<f64>) -> f64 {
    debug_assert_eq!(a.len(), 1, "to_scalar on non-scalar tensor");
    *a.iter().next().expect("empty tensor")
}
