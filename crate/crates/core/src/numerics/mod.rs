//! Dense tensors with a reverse-mode tape.
//!
//! All data is row-major. Resizing follows the align-corners-false
//! convention. The only broadcasting is multiplication by a one-element
//! tensor ([`Graph::scale_by`]).

pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
pub(crate) mod linalg;
mod scalar;
mod tensor;

pub use gradcheck::{finite_difference_check, gradient_check, gradient_check_coords, relative_error, GradCheck};
pub use graph::{CustomOp, Gradients, Graph, Graph32, Graph64, Var};
pub use scalar::{sigmoid, softplus, Scalar};
pub use tensor::{Tensor, Tensor32, Tensor64};

/// Bilinear resize of a raw `[C,H,W]` buffer outside any tape.
pub fn resize_bilinear_raw<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    kernels::resize_forward(x, c, h, w, out_h, out_w)
}
