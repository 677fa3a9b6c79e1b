//! Tensors, seeded randomness, the KSTN codec and gradient checking.

pub mod codec;
mod gradcheck;
mod rng;
mod tensor;

pub use codec::{load_tensor, save_tensor, Dtype};
pub use gradcheck::{finite_diff_gradient, finite_diff_gradient_with};
pub use rng::{seeded_normal, Rng};
pub use tensor::{relative_l2_error, Tensor};

use crate::error::Result;

/// A differentiable map between tensors with an explicit vector-Jacobian
/// product. `vjp(x, g)` returns `J(x)^T g`, shaped like `x`.
pub trait DiffOp: Send + Sync {
    fn forward(&self, input: &Tensor) -> Result<Tensor>;
    fn vjp(&self, input: &Tensor, cotangent: &Tensor) -> Result<Tensor>;
}
