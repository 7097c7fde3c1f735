//! Dense tensors, a reverse-mode tape, and the QK-Norm attention primitive.

mod attention;
mod scalar;
mod tape;
mod tensor;

pub use attention::{attention_weights, qknorm_attention, QK_NORM_EPS};
pub use scalar::{DType, MatRef, Scalar};
pub use tape::{gelu, sigmoid, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Euclidean norm over the concatenation of all gradients.
pub fn global_grad_norm<'a, T: Scalar>(
    grads: impl IntoIterator<Item = Option<&'a Tensor<T>>>,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, g) in grads.into_iter().enumerate() {
        let g = g.ok_or_else(|| Error::State(format!("gradient {i} is missing")))?;
        total += g.sum_squares();
    }
    Ok(total.sqrt())
}
