//! Tensors, tape-based reverse-mode autodiff, numeric kernels, layers, and
//! the AdamW optimizer.
//!
//! A [`Tape`] records one forward pass as a sequence of ops with stored
//! outputs, so intermediate activations (U-Net block taps, attention weights)
//! can be read back after the pass without recomputation. [`Tape::backward`]
//! walks the record in reverse and accumulates gradients. Kernels are single
//! threaded with f64 accumulation in reductions; identical inputs produce
//! bit-identical outputs on every run.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_contracted};
pub use layers::{
    Attention, Conv2dLayer, EmbeddingLayer, GroupNormLayer, LayerNormLayer, Linear, ParamId,
    ParamSet, Parameter,
};
pub use optim::{AdamW, AdamWConfig};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

/// Errors from tensor construction, op application, and optimization.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite values in {what}")]
    NonFinite { what: String },
    #[error("gradient for parameter '{name}' is not finite")]
    BadGradient { name: String },
    #[error("duplicate parameter name '{name}'")]
    DuplicateParam { name: String },
}

pub type Result<T> = std::result::Result<T, NnError>;

impl NnError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NnError::Invalid { op, msg: msg.into() }
    }

    pub fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        NnError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
