//! Minimal reverse-mode automatic differentiation over dense row-major
//! tensors, limited to the operations the quality network and its losses use.
//!
//! A [`Tape`] records each operation's output together with a local gradient
//! rule. [`Tape::backward`] sweeps the record in reverse and returns exact
//! gradients for every trainable leaf. Layout is NCHW throughout.

mod gradcheck;
mod ops;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_fault, GradCheck, KINK_GUARD};
pub use ops::conv2d_forward;
pub use real::{matmul, Precision, Real};
pub use tape::{GradRule, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid tensor shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    BadGeometry { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("variable {0} is not recorded on this tape")]
    UnknownVar(usize),
}
