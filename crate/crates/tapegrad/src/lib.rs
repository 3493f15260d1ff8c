//! Dense f64 tensors with a Wengert-tape reverse-mode gradient engine.
//!
//! The op set is the minimum a GCN + Transformer recognizer needs: matmuls
//! (plain and batched), temporal 1-D convolution, elementwise arithmetic,
//! masked softmax, layer/batch normalization, reductions, concatenation and
//! affine maps, plus fused cross-entropy and BCE losses. Every op has an
//! analytic backward that is validated against central finite differences
//! (see [`grad_check_inputs`]).
//!
//! A [`Tape`] is confined to one thread; kernels parallelize internally over
//! disjoint output chunks (feature `parallel`), with results bit-identical
//! to the sequential build.

mod error;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_inputs};
pub use kernels::MASK_NEG;
pub use tape::{FlopCounts, OpKind, Tape, Var};
pub use tensor::Tensor;
