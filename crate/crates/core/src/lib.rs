//! Collapse-proof non-contrastive self-supervised learning.
//!
//! The crate bundles a small reverse-mode differentiation engine, the frozen
//! bipolar dictionary, the two-layer projector, the two-term objective, a
//! desk-scale trainer, collapse diagnostics, and oracles that check the
//! optimality structure of the objective directly.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dictionary;
pub mod error;
pub mod loss;
pub mod oracle;
pub mod projector;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, Gradients, Tape, Var};
pub use dictionary::{Dictionary, DictionaryKind, OrthogonalityStats};
pub use error::{Error, Result};
pub use loss::{LossBreakdown, LossVariant, Prior};
pub use projector::{Activation, EmbeddingMatrix, ProbMatrix, ProjectorParams};
pub use tensor::Tensor;
