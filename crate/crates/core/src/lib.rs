//! Two-component example weighting for long-tailed classification.
//!
//! Training sets with long-tailed class distributions bias classifiers toward
//! the head classes. This crate weighs each training example by a sum of two
//! parts: a class-wise weight derived from effective numbers, and a
//! per-example conditional weight learned online by a one-step meta-gradient
//! against a small balanced development set.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense f64 tensors and a define-by-run reverse-mode autodiff
//!   tape sufficient for small MLP/CNN classifiers;
//! - [`param`]: flat parameter vectors with the arithmetic the optimizer needs;
//! - [`model`]: MLP and small CNN classifiers with deterministic init;
//! - [`loss`]: per-example cross-entropy, focal, and LDAM losses;
//! - [`weighting`]: effective-number class weights, the closed-form meta
//!   gradient for conditional weights, and the clip-and-normalize variant
//!   used for ablation;
//! - [`data`]: long-tailed subsampling, balanced holdout, synthetic Gaussian
//!   long-tail generation;
//! - [`trainer`]: the two-stage training procedure plus baseline modes;
//! - [`eval`]: top-k error, confusion matrices, conditional-weight summaries;
//! - [`fdcheck`]: central finite-difference oracles used to validate every
//!   gradient path in this crate.
//!
//! The crate is `no_std` (with `alloc`); all file formats, logging, and the
//! experiment CLI live in the companion `longtail-cli` crate.

#![no_std]
// `!(x > 0.0)` is used as a NaN-rejecting guard in validation code.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod fdcheck;
pub mod loss;
pub mod model;
pub mod param;
pub mod seeding;
pub mod tensor;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use param::ParamVector;
pub use tensor::{Gradients, NodeId, Tape, Tensor};
