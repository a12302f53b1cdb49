//! Meta-free representation learning for few-shot regression and classification.
//!
//! The pipeline has two stages. A dense backbone is first trained on the merged
//! pool of all training tasks (multi-head squared loss for regression, C-class
//! cross-entropy for classification), optionally followed by a tail
//! weight-averaging phase (SWA or EMA) that runs extra epochs at a constant
//! learning rate and averages end-of-epoch snapshots. The backbone is then
//! frozen and, per few-shot task, only a probabilistic linear head is fitted on
//! the extracted features:
//!
//! - regression: a hierarchical Bayesian linear model with evidence-based
//!   selection of the prior and noise precisions ([`bayes`]),
//! - classification: L2-regularized multinomial logistic regression with a
//!   temperature-scaled softmax ([`logreg`]), or an MCMC-sampled hierarchical
//!   Bayesian head ([`mcmc`]) for comparison.
//!
//! [`eval`] carries the episode-accuracy harness, the calibration metrics
//! (ECE / MCE / Brier, reliability bins) and the singular-value spectrum used
//! to measure the effective rank of a representation. [`data`] generates the
//! synthetic task distributions and samples N-way k-shot episodes.
//!
//! The crate is `no_std`-compatible (`--no-default-features --features libm`);
//! everything here is pure computation over owned buffers. File formats, the
//! CLI, and report emission live in the companion `mfrl-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("mfrl-core needs either the `std` feature or the `libm` feature");

pub mod averaging;
pub mod bayes;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod logreg;
pub(crate) mod math;
pub mod mcmc;
pub mod nn;
pub mod repr;
pub mod rng;

mod error;

pub use error::{CoreError, Result};
pub use linalg::Matrix;
pub use nn::{Activation, MlpSpec, ParamVector};
pub use rng::Stream;
