//! Core library for studying in-context linear regression in small
//! transformers: prompt distributions, classical regression baselines, a
//! trainable decoder-only transformer with residual-stream capture, and the
//! spectral-signature analysis and OOD detector built on those residuals.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod linalg;
pub mod ooddetect;
pub mod promptgen;
pub mod rng;
pub mod spectra;
pub mod transformer;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use promptgen::{Prompt, PromptDistribution, SubspacePair, TokenSequence};
