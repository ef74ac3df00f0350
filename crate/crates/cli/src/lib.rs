//! Experiment harness: flat TOML configs, a registry of trainable models,
//! named experiments writing deterministic CSV/SVG outputs, and run manifests.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod registry;

pub use artifacts::{verify_run, RunManifest};
pub use config::{ExperimentConfig, Preset, Variant};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, train_model, Experiment, RunOptions};
