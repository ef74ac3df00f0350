//! Decoder-only transformer with a scalar readout head.
//!
//! Pre-LayerNorm GPT-2 blocks (causal multi-head attention, tanh-GELU MLP,
//! no dropout) over a linear token embedding plus learned absolute positions.
//! The prediction for `x_i` is read out at its own position from the output
//! of the final LayerNorm; that vector is what [`forward`] captures.

mod checkpoint;
mod config;
mod model;
mod optim;
mod params;
mod probe;
mod scalar;
mod train;

pub use checkpoint::{
    load_checkpoint, read_header, save_checkpoint, Checkpoint, CheckpointHeader, OptimizerHeader,
    CHECKPOINT_SCHEMA_VERSION,
};
pub use config::{curriculum_state, Curriculum, ModelConfig, TrainConfig};
pub use model::{forward, forward_batch, loss, loss_and_grad, ForwardOutput, LossGrad};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use params::{Params, TensorInfo};
pub use probe::{implicit_weight, ImplicitWeight, SequenceModel};
pub use scalar::Scalar;
pub use train::{train, StepRecord, Trainer};
