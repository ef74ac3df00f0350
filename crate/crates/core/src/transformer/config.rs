use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture of the decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Residual width `m`.
    pub hidden: usize,
    /// Token width `d`.
    pub token_dim: usize,
    pub max_positions: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    /// 12 layers, 8 heads, width 256.
    pub fn paper(token_dim: usize, k: usize, seed: u64) -> Self {
        Self {
            layers: 12,
            heads: 8,
            hidden: 256,
            token_dim,
            max_positions: 2 * k + 1,
            seed,
        }
    }

    /// 4 layers, 4 heads, width 64.
    pub fn desk(token_dim: usize, k: usize, seed: u64) -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 64,
            token_dim,
            max_positions: 2 * k + 1,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.token_dim == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "hidden = {} is not divisible by heads = {}",
                self.hidden, self.heads
            )));
        }
        if self.max_positions < 3 {
            return Err(invalid(
                "max_positions must allow at least one pair and a query",
            ));
        }
        Ok(())
    }
}

/// Curriculum: the trailing `d_start` input coordinates are zeroed and only
/// `k_start` pairs are shown; every `period` steps both move by their step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub d_start_init: usize,
    pub k_start_init: usize,
    pub period: usize,
    pub d_step: i64,
    pub k_step: i64,
}

impl Curriculum {
    /// Starts at `d_start = 15`, `k_start = 11` and moves by (-1, +2) every 2000 steps.
    pub fn paper() -> Self {
        Self {
            d_start_init: 15,
            k_start_init: 11,
            period: 2000,
            d_step: -1,
            k_step: 2,
        }
    }

    /// Same shape as [`Curriculum::paper`] rescaled to `d = 8`, `k = 16`.
    pub fn desk() -> Self {
        Self {
            d_start_init: 5,
            k_start_init: 5,
            period: 1000,
            d_step: -1,
            k_step: 2,
        }
    }

    /// A schedule that never masks anything.
    pub fn inactive(k: usize) -> Self {
        Self {
            d_start_init: 0,
            k_start_init: k,
            period: 1,
            d_step: 0,
            k_step: 0,
        }
    }
}

/// `(d_start, k_start)` at `step`, clamped to `[0, d - 1]` and `[1, k]`.
pub fn curriculum_state(step: usize, c: &Curriculum, d: usize, k: usize) -> (usize, usize) {
    let periods = (step / c.period.max(1)) as i64;
    let d_start = (c.d_start_init as i64 + c.d_step * periods).clamp(0, d.saturating_sub(1) as i64);
    let k_start = (c.k_start_init as i64 + c.k_step * periods).clamp(1, k as i64);
    (d_start as usize, k_start as usize)
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub curriculum: Curriculum,
    /// Include the query position in the training loss.
    pub loss_include_query: bool,
    /// Data seed; batch `b` of step `s` uses a seed derived from `(seed, s, b)`.
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Each step draws one input scale uniformly from this set for its whole
    /// batch; empty keeps the distribution's own scale.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_scales: Vec<f64>,
}

impl TrainConfig {
    /// 500k steps of AdamW at 1e-4.
    pub fn paper(seed: u64) -> Self {
        Self {
            steps: 500_000,
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            curriculum: Curriculum::paper(),
            loss_include_query: true,
            seed,
            checkpoint_every: 10_000,
            input_scales: Vec::new(),
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            steps: 50_000,
            learning_rate: 3e-4,
            curriculum: Curriculum::desk(),
            checkpoint_every: 5_000,
            ..Self::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(invalid(
                "learning_rate > 0, weight_decay >= 0 and grad_clip >= 0 required",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("adam betas must lie in [0, 1)"));
        }
        if self
            .input_scales
            .iter()
            .any(|s| !(*s > 0.0) || !s.is_finite())
        {
            return Err(invalid("input_scales must be positive"));
        }
        Ok(())
    }
}
