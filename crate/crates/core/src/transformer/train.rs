use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{curriculum_state, ModelConfig, TrainConfig};
use super::model::loss_and_grad;
use super::optim::{clip_global_norm, AdamW};
use super::params::Params;
use crate::error::{invalid, Error, Result};
use crate::promptgen::{sample_prompt, tokenize, PromptDistribution, TokenSequence};
use crate::rng::{derive_seed, rng_from_seed};

const SCALE_STREAM: u64 = u64::MAX;

/// Metrics of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based index of the step.
    pub step: usize,
    pub loss: f64,
    /// Mean squared error at the query position.
    pub final_loss: f64,
    pub grad_norm: f64,
    pub d_start: usize,
    pub k_start: usize,
}

/// Resumable training loop. Batch `b` of step `s` is drawn with seed
/// `derive_seed(train.seed, [s, b])`, so a run is fully determined by the
/// configs, the distribution and the step counter.
pub struct Trainer {
    config: TrainConfig,
    dist: PromptDistribution,
    params: Params<f32>,
    optimizer: AdamW<f32>,
    step: usize,
    meta: BTreeMap<String, String>,
}

impl Trainer {
    pub fn new(
        model: &ModelConfig,
        config: &TrainConfig,
        dist: &PromptDistribution,
    ) -> Result<Self> {
        let params = Params::init(model)?;
        let optimizer = AdamW::new(
            params.len(),
            config.beta1,
            config.beta2,
            config.eps,
            config.weight_decay,
        );
        Self::assemble(config, dist, params, optimizer, 0)
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(ck: Checkpoint, dist: &PromptDistribution) -> Result<Self> {
        let config = ck
            .header
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training config".into()))?;
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        let mut t = Self::assemble(&config, dist, ck.params, optimizer, ck.header.step)?;
        t.meta = ck.header.meta;
        Ok(t)
    }

    fn assemble(
        config: &TrainConfig,
        dist: &PromptDistribution,
        params: Params<f32>,
        optimizer: AdamW<f32>,
        step: usize,
    ) -> Result<Self> {
        config.validate()?;
        dist.validate()?;
        let mc = params.config();
        if mc.token_dim != dist.d {
            return Err(invalid(format!(
                "model token_dim {} differs from the distribution's d = {}",
                mc.token_dim, dist.d
            )));
        }
        if mc.max_positions < 2 * dist.k + 1 {
            return Err(invalid(format!(
                "max_positions {} cannot hold prompts with k = {}",
                mc.max_positions, dist.k
            )));
        }
        Ok(Self {
            config: config.clone(),
            dist: dist.clone(),
            params,
            optimizer,
            step,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn into_params(self) -> Params<f32> {
        self.params
    }

    /// Completed steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Training batch of `step`, after the curriculum for that step.
    pub fn batch(&self, step: usize) -> Result<(Vec<TokenSequence>, Vec<Vec<f64>>)> {
        let (d_start, k_start) =
            curriculum_state(step, &self.config.curriculum, self.dist.d, self.dist.k);
        let mut seqs = Vec::with_capacity(self.config.batch_size);
        let mut targets = Vec::with_capacity(self.config.batch_size);
        let scaled = self
            .step_scale(step)
            .map(|s| self.dist.clone().with_scale(s));
        let dist = scaled.as_ref().unwrap_or(&self.dist);
        for b in 0..self.config.batch_size {
            let seed = derive_seed(self.config.seed, &[step as u64, b as u64]);
            let p = sample_prompt(dist, seed)?.curriculum(d_start, k_start)?;
            seqs.push(tokenize(&p));
            targets.push(p.ys);
        }
        Ok((seqs, targets))
    }

    /// Input scale of every prompt in the batch of `step`, if scales are mixed.
    pub fn step_scale(&self, step: usize) -> Option<f64> {
        let scales = &self.config.input_scales;
        if scales.is_empty() {
            return None;
        }
        let mut g = rng_from_seed(derive_seed(self.config.seed, &[step as u64, SCALE_STREAM]));
        Some(scales[g.random_range(0..scales.len())])
    }

    /// Runs one optimization step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let (d_start, k_start) =
            curriculum_state(step, &self.config.curriculum, self.dist.d, self.dist.k);
        let (seqs, targets) = self.batch(step)?;
        let mut lg = loss_and_grad(
            &self.params,
            &seqs,
            &targets,
            self.config.loss_include_query,
        )?;
        if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let grad_norm = clip_global_norm(&mut lg.grad, self.config.grad_clip);
        self.optimizer.update(
            self.params.as_mut_slice(),
            &lg.grad,
            self.config.learning_rate,
        )?;
        if self.params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        self.step += 1;
        Ok(StepRecord {
            step,
            loss: lg.loss,
            final_loss: lg.final_loss,
            grad_norm,
            d_start,
            k_start,
        })
    }

    /// Trains until `config.steps` steps are complete, checkpointing to
    /// `checkpoint` every `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        checkpoint: Option<&Path>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<()> {
        self.run_until(self.config.steps, checkpoint, &mut on_step)
    }

    pub fn run_until(
        &mut self,
        until: usize,
        checkpoint: Option<&Path>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<()> {
        while self.step < until {
            let rec = self.train_step()?;
            on_step(&rec);
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint {
                if (every > 0 && self.step.is_multiple_of(every)) || self.step == until {
                    self.save(path)?;
                }
            }
        }
        Ok(())
    }

    /// Writes parameters, optimizer state and configs.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.params,
            Some(&self.optimizer),
            Some(&self.config),
            self.step,
            &self.meta,
        )?;
        Ok(())
    }
}

/// Trains a fresh model for `train.steps` steps.
pub fn train(
    model: &ModelConfig,
    train: &TrainConfig,
    dist: &PromptDistribution,
    checkpoint: Option<&Path>,
) -> Result<(Params<f32>, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(model, train, dist)?;
    let mut history = Vec::with_capacity(train.steps);
    trainer.run(checkpoint, |r| history.push(r.clone()))?;
    Ok((trainer.into_params(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::checkpoint::load_checkpoint;
    use crate::transformer::config::Curriculum;

    fn setup() -> (ModelConfig, TrainConfig, PromptDistribution) {
        let model = ModelConfig {
            layers: 2,
            heads: 2,
            hidden: 16,
            token_dim: 3,
            max_positions: 11,
            seed: 1,
        };
        let train = TrainConfig {
            steps: 12,
            batch_size: 8,
            learning_rate: 1e-3,
            curriculum: Curriculum {
                d_start_init: 1,
                k_start_init: 2,
                period: 4,
                d_step: -1,
                k_step: 1,
            },
            checkpoint_every: 5,
            ..TrainConfig::desk(3)
        };
        (model, train, PromptDistribution::full(3, 5))
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let (model, train_cfg, dist) = setup();
        let (full_params, full) = train(&model, &train_cfg, &dist, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let mut first = Trainer::new(&model, &train_cfg, &dist).unwrap();
        first.run_until(7, Some(&path), |_| {}).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.header.step, 7);
        let mut resumed = Trainer::resume(ck, &dist).unwrap();
        let mut tail = Vec::new();
        resumed.run(None, |r| tail.push(r.clone())).unwrap();
        assert_eq!(tail, full[7..].to_vec());
        assert_eq!(resumed.params(), &full_params);
    }

    #[test]
    fn curriculum_shapes_the_batches() {
        let (model, train_cfg, dist) = setup();
        let t = Trainer::new(&model, &train_cfg, &dist).unwrap();
        let (seqs, targets) = t.batch(0).unwrap();
        assert_eq!(seqs.len(), 8);
        assert_eq!(seqs[0].len(), 5);
        assert_eq!(targets[0].len(), 3);
        assert!(seqs
            .iter()
            .all(|s| s.x_positions.iter().all(|&p| s.tokens[(p, 2)] == 0.0)));
        let (late, _) = t.batch(100).unwrap();
        assert_eq!(late[0].len(), 11);
    }

    #[test]
    fn inactive_curriculum_keeps_full_prompts() {
        let (model, mut train_cfg, dist) = setup();
        train_cfg.curriculum = Curriculum::inactive(5);
        let t = Trainer::new(&model, &train_cfg, &dist).unwrap();
        for step in [0, 3, 50] {
            let (seqs, targets) = t.batch(step).unwrap();
            let seed = derive_seed(train_cfg.seed, &[step as u64, 0]);
            let raw = sample_prompt(&dist, seed).unwrap();
            assert_eq!(seqs[0], tokenize(&raw));
            assert_eq!(targets[0], raw.ys);
        }
    }

    #[test]
    fn one_input_scale_per_batch() {
        let (model, mut train_cfg, dist) = setup();
        train_cfg.curriculum = Curriculum::inactive(5);
        train_cfg.input_scales = vec![1.0, 2.0, 3.0];
        let t = Trainer::new(&model, &train_cfg, &dist).unwrap();
        let mut seen = [0usize; 3];
        for step in 0..300 {
            let s = t.step_scale(step).unwrap();
            seen[s as usize - 1] += 1;
        }
        assert!(seen.iter().all(|&n| n > 60), "{seen:?}");
        for step in [0, 1] {
            let s = t.step_scale(step).unwrap();
            let (seqs, _) = t.batch(step).unwrap();
            for (b, seq) in seqs.iter().enumerate() {
                let seed = derive_seed(train_cfg.seed, &[step as u64, b as u64]);
                assert_eq!(
                    seq,
                    &tokenize(&sample_prompt(&dist.clone().with_scale(s), seed).unwrap())
                );
            }
        }
        train_cfg.input_scales.clear();
        assert_eq!(
            Trainer::new(&model, &train_cfg, &dist)
                .unwrap()
                .step_scale(0),
            None
        );
    }

    #[test]
    fn loss_decreases_on_a_short_run() {
        let (model, mut train_cfg, dist) = setup();
        train_cfg.steps = 150;
        train_cfg.curriculum = Curriculum::inactive(5);
        let (_, hist) = train(&model, &train_cfg, &dist, None).unwrap();
        let head: f64 = hist[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        let tail: f64 = hist[130..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        assert!(tail < head, "loss went from {head} to {tail}");
    }

    #[test]
    fn divergence_reports_the_step() {
        let (model, mut train_cfg, dist) = setup();
        train_cfg.learning_rate = 1e30;
        train_cfg.grad_clip = 0.0;
        let err = train(&model, &train_cfg, &dist, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let (mut model, train_cfg, dist) = setup();
        model.max_positions = 7;
        assert!(Trainer::new(&model, &train_cfg, &dist).is_err());
    }
}
