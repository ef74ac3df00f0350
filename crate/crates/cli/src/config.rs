//! Flat TOML experiment configs. Every key is optional; unset keys take the
//! preset value.

use std::path::{Path, PathBuf};

use icl_core::baselines::{Baseline, BaselineConfig};
use icl_core::ooddetect::DetectorConfig;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, HarnessError, Result};

/// Scale grid of the input-scaling experiment.
pub const SCALE_GRID: [f64; 8] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 5.0, 10.0];
/// Input scales of the multi-scale trained model.
pub const MULTISCALE_TRAIN: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// d = 8, q = 4, k = 16; 4x4x64 model; 50k steps.
    #[default]
    Desk,
    /// d = 20, q = 10, k = 40; 12x8x256 model; 500k steps.
    Paper,
}

impl Preset {
    pub fn id(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(config_err(format!("unknown preset {s:?} (desk | paper)"))),
        }
    }

    /// `(d, q, k)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Preset::Desk => (8, 4, 16),
            Preset::Paper => (20, 10, 40),
        }
    }

    /// Subspace dimensions of the varying-dimension experiment.
    pub fn vary_q(self) -> Vec<usize> {
        match self {
            Preset::Desk => vec![2, 4, 6],
            Preset::Paper => vec![5, 10, 15],
        }
    }
}

/// Which restriction an experiment studies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Input,
    Weight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the experiment id on the command line when set.
    pub experiment: Option<String>,
    pub preset: Preset,
    pub d: Option<usize>,
    pub q: Option<usize>,
    pub k: Option<usize>,
    /// Seed of the subspace pair `(A, B)`.
    pub pair_seed: u64,
    /// Evaluation seed; training seeds are fixed per registered model.
    pub seed: u64,
    /// Prompts per evaluation distribution.
    pub eval_batch: usize,
    /// Transformers to evaluate; unset uses the experiment's default.
    pub models: Option<Vec<String>>,
    pub baselines: Vec<String>,
    pub variant: Variant,

    pub ridge_lambda: f64,
    pub bayes_tau: f64,
    pub bayes_sigma: f64,
    pub bayes_samples: usize,
    pub kernel_lambda: f64,
    pub kernel_sigma: Option<f64>,
    pub gd_eta: f64,
    pub gd_iters: usize,

    /// Label-noise standard deviation of the noisy-label models; required by
    /// `exp_noise`.
    pub noise_sigma: Option<f64>,
    pub scales: Vec<f64>,
    pub train_scales: Vec<f64>,
    pub blend_grid: Vec<f64>,
    pub vary_q: Option<Vec<usize>>,

    pub pool_size: usize,
    pub detector_fit: usize,
    pub detector_eval: usize,
    pub detector_trials: usize,
    pub confidence: f64,

    pub implicit_prompts: usize,
    /// Query inputs per implicit-weight fit; unset uses `4 d`.
    pub implicit_queries: Option<usize>,

    pub train_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub curriculum: bool,
    pub model_layers: Option<usize>,
    pub model_heads: Option<usize>,
    pub model_hidden: Option<usize>,

    /// Checkpoint cache; unset uses `<out>/../checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let b = BaselineConfig::default();
        let det = DetectorConfig::default();
        Self {
            experiment: None,
            preset: Preset::Desk,
            d: None,
            q: None,
            k: None,
            pair_seed: 1,
            seed: 0,
            eval_batch: 128,
            models: None,
            baselines: vec!["ols".into(), "ridge".into()],
            variant: Variant::Input,
            ridge_lambda: b.ridge_lambda,
            bayes_tau: b.bayes_tau,
            bayes_sigma: b.bayes_sigma,
            bayes_samples: b.bayes_samples,
            kernel_lambda: b.kernel_lambda,
            kernel_sigma: b.kernel_sigma,
            gd_eta: b.gd_eta,
            gd_iters: b.gd_iters,
            noise_sigma: None,
            scales: SCALE_GRID.to_vec(),
            train_scales: MULTISCALE_TRAIN.to_vec(),
            blend_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            vary_q: None,
            pool_size: icl_core::spectra::DEFAULT_POOL,
            detector_fit: det.fit_size,
            detector_eval: det.eval_size,
            detector_trials: det.trials,
            confidence: det.confidence,
            implicit_prompts: 128,
            implicit_queries: None,
            train_steps: None,
            batch_size: None,
            learning_rate: None,
            checkpoint_every: None,
            curriculum: true,
            model_layers: None,
            model_heads: None,
            model_hidden: None,
            checkpoint_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    /// `(d, q, k)` after overrides.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (d, q, k) = self.preset.dims();
        (
            self.d.unwrap_or(d),
            self.q.unwrap_or(q),
            self.k.unwrap_or(k),
        )
    }

    pub fn vary_q(&self) -> Vec<usize> {
        self.vary_q.clone().unwrap_or_else(|| self.preset.vary_q())
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            ridge_lambda: self.ridge_lambda,
            bayes_tau: self.bayes_tau,
            bayes_sigma: self.bayes_sigma,
            bayes_samples: self.bayes_samples,
            kernel_lambda: self.kernel_lambda,
            kernel_sigma: self.kernel_sigma,
            gd_eta: self.gd_eta,
            gd_iters: self.gd_iters,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            fit_size: self.detector_fit,
            eval_size: self.detector_eval,
            trials: self.detector_trials,
            confidence: self.confidence,
            ..DetectorConfig::default()
        }
    }

    pub fn baseline_list(&self) -> Result<Vec<Baseline>> {
        Ok(self
            .baselines
            .iter()
            .map(|s| Baseline::parse(s))
            .collect::<icl_core::Result<_>>()?)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, q, k) = self.dims();
        if d == 0 || k == 0 || q == 0 || q >= d {
            return Err(config_err(format!(
                "need d >= 2, 1 <= q < d and k >= 1, got d={d} q={q} k={k}"
            )));
        }
        if self.eval_batch == 0 {
            return Err(config_err("eval_batch must be positive"));
        }
        if self.blend_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(config_err("blend_grid values must lie in [0, 1]"));
        }
        if self
            .scales
            .iter()
            .chain(&self.train_scales)
            .any(|s| !(*s > 0.0))
        {
            return Err(config_err("scales must be positive"));
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(config_err("noise_sigma must be finite and >= 0"));
            }
        }
        if self.vary_q().iter().any(|&v| v == 0 || v >= d) {
            return Err(config_err("vary_q values must lie in [1, d)"));
        }
        self.baseline_list()?;
        Ok(())
    }
}
