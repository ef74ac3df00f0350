//! Registered transformers: distribution, architecture, optimizer and seeds of
//! every model an experiment can load or train.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icl_core::promptgen::make_subspace_pair;
use icl_core::transformer::{
    load_checkpoint, read_header, Curriculum, ModelConfig, Params, StepRecord, TrainConfig, Trainer,
};
use icl_core::{PromptDistribution, SubspacePair};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Preset};
use crate::error::{config_err, HarnessError, Result};

/// Names accepted by [`model_spec`]; `t_weight_q<N>` is also accepted.
pub const MODEL_NAMES: [&str; 6] = [
    "t_par",
    "t_weight",
    "t_full",
    "t_full_noisy",
    "t_par_noisy",
    "t_full_multiscale",
];

#[derive(Clone, Debug, Serialize)]
pub struct ModelSpec {
    pub name: String,
    pub dist: PromptDistribution,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub meta: BTreeMap<String, String>,
}

impl ModelSpec {
    /// Short digest of everything that determines the trained weights.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serializes");
        hex::encode(&Sha256::digest(&json)[..6])
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}.ckpt", self.name, self.digest())
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

/// Subspace pair of the base `(d, q)` of a config.
pub fn subspace_pair(cfg: &ExperimentConfig) -> Result<SubspacePair> {
    let (d, q, _) = cfg.dims();
    Ok(make_subspace_pair(d, q, cfg.pair_seed)?)
}

/// Weight-restricted model of the varying-dimension runs at subspace dimension `q`.
pub fn vary_dim_model(cfg: &ExperimentConfig, q: usize) -> String {
    if q == cfg.dims().1 {
        "t_weight".into()
    } else {
        format!("t_weight_q{q}")
    }
}

fn seeds(name: &str) -> Option<(u64, u64)> {
    Some(match name {
        "t_par" => (11, 21),
        "t_weight" => (12, 22),
        "t_full" => (13, 23),
        "t_full_noisy" => (14, 24),
        "t_par_noisy" => (15, 25),
        "t_full_multiscale" => (16, 26),
        _ => {
            let q: u64 = name.strip_prefix("t_weight_q")?.parse().ok()?;
            (100 + q, 200 + q)
        }
    })
}

pub fn model_spec(name: &str, cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let (model_seed, data_seed) =
        seeds(name).ok_or_else(|| HarnessError::UnknownModel(name.into()))?;
    let (d, _, k) = cfg.dims();
    let pair = subspace_pair(cfg)?;
    let noise = || {
        cfg.noise_sigma.ok_or_else(|| {
            config_err(format!(
                "{name} is trained on noisy labels; set noise_sigma"
            ))
        })
    };
    let mut train_scales = Vec::new();
    let dist = match name {
        "t_par" => PromptDistribution::input_restricted(d, k, &pair.p_a, "d_par"),
        "t_weight" => PromptDistribution::weight_restricted(d, k, &pair.p_a, "d_weight_a"),
        "t_full" => PromptDistribution::full(d, k),
        "t_full_noisy" => PromptDistribution::full(d, k).with_noise(noise()?),
        "t_par_noisy" => {
            PromptDistribution::input_restricted(d, k, &pair.p_a, "d_par").with_noise(noise()?)
        }
        "t_full_multiscale" => {
            train_scales = cfg.train_scales.clone();
            PromptDistribution::full(d, k)
        }
        _ => {
            let qn = (model_seed - 100) as usize;
            if qn == 0 || qn >= d {
                return Err(config_err(format!(
                    "{name}: subspace dimension must lie in [1, {d})"
                )));
            }
            let p = make_subspace_pair(d, qn, cfg.pair_seed)?;
            PromptDistribution::weight_restricted(d, k, &p.p_a, &format!("d_weight_a_q{qn}"))
        }
    };
    let mut model = match cfg.preset {
        Preset::Desk => ModelConfig::desk(d, k, model_seed),
        Preset::Paper => ModelConfig::paper(d, k, model_seed),
    };
    if let Some(v) = cfg.model_layers {
        model.layers = v;
    }
    if let Some(v) = cfg.model_heads {
        model.heads = v;
    }
    if let Some(v) = cfg.model_hidden {
        model.hidden = v;
    }
    model.validate()?;
    let mut train = match cfg.preset {
        Preset::Desk => TrainConfig::desk(data_seed),
        Preset::Paper => TrainConfig::paper(data_seed),
    };
    if let Some(v) = cfg.train_steps {
        train.steps = v;
    }
    if let Some(v) = cfg.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = cfg.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = cfg.checkpoint_every {
        train.checkpoint_every = v;
    }
    if !cfg.curriculum {
        train.curriculum = Curriculum::inactive(k);
    }
    train.input_scales = train_scales;
    train.validate()?;
    let meta = BTreeMap::from([("model".to_string(), name.to_string())]);
    Ok(ModelSpec {
        name: name.into(),
        dist,
        model,
        train,
        meta,
    })
}

/// State of a cached checkpoint relative to its spec.
#[derive(Debug, PartialEq, Eq)]
pub enum CacheState {
    Missing,
    /// Same configs, fewer than `train.steps` steps.
    Partial(usize),
    Complete,
    /// Header disagrees with the `ModelSpec`.
    Stale(String),
}

pub fn cache_state(spec: &ModelSpec, path: &Path) -> CacheState {
    if !path.exists() {
        return CacheState::Missing;
    }
    let header = match read_header(path) {
        Ok(h) => h,
        Err(e) => return CacheState::Stale(e.to_string()),
    };
    if header.model != spec.model {
        return CacheState::Stale("model config differs".into());
    }
    if header.train.as_ref() != Some(&spec.train) {
        return CacheState::Stale("training config differs".into());
    }
    if header.meta.get("model") != spec.meta.get("model") {
        return CacheState::Stale("model name differs".into());
    }
    match header.step {
        s if s == spec.train.steps => CacheState::Complete,
        s if s < spec.train.steps => CacheState::Partial(s),
        s => CacheState::Stale(format!(
            "checkpoint has {s} steps, expected {}",
            spec.train.steps
        )),
    }
}

/// Loads the trained model of `spec` from `dir`, training (or resuming) it
/// first when allowed.
pub fn load_or_train(
    spec: &ModelSpec,
    dir: &Path,
    train_first: bool,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<(Params<f32>, PathBuf)> {
    let path = spec.path_in(dir);
    let missing = || HarnessError::MissingCheckpoint {
        model: spec.name.clone(),
        path: path.clone(),
    };
    let mut trainer = match cache_state(spec, &path) {
        CacheState::Complete => return Ok((load_checkpoint(&path)?.params, path)),
        _ if !train_first => return Err(missing()),
        CacheState::Partial(_) => Trainer::resume(load_checkpoint(&path)?, &spec.dist)?,
        CacheState::Missing | CacheState::Stale(_) => {
            Trainer::new(&spec.model, &spec.train, &spec.dist)?.with_meta(spec.meta.clone())
        }
    };
    std::fs::create_dir_all(dir)?;
    trainer.run(Some(&path), |r| on_step(r))?;
    Ok((trainer.into_params(), path))
}
