//! Checkpoint files.
//!
//! Layout: the magic bytes `ICLCKPT\0`, a little-endian `u64` header length,
//! a JSON [`CheckpointHeader`], then little-endian `f32` arrays. Every array
//! is listed in `header.tensors` with its element offset into that data
//! section. Parameters come first in layout order, followed by the optimizer
//! moments (`adam.m.*`, `adam.v.*`) when present.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::optim::AdamW;
use super::params::{Params, TensorInfo};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICLCKPT\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    /// Completed optimization steps.
    pub step: usize,
    pub init_seed: u64,
    pub data_seed: Option<u64>,
    pub optimizer: Option<OptimizerHeader>,
    /// Free-form labels, e.g. the training distribution.
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Params<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(
    path: &Path,
    params: &Params<f32>,
    optimizer: Option<&AdamW<f32>>,
    train: Option<&TrainConfig>,
    step: usize,
    meta: &BTreeMap<String, String>,
) -> Result<CheckpointHeader> {
    let mut tensors = params.tensors().to_vec();
    let n = params.len();
    if let Some(opt) = optimizer {
        if opt.m.len() != n || opt.v.len() != n {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        for (prefix, base) in [("adam.m.", n), ("adam.v.", 2 * n)] {
            tensors.extend(params.tensors().iter().map(|t| TensorInfo {
                name: format!("{prefix}{}", t.name),
                shape: t.shape.clone(),
                offset: base + t.offset,
                len: t.len,
            }));
        }
    }
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        dtype: "f32".into(),
        model: params.config().clone(),
        train: train.cloned(),
        step,
        init_seed: params.config().seed,
        data_seed: train.map(|t| t.seed),
        optimizer: optimizer.map(|o| OptimizerHeader {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            t: o.t,
        }),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let values = n * if optimizer.is_some() { 3 } else { 1 };
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * values);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    let mut put = |xs: &[f32]| {
        xs.iter()
            .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()))
    };
    put(params.as_slice());
    if let Some(opt) = optimizer {
        put(&opt.m);
        put(&opt.v);
    }
    write_atomic(path, &bytes)?;
    Ok(header)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    Ok(split(&bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(hlen))
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    if header.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    Ok((header, &bytes[16 + hlen..]))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let (header, data) = split(&bytes)?;
    if data.len() % 4 != 0 {
        return Err(Error::Checkpoint(
            "data section is not a whole number of f32 values".into(),
        ));
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let template = Params::<f32>::init(&header.model)?;
    let gather = |prefix: &str| -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(template.len());
        for t in template.tensors() {
            let name = format!("{prefix}{}", t.name);
            let info = header
                .tensors
                .iter()
                .find(|i| i.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if info.shape != t.shape || info.len != t.len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}",
                    info.shape
                )));
            }
            let slice = values
                .get(info.offset..info.offset + info.len)
                .ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {name} lies outside the data section"))
                })?;
            out.extend_from_slice(slice);
        }
        Ok(out)
    };
    let params = Params::from_flat(&header.model, gather("")?)?;
    let optimizer = match &header.optimizer {
        Some(o) => Some(AdamW {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            t: o.t,
            m: gather("adam.m.")?,
            v: gather("adam.v.")?,
        }),
        None => None,
    };
    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}
