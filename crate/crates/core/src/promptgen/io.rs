//! Prompt batch files.
//!
//! `<stem>.bin` holds, for each prompt in order, `xs` ((k+1)·d values,
//! row-major), `ys` (k+1 values) and `w` (d values), all little-endian `f64`.
//! `<stem>.json` is a [`BatchHeader`] with the shapes and per-prompt metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Prompt, PromptMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const BATCH_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub schema_version: u32,
    pub count: usize,
    pub k: usize,
    pub d: usize,
    /// Order of the per-prompt blocks in the binary file.
    pub layout: Vec<String>,
    pub prompts: Vec<PromptMeta>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn write_batch(stem: &Path, prompts: &[Prompt]) -> Result<BatchHeader> {
    let (k, d) = prompts.first().map_or((0, 0), |p| (p.k(), p.d()));
    if prompts.iter().any(|p| p.k() != k || p.d() != d) {
        return Err(Error::Shape("batch prompts differ in shape".into()));
    }
    let mut bytes = Vec::with_capacity(prompts.len() * ((k + 1) * (d + 1) + d) * 8);
    for p in prompts {
        for v in p.xs.as_slice().iter().chain(&p.ys).chain(&p.w) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = BatchHeader {
        schema_version: BATCH_SCHEMA_VERSION,
        count: prompts.len(),
        k,
        d,
        layout: vec!["xs".into(), "ys".into(), "w".into()],
        prompts: prompts.iter().map(|p| p.meta.clone()).collect(),
    };
    fs::write(with_ext(stem, "bin"), bytes)?;
    fs::write(with_ext(stem, "json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(header)
}

pub fn read_batch(stem: &Path) -> Result<Vec<Prompt>> {
    let header: BatchHeader = serde_json::from_slice(&fs::read(with_ext(stem, "json"))?)?;
    if header.schema_version != BATCH_SCHEMA_VERSION {
        return Err(Error::Shape(format!(
            "unsupported batch schema version {}",
            header.schema_version
        )));
    }
    let bytes = fs::read(with_ext(stem, "bin"))?;
    let (k, d) = (header.k, header.d);
    let per = (k + 1) * d + (k + 1) + d;
    if bytes.len() != header.count * per * 8 || header.prompts.len() != header.count {
        return Err(Error::Shape(
            "batch binary size does not match its header".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    values
        .chunks_exact(per)
        .zip(header.prompts)
        .map(|(block, meta)| {
            let (xs, rest) = block.split_at((k + 1) * d);
            let (ys, w) = rest.split_at(k + 1);
            Prompt::new(
                Matrix::new(k + 1, d, xs.to_vec())?,
                ys.to_vec(),
                w.to_vec(),
                meta,
            )
        })
        .collect()
}

/// One row per (prompt, position): `prompt, seed, tag, position, y, target, x0..`.
pub fn write_batch_csv<W: Write>(out: W, prompts: &[Prompt]) -> Result<()> {
    let d = prompts.first().map_or(0, Prompt::d);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "prompt".to_string(),
        "seed".into(),
        "tag".into(),
        "position".into(),
        "y".into(),
        "target".into(),
    ];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (pi, p) in prompts.iter().enumerate() {
        let targets = p.targets();
        for i in 0..p.xs.rows() {
            let mut rec = vec![
                pi.to_string(),
                p.meta.seed.to_string(),
                p.meta.tag.clone(),
                (i + 1).to_string(),
                p.ys[i].to_string(),
                targets[i].to_string(),
            ];
            rec.extend(p.x(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::{sample_batch, PromptDistribution};

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("batch");
        let prompts = sample_batch(&PromptDistribution::full(3, 4).with_noise(0.2), 5, 9).unwrap();
        let header = write_batch(&stem, &prompts).unwrap();
        assert_eq!(header.count, 5);
        assert_eq!(
            fs::metadata(with_ext(&stem, "bin")).unwrap().len(),
            5 * (5 * 3 + 5 + 3) * 8
        );
        assert_eq!(read_batch(&stem).unwrap(), prompts);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("b");
        let prompts = sample_batch(&PromptDistribution::full(2, 2), 2, 1).unwrap();
        write_batch(&stem, &prompts).unwrap();
        let bin = with_ext(&stem, "bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&bin, bytes).unwrap();
        assert!(read_batch(&stem).is_err());
    }

    #[test]
    fn csv_has_one_row_per_position() {
        let prompts = sample_batch(&PromptDistribution::full(2, 3), 2, 1).unwrap();
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &prompts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.starts_with("prompt,seed,tag,position,y,target,x0,x1"));
    }
}
