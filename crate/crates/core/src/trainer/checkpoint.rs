use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, TrainConfig, TrainError};
use crate::encoder::{hash_values, Parameters, TensorSpec};
use crate::features::NormStats;

const MAGIC: &[u8; 4] = b"MCKP";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub step: usize,
    pub config: TrainConfig,
    pub layout: Vec<TensorSpec>,
    pub param_hash: String,
    pub teacher_hash: String,
    pub norm: NormStats,
    pub corpus_fingerprint: String,
    pub machine_classes: Vec<String>,
    pub noise_classes: Vec<String>,
}

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Parameters,
    pub teacher: Parameters,
    pub optim: AdamW,
}

fn corrupt(m: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint(m.into())
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// `MCKP`, version byte, u32 LE header length, JSON header, then params,
    /// first moments, second moments and teacher weights as LE f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| corrupt(e.to_string()))?;
        let n = self.params.len();
        let mut out = Vec::with_capacity(9 + header.len() + 4 * n * 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        push_f64s(&mut out, &self.params.values);
        push_f64s(&mut out, &self.optim.m);
        push_f64s(&mut out, &self.optim.v);
        push_f64s(&mut out, &self.teacher.values);
        let path = path.as_ref();
        let tmp = path.with_extension("bin.tmp");
        fs::write(&tmp, out)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader, TrainError> {
        let bytes = fs::read(path)?;
        Ok(split(&bytes)?.0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let bytes = fs::read(path)?;
        let (header, body) = split(&bytes)?;
        let config = &header.config;
        let layout = config.encoder.layout();
        if layout != header.layout {
            return Err(corrupt("layout does not match the stored encoder config"));
        }
        let n = layout.last().map_or(0, |s| s.offset + s.len());
        if body.len() != 4 * n * 8 {
            return Err(corrupt(format!("body holds {} bytes, expected {}", body.len(), 4 * n * 8)));
        }
        let mut arrays = body.chunks_exact(n * 8).map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>()
        });
        let mut next = || arrays.next().unwrap_or_default();
        let (values, m, v, teacher_values) = (next(), next(), next(), next());
        if hash_values(&values) != header.param_hash {
            return Err(corrupt("parameter hash mismatch"));
        }
        if hash_values(&teacher_values) != header.teacher_hash {
            return Err(corrupt("teacher hash mismatch"));
        }
        let params = Parameters {
            config: config.encoder.clone(),
            layout: layout.clone(),
            values,
        };
        let teacher = Parameters {
            values: teacher_values,
            ..params.clone()
        };
        let optim = AdamW {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m,
            v,
            t: header.step as u64,
        };
        Ok(Self {
            header,
            params,
            teacher,
            optim,
        })
    }

    /// Loads and insists the checkpoint was written under `config`.
    pub fn load_for(path: impl AsRef<Path>, config: &TrainConfig) -> Result<Self, TrainError> {
        let ck = Self::load(path)?;
        if !same_run(&ck.header.config, config) {
            return Err(corrupt("checkpoint was written under a different training config"));
        }
        Ok(ck)
    }
}

/// Equal up to the head width, which the trainer derives from the corpus.
fn same_run(stored: &TrainConfig, requested: &TrainConfig) -> bool {
    let mut a = stored.clone();
    let mut b = requested.clone();
    a.encoder.n_classes = 0;
    b.encoder.n_classes = 0;
    a.checkpoint_every = 0;
    b.checkpoint_every = 0;
    a == b
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), TrainError> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing MCKP magic"));
    }
    if bytes[4] != VERSION {
        return Err(corrupt(format!("unsupported version {}", bytes[4])));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 9 + hlen {
        return Err(corrupt("truncated header"));
    }
    let header = serde_json::from_slice(&bytes[9..9 + hlen]).map_err(|e| corrupt(e.to_string()))?;
    Ok((header, &bytes[9 + hlen..]))
}
