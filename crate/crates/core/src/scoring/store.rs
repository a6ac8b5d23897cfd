use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PooledEmbedding, ScoringError};
use crate::metrics::Domain;

const MAGIC: &[u8; 4] = b"MRES";
const VERSION: u8 = 1;

/// Normal reference embeddings of one machine type. Iteration yields source
/// references first, then target references, each in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStore {
    pub machine_type: String,
    pub layer: usize,
    source: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    machine_type: String,
    layer: usize,
    n_source: usize,
    n_target: usize,
    dim: usize,
}

impl ReferenceStore {
    pub fn new(machine_type: impl Into<String>, layer: usize) -> Self {
        Self {
            machine_type: machine_type.into(),
            layer,
            source: Vec::new(),
            target: Vec::new(),
        }
    }

    pub fn push(&mut self, e: &PooledEmbedding, domain: Domain) -> Result<(), ScoringError> {
        if e.source_layer != self.layer {
            return Err(ScoringError::ShapeMismatch(format!(
                "embedding from layer {} pushed into a layer-{} store",
                e.source_layer, self.layer
            )));
        }
        if !self.is_empty() && e.values.len() != self.dim() {
            return Err(ScoringError::ShapeMismatch(format!(
                "embedding dim {} vs store dim {}",
                e.values.len(),
                self.dim()
            )));
        }
        match domain {
            Domain::Source => self.source.push(e.values.clone()),
            Domain::Target => self.target.push(e.values.clone()),
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.source.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn dim(&self) -> usize {
        self.source
            .first()
            .or(self.target.first())
            .map_or(0, |v| v.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Domain)> {
        self.source
            .iter()
            .map(|v| (v.as_slice(), Domain::Source))
            .chain(self.target.iter().map(|v| (v.as_slice(), Domain::Target)))
    }

    /// `MRES`, version byte, u32 LE header length, JSON header, then a
    /// row-major little-endian f32 matrix.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScoringError> {
        let header = serde_json::to_vec(&StoreHeader {
            machine_type: self.machine_type.clone(),
            layer: self.layer,
            n_source: self.n_source(),
            n_target: self.n_target(),
            dim: self.dim(),
        })
        .map_err(|e| ScoringError::CorruptStore(e.to_string()))?;
        let mut f = fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&[VERSION])?;
        f.write_all(&(header.len() as u32).to_le_bytes())?;
        f.write_all(&header)?;
        let mut body = Vec::with_capacity(self.len() * self.dim() * 4);
        for (row, _) in self.iter() {
            for v in row {
                body.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        f.write_all(&body)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoringError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let corrupt = |m: &str| ScoringError::CorruptStore(m.to_string());
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing MRES magic"));
        }
        if bytes[4] != VERSION {
            return Err(corrupt("unsupported version"));
        }
        let hlen = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        let body_start = 9 + hlen;
        if bytes.len() < body_start {
            return Err(corrupt("truncated header"));
        }
        let header: StoreHeader = serde_json::from_slice(&bytes[9..body_start])
            .map_err(|e| ScoringError::CorruptStore(e.to_string()))?;
        let n = header.n_source + header.n_target;
        if bytes.len() - body_start != n * header.dim * 4 {
            return Err(corrupt("matrix size does not match header"));
        }
        let mut rows = bytes[body_start..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect::<Vec<_>>()
            .chunks(header.dim.max(1))
            .map(|c| c.to_vec())
            .collect::<Vec<_>>();
        if header.dim == 0 {
            rows = vec![Vec::new(); n];
        }
        let target = rows.split_off(header.n_source);
        Ok(Self {
            machine_type: header.machine_type,
            layer: header.layer,
            source: rows,
            target,
        })
    }
}
