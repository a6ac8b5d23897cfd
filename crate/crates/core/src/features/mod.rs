//! Log-mel front end, corpus normalization and SpecAugment.

mod augment;
mod mel;

pub use augment::{spec_augment, spec_augment_with, SpecAugmentConfig};
pub use mel::{extract_logmel, mel_bin_edges_hz, LogMelExtractor, LOG_FLOOR, N_MELS};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_SHIFT_MS: f64 = 10.0;
pub const WINDOW_MS: f64 = 25.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("waveform too short: {0} samples, need at least one {1}-sample window")]
    TooShort(usize, usize),
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),
    #[error("normalization statistics are degenerate (zero variance)")]
    DegenerateStats,
    #[error("empty feature collection")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("I/O failure: {0}")]
    Io(String),
}

/// `t_frames x n_mels` log-mel matrix, stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFeatures {
    pub values: Vec<f64>,
    pub t_frames: usize,
    pub n_mels: usize,
}

impl MelFeatures {
    pub fn new(values: Vec<f64>, t_frames: usize, n_mels: usize) -> Result<Self, FeatureError> {
        if values.len() != t_frames * n_mels {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} values for {t_frames}x{n_mels}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            t_frames,
            n_mels,
        })
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.values[t * self.n_mels + m]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Writes little-endian f32 values to `path` and a JSON sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(io)?;
        let sidecar = FeatureSidecar {
            t_frames: self.t_frames,
            n_mels: self.n_mels,
            frame_shift_ms: FRAME_SHIFT_MS,
            window_ms: WINDOW_MS,
        };
        let mut f = fs::File::create(sidecar_path(path)).map_err(io)?;
        serde_json::to_writer_pretty(&mut f, &sidecar).map_err(|e| FeatureError::Io(e.to_string()))?;
        f.write_all(b"\n").map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let sidecar: FeatureSidecar = serde_json::from_slice(&fs::read(sidecar_path(path)).map_err(io)?)
            .map_err(|e| FeatureError::Io(e.to_string()))?;
        let bytes = fs::read(path).map_err(io)?;
        if bytes.len() != sidecar.t_frames * sidecar.n_mels * 4 {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} bytes for {}x{} f32 matrix",
                bytes.len(),
                sidecar.t_frames,
                sidecar.n_mels
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(values, sidecar.t_frames, sidecar.n_mels)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub t_frames: usize,
    pub n_mels: usize,
    pub frame_shift_ms: f64,
    pub window_ms: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

fn io(e: std::io::Error) -> FeatureError {
    FeatureError::Io(e.to_string())
}

/// Global scalar normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };
}

pub fn fit_norm<'a>(
    features: impl IntoIterator<Item = &'a MelFeatures>,
) -> Result<NormStats, FeatureError> {
    let all: Vec<&MelFeatures> = features.into_iter().collect();
    let n: usize = all.iter().map(|f| f.values.len()).sum();
    if n == 0 {
        return Err(FeatureError::Empty);
    }
    let mean = all.iter().flat_map(|f| f.values.iter()).sum::<f64>() / n as f64;
    let var = all
        .iter()
        .flat_map(|f| f.values.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(FeatureError::DegenerateStats);
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm(f: &MelFeatures, stats: &NormStats) -> MelFeatures {
    MelFeatures {
        values: f.values.iter().map(|v| (v - stats.mean) / stats.std).collect(),
        t_frames: f.t_frames,
        n_mels: f.n_mels,
    }
}

pub fn invert_norm(f: &MelFeatures, stats: &NormStats) -> MelFeatures {
    MelFeatures {
        values: f.values.iter().map(|v| v * stats.std + stats.mean).collect(),
        t_frames: f.t_frames,
        n_mels: f.n_mels,
    }
}

/// Log-mel of the same clip scaled by `gain`: every bin above the floor moves
/// by `2 ln(gain)`. Bins already at the floor stay clamped there.
pub fn shift_gain(f: &MelFeatures, gain: f64) -> MelFeatures {
    let shift = 2.0 * gain.ln();
    MelFeatures {
        values: f
            .values
            .iter()
            .map(|v| if *v <= LOG_FLOOR { LOG_FLOOR } else { (v + shift).max(LOG_FLOOR) })
            .collect(),
        t_frames: f.t_frames,
        n_mels: f.n_mels,
    }
}
