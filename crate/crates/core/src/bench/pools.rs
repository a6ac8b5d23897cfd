use serde::{Deserialize, Serialize};

use super::{factory_noise, BenchError, SplitCounts};
use crate::audio::{synthesize, NoiseKind, Waveform};
use crate::corpus::{AnomalySpec, MachineType, EVAL_MACHINE_TYPES};
use crate::metrics::Domain;
use crate::par::{self, Execution};
use crate::rng::{derive, label_hash};

/// Attributes of source-domain clips; the target domain runs at `TARGET_ATTRIBUTE`.
const SOURCE_ATTRIBUTES: usize = 2;
const TARGET_ATTRIBUTE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MachineClip {
    pub id: String,
    pub machine_type: String,
    pub domain: Domain,
    pub is_anomalous: bool,
    pub seed: u64,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, Default)]
pub struct MachinePool {
    pub clips: Vec<MachineClip>,
}

impl MachinePool {
    /// Indices of clips matching the selector, in pool order.
    pub fn select(&self, machine_type: &str, domain: Domain, is_anomalous: bool) -> Vec<usize> {
        self.clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.machine_type == machine_type && c.domain == domain && c.is_anomalous == is_anomalous)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn machine_types(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.clips {
            if !out.contains(&c.machine_type) {
                out.push(c.machine_type.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    /// `class:index`, e.g. `factory_b:17`.
    pub id: String,
    pub kind: NoiseKind,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, Default)]
pub struct NoisePool {
    pub clips: Vec<NoiseClip>,
}

impl NoisePool {
    pub fn of_kind(&self, kind: NoiseKind) -> Vec<usize> {
        self.clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sizes and sound of the synthetic evaluation pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSpec {
    /// Evaluation machine types; empty means all of them.
    pub machine_types: Vec<String>,
    /// Clean clips per machine type cover one cell of these counts.
    pub counts: SplitCounts,
    pub noise_clips_per_kind: usize,
    pub duration_s: f64,
    /// Gain applied to clean machine clips so low-SNR mixtures stay inside 16-bit range.
    pub level: f64,
    pub anomaly: AnomalySpec,
    pub seed: u64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            machine_types: Vec::new(),
            counts: SplitCounts::default(),
            noise_clips_per_kind: 140,
            duration_s: 2.0,
            level: 0.1,
            anomaly: AnomalySpec::default(),
            seed: 0,
        }
    }
}

impl PoolSpec {
    pub fn machine_types(&self) -> Result<Vec<&'static MachineType>, BenchError> {
        if self.machine_types.is_empty() {
            return Ok(EVAL_MACHINE_TYPES.iter().collect());
        }
        self.machine_types
            .iter()
            .map(|n| {
                EVAL_MACHINE_TYPES
                    .iter()
                    .find(|m| m.name == n)
                    .ok_or_else(|| BenchError::InvalidSpec(format!("unknown evaluation machine type {n}")))
            })
            .collect()
    }
}

/// Normal and anomalous clips per machine type and domain, enough for one cell.
pub fn synth_machine_pool(spec: &PoolSpec, mode: Execution) -> Result<MachinePool, BenchError> {
    let c = spec.counts;
    let groups = [
        (Domain::Source, false, c.ref_source + c.test_source_normal),
        (Domain::Source, true, c.test_source_anomalous),
        (Domain::Target, false, c.ref_target + c.test_target_normal),
        (Domain::Target, true, c.test_target_anomalous),
    ];
    let mut jobs = Vec::new();
    for m in spec.machine_types()? {
        for (domain, anomalous, n) in groups {
            for i in 0..n {
                let seed = derive(spec.seed, &[label_hash(m.name), domain as u64, anomalous as u64, i as u64]);
                let attribute = match domain {
                    Domain::Source => i % SOURCE_ATTRIBUTES,
                    Domain::Target => TARGET_ATTRIBUTE,
                };
                let label = if anomalous { "anomaly" } else { "normal" };
                jobs.push((
                    MachineClip {
                        id: format!("{}/{}/{label}/{i}", m.name, domain.as_str()),
                        machine_type: m.name.to_string(),
                        domain,
                        is_anomalous: anomalous,
                        seed,
                        waveform: Waveform::new(Vec::new(), 0),
                    },
                    m.clip(attribute, anomalous.then_some(&spec.anomaly), seed, spec.duration_s),
                ));
            }
        }
    }
    let clips = par::try_map(mode, &jobs, |(clip, synth)| -> Result<MachineClip, BenchError> {
        Ok(MachineClip {
            waveform: synthesize(synth)?.scaled(spec.level),
            ..clip.clone()
        })
    })?;
    Ok(MachinePool { clips })
}

/// `noise_clips_per_kind` clips of each factory noise.
pub fn synth_noise_pool(spec: &PoolSpec, mode: Execution) -> Result<NoisePool, BenchError> {
    let mut jobs = Vec::new();
    for kind in [NoiseKind::Stationary, NoiseKind::Nonstationary] {
        let class = factory_noise(kind);
        for i in 0..spec.noise_clips_per_kind {
            let seed = derive(spec.seed, &[label_hash(class.name), i as u64]);
            jobs.push((format!("{}:{i}", class.name), kind, class.clip(seed, spec.duration_s)));
        }
    }
    let clips = par::try_map(mode, &jobs, |(id, kind, synth)| -> Result<NoiseClip, BenchError> {
        Ok(NoiseClip {
            id: id.clone(),
            kind: *kind,
            waveform: synthesize(synth)?,
        })
    })?;
    Ok(NoisePool { clips })
}
