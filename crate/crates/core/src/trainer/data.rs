use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::audio::{synthesize, AudioError, Waveform};
use crate::corpus::{MachineType, NoiseClass, PRETRAIN_MACHINE_TYPES, PRETRAIN_NOISE_CLASSES};
use crate::par::{self, Execution};
use crate::rng::{derive, label_hash};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusClip {
    pub id: String,
    pub class_index: usize,
    pub waveform: Waveform,
}

/// Clean machine clips labelled with one of C classes and noise clips labelled
/// with one of N classes. All clips share one length.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub machine_classes: Vec<String>,
    pub noise_classes: Vec<String>,
    pub machines: Vec<CorpusClip>,
    pub noises: Vec<CorpusClip>,
}

impl PretrainCorpus {
    /// Noise clips are truncated or zero-padded to the machine clip length.
    pub fn new(
        machine_classes: Vec<String>,
        noise_classes: Vec<String>,
        machines: Vec<CorpusClip>,
        mut noises: Vec<CorpusClip>,
    ) -> Result<Self, TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if machines.is_empty() || noises.is_empty() {
            return bad("corpus needs machine and noise clips".into());
        }
        let len = machines[0].waveform.len();
        if machines.iter().any(|c| c.waveform.len() != len) {
            return bad("machine clips differ in length".into());
        }
        for (clips, n) in [(&machines, machine_classes.len()), (&noises, noise_classes.len())] {
            if let Some(c) = clips.iter().find(|c| c.class_index >= n) {
                return bad(format!("clip {} has class {} of {n}", c.id, c.class_index));
            }
        }
        let counts = count(&machines, machine_classes.len());
        if let Some(k) = counts.iter().position(|c| *c == 0) {
            return Err(TrainError::EmptyClass(k));
        }
        for c in noises.iter_mut() {
            if c.waveform.len() != len {
                c.waveform = c.waveform.fit_length(len);
            }
        }
        Ok(Self {
            machine_classes,
            noise_classes,
            machines,
            noises,
        })
    }

    pub fn c_machines(&self) -> usize {
        self.machine_classes.len()
    }

    pub fn n_noises(&self) -> usize {
        self.noise_classes.len()
    }

    pub fn machine_class_counts(&self) -> Vec<usize> {
        count(&self.machines, self.c_machines())
    }

    pub fn clip_len(&self) -> usize {
        self.machines[0].waveform.len()
    }

    /// Hash of class names, clip ids and clip lengths.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in self.machine_classes.iter().chain(&self.noise_classes) {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for c in self.machines.iter().chain(&self.noises) {
            h.update(c.id.as_bytes());
            h.update((c.class_index as u64).to_le_bytes());
            h.update((c.waveform.len() as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn count(clips: &[CorpusClip], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for c in clips {
        counts[c.class_index] += 1;
    }
    counts
}

/// Synthetic pre-training corpus: one class per (machine type, attribute).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Pre-training machine types by name; empty means all of them.
    pub machine_types: Vec<String>,
    pub attributes_per_type: usize,
    /// Clips of the smallest class; class k gets `(1 + k % 3)` times as many.
    pub clips_per_class: usize,
    /// Noise classes by name; empty means all pre-training noise classes.
    pub noise_classes: Vec<String>,
    pub clips_per_noise_class: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            machine_types: Vec::new(),
            attributes_per_type: 4,
            clips_per_class: 4,
            noise_classes: Vec::new(),
            clips_per_noise_class: 24,
            duration_s: 2.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    fn machine_types(&self) -> Result<Vec<&'static MachineType>, TrainError> {
        if self.machine_types.is_empty() {
            return Ok(PRETRAIN_MACHINE_TYPES.iter().collect());
        }
        self.machine_types
            .iter()
            .map(|n| {
                PRETRAIN_MACHINE_TYPES
                    .iter()
                    .find(|m| m.name == n)
                    .ok_or_else(|| TrainError::InvalidConfig(format!("unknown pre-training machine type {n}")))
            })
            .collect()
    }

    fn noise_classes(&self) -> Result<Vec<&'static NoiseClass>, TrainError> {
        if self.noise_classes.is_empty() {
            return Ok(PRETRAIN_NOISE_CLASSES.iter().collect());
        }
        self.noise_classes
            .iter()
            .map(|n| {
                PRETRAIN_NOISE_CLASSES
                    .iter()
                    .find(|c| c.name == n)
                    .ok_or_else(|| TrainError::InvalidConfig(format!("unknown pre-training noise class {n}")))
            })
            .collect()
    }
}

/// Renders the corpus described by `spec`; clip audio depends only on the spec.
pub fn synth_corpus(spec: &CorpusSpec, mode: Execution) -> Result<PretrainCorpus, TrainError> {
    if spec.attributes_per_type == 0 || spec.clips_per_class == 0 || spec.clips_per_noise_class == 0 {
        return Err(TrainError::InvalidConfig("corpus counts must be positive".into()));
    }
    let types = spec.machine_types()?;
    let noise_types = spec.noise_classes()?;

    let mut machine_classes = Vec::new();
    let mut machine_jobs = Vec::new();
    for m in &types {
        for attr in 0..spec.attributes_per_type {
            let k = machine_classes.len();
            machine_classes.push(format!("{}/attr{attr}", m.name));
            for i in 0..spec.clips_per_class * (1 + k % 3) {
                let seed = derive(spec.seed, &[label_hash(m.name), attr as u64, i as u64]);
                machine_jobs.push((format!("{}/attr{attr}/{i}", m.name), k, m.clip(attr, None, seed, spec.duration_s)));
            }
        }
    }
    let mut noise_jobs = Vec::new();
    for (k, n) in noise_types.iter().enumerate() {
        for i in 0..spec.clips_per_noise_class {
            let seed = derive(spec.seed, &[label_hash(n.name), i as u64]);
            noise_jobs.push((format!("{}:{i}", n.name), k, n.clip(seed, spec.duration_s)));
        }
    }

    let render = |jobs: &[(String, usize, crate::audio::SynthSpec)]| -> Result<Vec<CorpusClip>, AudioError> {
        par::try_map(mode, jobs, |(id, k, s)| {
            Ok(CorpusClip {
                id: id.clone(),
                class_index: *k,
                waveform: synthesize(s)?,
            })
        })
    };
    PretrainCorpus::new(
        machine_classes,
        noise_types.iter().map(|n| n.name.to_string()).collect(),
        render(&machine_jobs)?,
        render(&noise_jobs)?,
    )
}

/// Per-class clip counts, for the run manifest.
pub fn class_summary(corpus: &PretrainCorpus) -> BTreeMap<String, usize> {
    corpus
        .machine_classes
        .iter()
        .cloned()
        .zip(corpus.machine_class_counts())
        .collect()
}
