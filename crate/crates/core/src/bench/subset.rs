use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BenchError, MachinePool, NoisePool, SubsetSpec};
use crate::audio::{mean_power, mix_at_snr_scalenoise, read_wav, snr_db_from_powers, write_wav, Waveform};
use crate::metrics::Domain;
use crate::par::{self, Execution};
use crate::rng::{label_hash, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Reference,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Reference => "reference",
            Split::Test => "test",
        }
    }
}

/// One mixture clip. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Relative to the dataset directory.
    pub clip_path: String,
    pub machine_type: String,
    pub split: Split,
    pub domain: Domain,
    pub is_anomalous: bool,
    pub snr_db: i64,
    pub noise_clip_id: String,
    /// Seed of the clean machine clip.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| BenchError::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        fs::write(path, self.to_csv_bytes()?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }

    /// SHA-256 of the CSV serialization.
    pub fn hash(&self) -> Result<String, BenchError> {
        Ok(hex::encode(Sha256::digest(self.to_csv_bytes()?)))
    }

    /// Each noise clip at most once per (machine_type, snr_db) cell.
    pub fn check_without_replacement(&self) -> Result<(), BenchError> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert((&r.machine_type, r.snr_db, &r.noise_clip_id)) {
                return Err(BenchError::InvalidSpec(format!(
                    "noise {} reused in cell ({}, {} dB)",
                    r.noise_clip_id, r.machine_type, r.snr_db
                )));
            }
        }
        Ok(())
    }
}

/// Clips of one subset, addressable by manifest row.
pub trait ClipSource: Sync {
    fn subset(&self) -> &str;
    fn rows(&self) -> &[ManifestRow];
    fn mixture(&self, i: usize) -> Result<Waveform, BenchError>;
    /// The scaled clean and scaled noise components whose sum is the mixture,
    /// when they are known.
    fn components(&self, i: usize) -> Result<Option<(Waveform, Waveform)>, BenchError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RowLink {
    clean: usize,
    noise: usize,
    noise_gain: f64,
}

/// A subset held as references into the pools; mixtures are rendered on demand.
#[derive(Debug, Clone)]
pub struct BuiltSubset<'p> {
    pub spec: SubsetSpec,
    pub seed: u64,
    pub manifest: DatasetManifest,
    machines: &'p MachinePool,
    noises: &'p NoisePool,
    links: Vec<RowLink>,
}

/// Sidecar describing a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: SubsetSpec,
    pub seed: u64,
    pub manifest_sha256: String,
    /// Gain applied to each row's noise clip, in manifest order.
    pub noise_gains: Vec<f64>,
}

fn permuted(mut idx: Vec<usize>, seed: u64, parts: &[u64]) -> Vec<usize> {
    idx.shuffle(&mut rng_for(seed, parts));
    idx
}

/// Pairs clean clips with unused noise clips in every (machine type, SNR)
/// cell and mixes them with the clean-referenced SNR convention.
pub fn build_subset<'p>(
    spec: &SubsetSpec,
    machines: &'p MachinePool,
    noises: &'p NoisePool,
    seed: u64,
    mode: Execution,
) -> Result<BuiltSubset<'p>, BenchError> {
    spec.validate()?;
    let types = if spec.machine_types.is_empty() {
        machines.machine_types()
    } else {
        spec.machine_types.clone()
    };
    if types.is_empty() {
        return Err(BenchError::InsufficientMachinePool {
            machine_type: "any".into(),
            what: "clips".into(),
            needed: 1,
            available: 0,
        });
    }

    let ref_kind = spec.reference_noise_kind;
    let test_kind = spec.test_noise_kind;
    let c = spec.counts;
    let need = |kind| {
        (if ref_kind == kind { c.references() } else { 0 }) + (if test_kind == kind { c.tests() } else { 0 })
    };
    for kind in [ref_kind, test_kind] {
        let available = noises.of_kind(kind).len();
        if available < need(kind) {
            return Err(BenchError::InsufficientNoisePool { kind, needed: need(kind), available });
        }
    }

    let groups = [
        (Split::Reference, Domain::Source, false, c.ref_source),
        (Split::Reference, Domain::Target, false, c.ref_target),
        (Split::Test, Domain::Source, false, c.test_source_normal),
        (Split::Test, Domain::Source, true, c.test_source_anomalous),
        (Split::Test, Domain::Target, false, c.test_target_normal),
        (Split::Test, Domain::Target, true, c.test_target_anomalous),
    ];

    let mut rows = Vec::new();
    let mut pending = Vec::new();
    for mt in &types {
        let mut assigned: Vec<(Split, Domain, bool, usize, usize)> = Vec::new();
        for (domain, anomalous) in [(Domain::Source, false), (Domain::Source, true), (Domain::Target, false), (Domain::Target, true)] {
            let wanted: usize = groups
                .iter()
                .filter(|g| g.1 == domain && g.2 == anomalous)
                .map(|g| g.3)
                .sum();
            let pool = machines.select(mt, domain, anomalous);
            if pool.len() < wanted {
                return Err(BenchError::InsufficientMachinePool {
                    machine_type: mt.clone(),
                    what: format!("{} {}", domain.as_str(), if anomalous { "anomalous" } else { "normal" }),
                    needed: wanted,
                    available: pool.len(),
                });
            }
            let order = permuted(pool, seed, &[label_hash(mt), domain as u64, anomalous as u64]);
            let mut next = order.into_iter();
            for g in groups.iter().filter(|g| g.1 == domain && g.2 == anomalous) {
                for k in 0..g.3 {
                    assigned.push((g.0, g.1, g.2, k, next.next().expect("checked above")));
                }
            }
        }
        assigned.sort_by_key(|a| groups.iter().position(|g| (g.0, g.1, g.2) == (a.0, a.1, a.2)).expect("known group"));

        for &snr in &spec.snr_grid {
            let mut streams: Vec<(crate::audio::NoiseKind, std::vec::IntoIter<usize>)> = Vec::new();
            for kind in [ref_kind, test_kind] {
                if !streams.iter().any(|(k, _)| *k == kind) {
                    let order = permuted(noises.of_kind(kind), seed, &[label_hash(mt), snr as u64, kind as u64]);
                    streams.push((kind, order.into_iter()));
                }
            }
            for &(split, domain, anomalous, k, clean) in &assigned {
                let kind = if split == Split::Reference { ref_kind } else { test_kind };
                let stream = &mut streams.iter_mut().find(|(k2, _)| *k2 == kind).expect("stream per kind").1;
                let noise = stream.next().expect("pool size checked");
                let label = if anomalous { "anomaly" } else { "normal" };
                rows.push(ManifestRow {
                    clip_path: format!("{mt}/snr_{snr}/{}/{}_{label}_{k:04}.wav", split.as_str(), domain.as_str()),
                    machine_type: mt.clone(),
                    split,
                    domain,
                    is_anomalous: anomalous,
                    snr_db: snr,
                    noise_clip_id: noises.clips[noise].id.clone(),
                    seed: machines.clips[clean].seed,
                });
                pending.push((clean, noise, snr));
            }
        }
    }

    let links = par::try_map(mode, &pending, |&(clean, noise, snr)| -> Result<RowLink, BenchError> {
        let mix = mix_at_snr_scalenoise(&machines.clips[clean].waveform, &noises.clips[noise].waveform, snr as f64)?;
        Ok(RowLink { clean, noise, noise_gain: mix.a2 })
    })?;
    let manifest = DatasetManifest { rows };
    manifest.check_without_replacement()?;
    Ok(BuiltSubset {
        spec: spec.clone(),
        seed,
        manifest,
        machines,
        noises,
        links,
    })
}

impl BuiltSubset<'_> {
    pub fn noise_gain(&self, i: usize) -> f64 {
        self.links[i].noise_gain
    }

    /// SNR recomputed from the clean component and the gain-scaled noise.
    pub fn remeasured_snr_db(&self, i: usize) -> Result<f64, BenchError> {
        let l = self.links[i];
        let clean = mean_power(&self.machines.clips[l.clean].waveform)?;
        let noise = mean_power(&self.noises.clips[l.noise].waveform.scaled(l.noise_gain))?;
        Ok(snr_db_from_powers(clean, noise))
    }

    pub fn info(&self) -> Result<DatasetInfo, BenchError> {
        Ok(DatasetInfo {
            spec: self.spec.clone(),
            seed: self.seed,
            manifest_sha256: self.manifest.hash()?,
            noise_gains: self.links.iter().map(|l| l.noise_gain).collect(),
        })
    }

    /// Writes `manifest.csv`, `dataset.json` and one 16-bit WAV per row.
    pub fn write_dir(&self, dir: impl AsRef<Path>, mode: Execution) -> Result<(), BenchError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let indices: Vec<usize> = (0..self.manifest.rows.len()).collect();
        par::try_map(mode, &indices, |&i| -> Result<(), BenchError> {
            let path = dir.join(&self.manifest.rows[i].clip_path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_wav(&self.mixture(i)?, path)?;
            Ok(())
        })?;
        self.manifest.write_csv(dir.join("manifest.csv"))?;
        fs::write(dir.join("dataset.json"), serde_json::to_vec_pretty(&self.info()?)?)?;
        Ok(())
    }
}

impl ClipSource for BuiltSubset<'_> {
    fn subset(&self) -> &str {
        self.spec.name.as_str()
    }

    fn rows(&self) -> &[ManifestRow] {
        &self.manifest.rows
    }

    fn mixture(&self, i: usize) -> Result<Waveform, BenchError> {
        let l = self.links[i];
        let snr = self.manifest.rows[i].snr_db as f64;
        let mix = mix_at_snr_scalenoise(&self.machines.clips[l.clean].waveform, &self.noises.clips[l.noise].waveform, snr)?;
        Ok(mix.mixture)
    }

    fn components(&self, i: usize) -> Result<Option<(Waveform, Waveform)>, BenchError> {
        let l = self.links[i];
        Ok(Some((
            self.machines.clips[l.clean].waveform.clone(),
            self.noises.clips[l.noise].waveform.scaled(l.noise_gain),
        )))
    }
}

/// A subset written by [`BuiltSubset::write_dir`], read back from disk.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub info: DatasetInfo,
    pub manifest: DatasetManifest,
}

impl DatasetDir {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BenchError> {
        let root = dir.as_ref().to_path_buf();
        let info: DatasetInfo = serde_json::from_slice(&fs::read(root.join("dataset.json"))?)?;
        let manifest = DatasetManifest::read_csv(root.join("manifest.csv"))?;
        if manifest.hash()? != info.manifest_sha256 {
            return Err(BenchError::InvalidSpec(format!("{} does not match its dataset.json", root.display())));
        }
        Ok(Self { root, info, manifest })
    }
}

impl ClipSource for DatasetDir {
    fn subset(&self) -> &str {
        self.info.spec.name.as_str()
    }

    fn rows(&self) -> &[ManifestRow] {
        &self.manifest.rows
    }

    fn mixture(&self, i: usize) -> Result<Waveform, BenchError> {
        Ok(read_wav(self.root.join(&self.manifest.rows[i].clip_path))?)
    }

    fn components(&self, _i: usize) -> Result<Option<(Waveform, Waveform)>, BenchError> {
        Ok(None)
    }
}
