//! Controlled robustness benchmark: Factory A, Factory B and Mismatch subsets
//! over an SNR grid, evaluation of trained encoders, and ablation sweeps.

mod eval;
mod experiment;
mod pools;
mod subset;
mod sweep;

pub use eval::{
    run_eval, run_eval_many, EvalClip, EvalSettings, Embedder, OracleEmbedder, Scorer, WaveEmbedder,
};
pub use experiment::{train_model, ExperimentConfig, TrainedModel};
pub use pools::{synth_machine_pool, synth_noise_pool, MachineClip, MachinePool, NoiseClip, NoisePool, PoolSpec};
pub use subset::{
    build_subset, BuiltSubset, ClipSource, DatasetDir, DatasetInfo, DatasetManifest, ManifestRow, Split,
};
pub use sweep::{comparison_csv, sweep, SweepAxis, SweepPlan, SweepPoint, SweepRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, NoiseKind};
use crate::corpus::{NoiseClass, FACTORY_A, FACTORY_B};
use crate::metrics::MetricError;
use crate::scoring::ScoringError;
use crate::trainer::TrainError;

/// SNR grid of the benchmark tables.
pub const DEFAULT_SNR_GRID: [i64; 7] = [-10, -5, 0, 5, 10, 20, 30];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("noise pool has {available} {kind:?} clips, a cell needs {needed}")]
    InsufficientNoisePool { kind: NoiseKind, needed: usize, available: usize },
    #[error("machine pool has {available} clips for {machine_type} {what}, need {needed}")]
    InsufficientMachinePool { machine_type: String, what: String, needed: usize, available: usize },
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("clip {0} has no separated components")]
    MissingComponents(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetName {
    FactoryA,
    FactoryB,
    Mismatch,
}

impl SubsetName {
    pub const ALL: [SubsetName; 3] = [SubsetName::FactoryA, SubsetName::FactoryB, SubsetName::Mismatch];

    pub fn as_str(self) -> &'static str {
        match self {
            SubsetName::FactoryA => "factory_a",
            SubsetName::FactoryB => "factory_b",
            SubsetName::Mismatch => "mismatch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

/// Clip counts per machine type and SNR cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub ref_source: usize,
    pub ref_target: usize,
    pub test_source_normal: usize,
    pub test_source_anomalous: usize,
    pub test_target_normal: usize,
    pub test_target_anomalous: usize,
}

impl Default for SplitCounts {
    /// Roughly a tenth of the full reference split, keeping the 9:1 source/target ratio.
    fn default() -> Self {
        Self {
            ref_source: 90,
            ref_target: 10,
            test_source_normal: 10,
            test_source_anomalous: 10,
            test_target_normal: 10,
            test_target_anomalous: 10,
        }
    }
}

impl SplitCounts {
    pub fn full() -> Self {
        Self {
            ref_source: 990,
            ref_target: 10,
            test_source_normal: 50,
            test_source_anomalous: 50,
            test_target_normal: 50,
            test_target_anomalous: 50,
        }
    }

    pub fn references(&self) -> usize {
        self.ref_source + self.ref_target
    }

    pub fn tests(&self) -> usize {
        self.test_source_normal + self.test_source_anomalous + self.test_target_normal + self.test_target_anomalous
    }

    pub fn total(&self) -> usize {
        self.references() + self.tests()
    }

    fn validate(&self) -> Result<(), BenchError> {
        let all = [
            self.ref_source,
            self.ref_target,
            self.test_source_normal,
            self.test_source_anomalous,
            self.test_target_normal,
            self.test_target_anomalous,
        ];
        if all.contains(&0) {
            return Err(BenchError::InvalidSpec(format!("all split counts must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: SubsetName,
    pub reference_noise_kind: NoiseKind,
    pub test_noise_kind: NoiseKind,
    pub snr_grid: Vec<i64>,
    pub counts: SplitCounts,
    /// Evaluation machine types; empty means all of them.
    #[serde(default)]
    pub machine_types: Vec<String>,
}

impl SubsetSpec {
    /// Factory A is stationary throughout, Factory B non-stationary throughout,
    /// and Mismatch pairs non-stationary references with stationary tests.
    pub fn new(name: SubsetName) -> Self {
        let (reference_noise_kind, test_noise_kind) = match name {
            SubsetName::FactoryA => (NoiseKind::Stationary, NoiseKind::Stationary),
            SubsetName::FactoryB => (NoiseKind::Nonstationary, NoiseKind::Nonstationary),
            SubsetName::Mismatch => (NoiseKind::Nonstationary, NoiseKind::Stationary),
        };
        Self {
            name,
            reference_noise_kind,
            test_noise_kind,
            snr_grid: DEFAULT_SNR_GRID.to_vec(),
            counts: SplitCounts::default(),
            machine_types: Vec::new(),
        }
    }

    pub fn with_snrs(mut self, snrs: &[i64]) -> Self {
        self.snr_grid = snrs.to_vec();
        self
    }

    pub fn with_counts(mut self, counts: SplitCounts) -> Self {
        self.counts = counts;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let expected = Self::new(self.name);
        if (self.reference_noise_kind, self.test_noise_kind)
            != (expected.reference_noise_kind, expected.test_noise_kind)
        {
            return Err(BenchError::InvalidSpec(format!(
                "{} requires reference {:?} and test {:?} noise",
                self.name.as_str(),
                expected.reference_noise_kind,
                expected.test_noise_kind
            )));
        }
        if self.snr_grid.is_empty() {
            return Err(BenchError::InvalidSpec("empty SNR grid".into()));
        }
        let mut sorted = self.snr_grid.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.snr_grid.len() {
            return Err(BenchError::InvalidSpec("duplicate SNR in grid".into()));
        }
        self.counts.validate()
    }
}

/// The factory noise used for a noise kind.
pub fn factory_noise(kind: NoiseKind) -> &'static NoiseClass {
    match kind {
        NoiseKind::Stationary => &FACTORY_A,
        NoiseKind::Nonstationary => &FACTORY_B,
    }
}
