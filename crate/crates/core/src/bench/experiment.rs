use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_subset, run_eval_many, synth_machine_pool, synth_noise_pool, BenchError, BuiltSubset, ClipSource,
    EvalSettings, MachinePool, NoisePool, PoolSpec, Scorer, SubsetName, SubsetSpec, WaveEmbedder,
};
use crate::encoder::Parameters;
use crate::features::NormStats;
use crate::metrics::EvalReport;
use crate::par::Execution;
use crate::trainer::{synth_corpus, Checkpoint, CorpusSpec, PretrainCorpus, TrainConfig, Trainer};

/// Everything one train-then-evaluate run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub pools: PoolSpec,
    pub subsets: Vec<SubsetSpec>,
    pub eval: EvalSettings,
    /// Scoring tap; `None` means the encoder's default tap.
    pub layer: Option<usize>,
    /// Seed for pairing clean clips with noise.
    pub subset_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            train: TrainConfig::default(),
            pools: PoolSpec::default(),
            subsets: SubsetName::ALL.into_iter().map(SubsetSpec::new).collect(),
            eval: EvalSettings::default(),
            layer: None,
            subset_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn synth_pools(&self, mode: Execution) -> Result<(MachinePool, NoisePool), BenchError> {
        Ok((synth_machine_pool(&self.pools, mode)?, synth_noise_pool(&self.pools, mode)?))
    }

    pub fn build_subsets<'p>(
        &self,
        machines: &'p MachinePool,
        noises: &'p NoisePool,
        mode: Execution,
    ) -> Result<Vec<BuiltSubset<'p>>, BenchError> {
        self.subsets
            .iter()
            .map(|s| build_subset(s, machines, noises, self.subset_seed, mode))
            .collect()
    }

    pub fn synth_corpus(&self, mode: Execution) -> Result<PretrainCorpus, BenchError> {
        Ok(synth_corpus(&self.corpus, mode)?)
    }
}

/// Student weights and the normalization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: Parameters,
    pub norm: NormStats,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Self {
            params: ck.params.clone(),
            norm: ck.header.norm,
            config: ck.header.config.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        Ok(Self::from_checkpoint(&Checkpoint::load(path)?))
    }

    pub fn scoring_layer(&self, layer: Option<usize>) -> Result<usize, BenchError> {
        let n = self.config.encoder.n_layers;
        let l = layer.unwrap_or_else(|| self.config.encoder.default_tap());
        if l == 0 || l > n {
            return Err(BenchError::InvalidSpec(format!("layer {l} outside 1..={n}")));
        }
        Ok(l)
    }

    pub fn embedder(&self, layer: usize) -> WaveEmbedder<'_> {
        WaveEmbedder { params: &self.params, layer, norm: self.norm }
    }

    /// KNN evaluation at each of `layers`, sharing mixtures and log-mels.
    pub fn evaluate(
        &self,
        sources: &[&dyn ClipSource],
        layers: &[usize],
        settings: &EvalSettings,
    ) -> Result<Vec<EvalReport>, BenchError> {
        let embedders: Vec<WaveEmbedder<'_>> = layers
            .iter()
            .map(|&l| Ok(self.embedder(self.scoring_layer(Some(l))?)))
            .collect::<Result<_, BenchError>>()?;
        let scorers: Vec<Scorer<'_>> = embedders.iter().map(|e| Scorer::knn(e)).collect();
        run_eval_many(sources, &scorers, settings)
    }
}

/// Runs the trainer to completion, writing the usual run files when `run_dir` is set.
pub fn train_model(
    corpus: &PretrainCorpus,
    config: &TrainConfig,
    mode: Execution,
    run_dir: Option<&Path>,
) -> Result<TrainedModel, BenchError> {
    let mut t = Trainer::new(corpus, config.clone(), mode)?;
    if let Some(dir) = run_dir {
        t = t.with_run_dir(dir)?;
    }
    t.run()?;
    Ok(TrainedModel {
        params: t.params().clone(),
        norm: t.norm(),
        config: t.config().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_roundtrip() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"layer": 2}"#).unwrap();
        assert_eq!(partial.layer, Some(2));
        assert_eq!(partial.subsets.len(), 3);
    }
}
