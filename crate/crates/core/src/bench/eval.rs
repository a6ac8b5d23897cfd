use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BenchError, ClipSource, Split};
use crate::audio::Waveform;
use crate::encoder::{forward, Parameters};
use crate::features::{apply_norm, extract_logmel, MelFeatures, NormStats};
use crate::losses::convex_teacher_target;
use crate::metrics::{DomainMetrics, EvalReport, ScoredClip, DEFAULT_PAUC_P};
use crate::par::{self, Execution};
use crate::rng::{label_hash, rng_for};
use crate::scoring::{knn_score, pool, Metric, PooledEmbedding, ReferenceStore, ScoreNormalizer, ScoringError};

/// A manifest row with its mixture and raw log-mel, computed once per evaluation
/// and shared by every scorer.
#[derive(Debug, Clone)]
pub struct EvalClip {
    pub row: usize,
    pub mixture: Waveform,
    pub logmel: MelFeatures,
}

/// Maps a clip to a pooled embedding.
pub trait Embedder: Sync {
    fn layer(&self) -> usize;
    fn embed(&self, source: &dyn ClipSource, clip: &EvalClip) -> Result<PooledEmbedding, BenchError>;
}

/// Embeds the mixture waveform.
#[derive(Debug, Clone, Copy)]
pub struct WaveEmbedder<'a> {
    pub params: &'a Parameters,
    pub layer: usize,
    pub norm: NormStats,
}

impl Embedder for WaveEmbedder<'_> {
    fn layer(&self) -> usize {
        self.layer
    }

    fn embed(&self, _source: &dyn ClipSource, clip: &EvalClip) -> Result<PooledEmbedding, BenchError> {
        let e = forward(self.params, &apply_norm(&clip.logmel, &self.norm), self.layer)?;
        Ok(pool(&e)?)
    }
}

/// Convex combination of the separately embedded clean and noise components.
/// Needs a source that keeps components.
#[derive(Debug, Clone, Copy)]
pub struct OracleEmbedder<'a> {
    pub params: &'a Parameters,
    pub layer: usize,
    pub norm: NormStats,
    pub lambda: f64,
}

impl<'a> OracleEmbedder<'a> {
    pub fn new(params: &'a Parameters, layer: usize, norm: NormStats) -> Self {
        Self { params, layer, norm, lambda: 0.5 }
    }
}

impl Embedder for OracleEmbedder<'_> {
    fn layer(&self) -> usize {
        self.layer
    }

    fn embed(&self, source: &dyn ClipSource, clip: &EvalClip) -> Result<PooledEmbedding, BenchError> {
        let (clean, noise) = source
            .components(clip.row)?
            .ok_or_else(|| BenchError::MissingComponents(source.rows()[clip.row].clip_path.clone()))?;
        let enc = |w: &Waveform| -> Result<_, BenchError> {
            Ok(forward(self.params, &apply_norm(&extract_logmel(w)?, &self.norm), self.layer)?)
        };
        let mixed = convex_teacher_target(&enc(&clean)?, &enc(&noise)?, self.lambda).map_err(ScoringError::from)?;
        Ok(pool(&mixed)?)
    }
}

/// How test clips get their anomaly scores.
#[derive(Clone, Copy)]
pub enum Scorer<'a> {
    /// Mean distance to the k nearest reference embeddings of the same machine.
    Knn {
        embedder: &'a dyn Embedder,
        normalizer: Option<&'a dyn ScoreNormalizer>,
    },
    /// The ground-truth label as score.
    Label,
    /// Uniform noise, seeded per clip.
    Random { seed: u64 },
}

impl<'a> Scorer<'a> {
    pub fn knn(embedder: &'a dyn Embedder) -> Self {
        Scorer::Knn { embedder, normalizer: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub k: usize,
    pub metric: Metric,
    pub pauc_p: f64,
    #[serde(skip)]
    pub mode: Execution,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k: 1,
            metric: Metric::Euclidean,
            pauc_p: DEFAULT_PAUC_P,
            mode: Execution::Parallel,
        }
    }
}

pub fn run_eval(source: &dyn ClipSource, scorer: Scorer<'_>, settings: &EvalSettings) -> Result<EvalReport, BenchError> {
    Ok(run_eval_many(&[source], &[scorer], settings)?.remove(0))
}

/// One report per scorer over all sources. Mixtures and log-mels are computed
/// once per (machine type, SNR) cell and shared across scorers.
pub fn run_eval_many(
    sources: &[&dyn ClipSource],
    scorers: &[Scorer<'_>],
    settings: &EvalSettings,
) -> Result<Vec<EvalReport>, BenchError> {
    let mut metrics: Vec<BTreeMap<(String, i64, String), DomainMetrics>> = vec![BTreeMap::new(); scorers.len()];
    for &source in sources {
        let mut cells: BTreeMap<(String, i64), Vec<usize>> = BTreeMap::new();
        for (i, r) in source.rows().iter().enumerate() {
            cells.entry((r.machine_type.clone(), r.snr_db)).or_default().push(i);
        }
        for ((machine, snr), rows) in cells {
            let clips = par::try_map(settings.mode, &rows, |&row| -> Result<EvalClip, BenchError> {
                let mixture = source.mixture(row)?;
                let logmel = extract_logmel(&mixture)?;
                Ok(EvalClip { row, mixture, logmel })
            })?;
            for (s, scorer) in scorers.iter().enumerate() {
                let scored = score_cell(source, &clips, *scorer, settings)?;
                let m = DomainMetrics::compute(&scored, settings.pauc_p)?;
                metrics[s].insert((source.subset().to_string(), snr, machine.clone()), m);
            }
        }
    }
    Ok(metrics.iter().map(EvalReport::from_metrics).collect())
}

fn score_cell(
    source: &dyn ClipSource,
    clips: &[EvalClip],
    scorer: Scorer<'_>,
    settings: &EvalSettings,
) -> Result<Vec<ScoredClip>, BenchError> {
    let rows = source.rows();
    let tests: Vec<&EvalClip> = clips.iter().filter(|c| rows[c.row].split == Split::Test).collect();
    let scores: Vec<f64> = match scorer {
        Scorer::Label => tests.iter().map(|c| if rows[c.row].is_anomalous { 1.0 } else { 0.0 }).collect(),
        Scorer::Random { seed } => tests
            .iter()
            .map(|c| {
                let r = &rows[c.row];
                rng_for(seed, &[label_hash(source.subset()), label_hash(&r.clip_path)]).random::<f64>()
            })
            .collect(),
        Scorer::Knn { embedder, normalizer } => {
            let embedded = par::try_map(settings.mode, clips, |c| embedder.embed(source, c))?;
            let mut store = ReferenceStore::new(rows[clips[0].row].machine_type.clone(), embedder.layer());
            for (c, e) in clips.iter().zip(&embedded) {
                if rows[c.row].split == Split::Reference {
                    store.push(e, rows[c.row].domain)?;
                }
            }
            let test_embeddings: Vec<&PooledEmbedding> = clips
                .iter()
                .zip(&embedded)
                .filter(|(c, _)| rows[c.row].split == Split::Test)
                .map(|(_, e)| e)
                .collect();
            let raw = par::try_map(settings.mode, &test_embeddings, |e| knn_score(e, &store, settings.k, settings.metric))?;
            match normalizer {
                Some(n) => raw
                    .iter()
                    .zip(&tests)
                    .map(|(s, c)| n.normalize(*s, rows[c.row].domain))
                    .collect(),
                None => raw,
            }
        }
    };
    Ok(tests
        .iter()
        .zip(scores)
        .map(|(c, anomaly_score)| {
            let r = &rows[c.row];
            ScoredClip {
                clip_id: r.clip_path.clone(),
                anomaly_score,
                is_anomalous: r.is_anomalous,
                domain: r.domain,
            }
        })
        .collect())
}
