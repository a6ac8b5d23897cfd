//! Training-free anomaly scoring.
//!
//! Frame embeddings are mean-pooled over time per frequency patch, and a test
//! clip's score is its mean distance to the `k` nearest normal references.

mod store;

pub use store::ReferenceStore;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;
use crate::encoder::{forward, EncoderError, FrameEmbedding, Parameters};
use crate::features::{apply_norm, extract_logmel, FeatureError, NormStats};
use crate::losses::{convex_teacher_target, LossError};
use crate::metrics::Domain;
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("reference store is empty")]
    EmptyStore,
    #[error("k = {0} exceeds the {1} stored references")]
    KTooLarge(usize, usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt reference store: {0}")]
    CorruptStore(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Time-pooled embedding of length `f_patches * D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmbedding {
    pub values: Vec<f64>,
    pub source_layer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    CosineDistance,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::CosineDistance => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Mean over time patches, flattened as `out[f * D + d]`.
pub fn pool(e: &FrameEmbedding) -> Result<PooledEmbedding, ScoringError> {
    let (l, d) = e.values.dim();
    if l != e.t_patches * e.f_patches || l == 0 {
        return Err(ScoringError::ShapeMismatch(format!(
            "{l} rows for a {}x{} patch grid",
            e.t_patches, e.f_patches
        )));
    }
    let mut out = vec![0.0; e.f_patches * d];
    for t in 0..e.t_patches {
        for f in 0..e.f_patches {
            let row = e.values.row(t * e.f_patches + f);
            for (o, v) in out[f * d..(f + 1) * d].iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    let inv = 1.0 / e.t_patches as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(PooledEmbedding {
        values: out,
        source_layer: e.layer_index,
    })
}

/// Mean distance to the `k` nearest references. Ties keep store order.
pub fn knn_score(
    test: &PooledEmbedding,
    store: &ReferenceStore,
    k: usize,
    metric: Metric,
) -> Result<f64, ScoringError> {
    if k == 0 {
        return Err(ScoringError::InvalidK);
    }
    if store.is_empty() {
        return Err(ScoringError::EmptyStore);
    }
    if k > store.len() {
        return Err(ScoringError::KTooLarge(k, store.len()));
    }
    if test.values.len() != store.dim() {
        return Err(ScoringError::ShapeMismatch(format!(
            "test dim {} vs store dim {}",
            test.values.len(),
            store.dim()
        )));
    }
    let mut dists: Vec<f64> = store
        .iter()
        .map(|(r, _)| metric.distance(&test.values, r))
        .collect();
    dists.sort_by(f64::total_cmp);
    Ok(dists[..k].iter().sum::<f64>() / k as f64)
}

/// Post-hoc adjustment of raw scores per domain; off by default.
pub trait ScoreNormalizer: Sync {
    fn normalize(&self, score: f64, domain: Domain) -> f64;
}

/// Leaves raw KNN distances untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoNormalization;

impl ScoreNormalizer for NoNormalization {
    fn normalize(&self, score: f64, _domain: Domain) -> f64 {
        score
    }
}

fn frame_embedding(
    params: &Parameters,
    w: &Waveform,
    layer: usize,
    stats: &NormStats,
) -> Result<FrameEmbedding, ScoringError> {
    let feats = apply_norm(&extract_logmel(w)?, stats);
    Ok(forward(params, &feats, layer)?)
}

/// log-mel, normalization, encoder tap and pooling.
pub fn embed_clip(
    params: &Parameters,
    w: &Waveform,
    layer: usize,
    stats: &NormStats,
) -> Result<PooledEmbedding, ScoringError> {
    pool(&frame_embedding(params, w, layer, stats)?)
}

/// Pooled convex combination of the separately encoded sources.
pub fn embedding_mixture_oracle(
    params: &Parameters,
    clean: &Waveform,
    noise: &Waveform,
    lambda: f64,
    layer: usize,
    stats: &NormStats,
) -> Result<PooledEmbedding, ScoringError> {
    let e_clean = frame_embedding(params, clean, layer, stats)?;
    let e_noise = frame_embedding(params, noise, layer, stats)?;
    pool(&convex_teacher_target(&e_clean, &e_noise, lambda)?)
}

/// Embeds many clips, in input order.
pub fn embed_batch(
    mode: Execution,
    params: &Parameters,
    clips: &[Waveform],
    layer: usize,
    stats: &NormStats,
) -> Result<Vec<PooledEmbedding>, ScoringError> {
    par::try_map(mode, clips, |w| embed_clip(params, w, layer, stats))
}

/// Scores many test embeddings against one store, in input order.
pub fn score_batch(
    mode: Execution,
    tests: &[PooledEmbedding],
    store: &ReferenceStore,
    k: usize,
    metric: Metric,
) -> Result<Vec<f64>, ScoringError> {
    par::try_map(mode, tests, |t| knn_score(t, store, k, metric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::encoder::{init, EncoderConfig};
    use ndarray::Array2;
    use proptest::prelude::*;

    fn pooled(v: &[f64]) -> PooledEmbedding {
        PooledEmbedding {
            values: v.to_vec(),
            source_layer: 1,
        }
    }

    fn store(refs: &[&[f64]]) -> ReferenceStore {
        let mut s = ReferenceStore::new("m", 1);
        for r in refs {
            s.push(&pooled(r), Domain::Source).unwrap();
        }
        s
    }

    #[test]
    fn pool_examples() {
        let e = FrameEmbedding {
            values: Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            t_patches: 2,
            f_patches: 2,
            layer_index: 3,
        };
        let p = pool(&e).unwrap();
        assert_eq!(p.values, vec![2.0, 3.0]);
        assert_eq!(p.source_layer, 3);

        let single = FrameEmbedding {
            values: Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            t_patches: 1,
            f_patches: 2,
            layer_index: 1,
        };
        assert_eq!(pool(&single).unwrap().values, vec![1.0, 2.0, 3.0, 4.0]);

        let constant = FrameEmbedding {
            values: Array2::from_elem((6, 3), 0.7),
            t_patches: 3,
            f_patches: 2,
            layer_index: 1,
        };
        assert!(pool(&constant).unwrap().values.iter().all(|v| (*v - 0.7).abs() < 1e-15));

        let bad = FrameEmbedding {
            t_patches: 3,
            ..single
        };
        assert!(matches!(pool(&bad), Err(ScoringError::ShapeMismatch(_))));
    }

    #[test]
    fn knn_examples() {
        let s = store(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(knn_score(&pooled(&[1.0, 0.0]), &s, 1, Metric::Euclidean).unwrap(), 0.0);
        let t = pooled(&[0.6, 0.0]);
        assert!((knn_score(&t, &s, 1, Metric::Euclidean).unwrap() - 0.4).abs() < 1e-15);
        assert!((knn_score(&t, &s, 2, Metric::Euclidean).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(knn_score(&t, &s, 3, Metric::Euclidean), Err(ScoringError::KTooLarge(3, 2))));
        assert!(matches!(
            knn_score(&t, &ReferenceStore::new("m", 1), 1, Metric::Euclidean),
            Err(ScoringError::EmptyStore)
        ));
        assert!(matches!(knn_score(&t, &s, 0, Metric::Euclidean), Err(ScoringError::InvalidK)));
    }

    #[test]
    fn cosine_distance() {
        let s = store(&[&[1.0, 0.0]]);
        assert!((knn_score(&pooled(&[0.0, 2.0]), &s, 1, Metric::CosineDistance).unwrap() - 1.0).abs() < 1e-15);
        assert!(knn_score(&pooled(&[3.0, 0.0]), &s, 1, Metric::CosineDistance).unwrap().abs() < 1e-15);
    }

    fn tiny_params() -> Parameters {
        init(&EncoderConfig {
            patch_t: 4,
            patch_f: 16,
            d_model: 8,
            n_layers: 2,
            n_classes: 0,
            seed: 5,
        })
        .unwrap()
    }

    fn clip(freq: f64, seed: u64) -> Waveform {
        Waveform::new(
            (0..4000)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    0.3 * (2.0 * std::f64::consts::PI * freq * t).sin()
                        + 0.01 * (((i as u64 * 7919 + seed * 104729) % 1000) as f64 / 500.0 - 1.0)
                })
                .collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn embed_clip_examples() {
        let p = tiny_params();
        let stats = NormStats { mean: -5.0, std: 4.0 };
        let a = embed_clip(&p, &clip(300.0, 1), 2, &stats).unwrap();
        assert_eq!(a, embed_clip(&p, &clip(300.0, 1), 2, &stats).unwrap());
        assert_ne!(a.values, embed_clip(&p, &clip(900.0, 2), 2, &stats).unwrap().values);
        assert!(matches!(
            embed_clip(&p, &clip(300.0, 1), 3, &stats),
            Err(ScoringError::Encoder(EncoderError::LayerOutOfRange(3, 2)))
        ));
        assert_eq!(a.values.len(), 8 * 8);
    }

    #[test]
    fn oracle_examples() {
        let p = tiny_params();
        let stats = NormStats { mean: -5.0, std: 4.0 };
        let (c, n) = (clip(300.0, 1), clip(1200.0, 2));
        let ec = embed_clip(&p, &c, 1, &stats).unwrap();
        let en = embed_clip(&p, &n, 1, &stats).unwrap();
        assert_eq!(embedding_mixture_oracle(&p, &c, &c, 0.5, 1, &stats).unwrap().values, ec.values);
        assert_eq!(embedding_mixture_oracle(&p, &c, &n, 1.0, 1, &stats).unwrap().values, ec.values);
        let mid = embedding_mixture_oracle(&p, &c, &n, 0.5, 1, &stats).unwrap();
        for ((m, a), b) in mid.values.iter().zip(&ec.values).zip(&en.values) {
            assert!((m - 0.5 * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_modes_agree() {
        let p = tiny_params();
        let stats = NormStats { mean: -5.0, std: 4.0 };
        let clips: Vec<Waveform> = (0..6).map(|i| clip(200.0 + 100.0 * i as f64, i)).collect();
        let a = embed_batch(Execution::Parallel, &p, &clips, 2, &stats).unwrap();
        let b = embed_batch(Execution::Sequential, &p, &clips, 2, &stats).unwrap();
        assert_eq!(a, b);
        let mut s = ReferenceStore::new("m", 2);
        for e in &a[..3] {
            s.push(e, Domain::Source).unwrap();
        }
        assert_eq!(
            score_batch(Execution::Parallel, &a[3..], &s, 1, Metric::Euclidean).unwrap(),
            score_batch(Execution::Sequential, &a[3..], &s, 1, Metric::Euclidean).unwrap()
        );
    }

    fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), 1..n)
    }

    proptest! {
        #[test]
        fn knn_properties(refs in vecs(12, 3), extra in vecs(4, 3), test in prop::collection::vec(-3.0f64..3.0, 3)) {
            let t = pooled(&test);
            let as_refs: Vec<&[f64]> = refs.iter().map(|r| r.as_slice()).collect();
            let s = store(&as_refs);
            let score = knn_score(&t, &s, 1, Metric::Euclidean).unwrap();
            prop_assert!(score >= 0.0);

            let mut reversed = as_refs.clone();
            reversed.reverse();
            prop_assert_eq!(score, knn_score(&t, &store(&reversed), 1, Metric::Euclidean).unwrap());

            let mut bigger = as_refs.clone();
            bigger.extend(extra.iter().map(|r| r.as_slice()));
            prop_assert!(knn_score(&t, &store(&bigger), 1, Metric::Euclidean).unwrap() <= score);

            let mut with_self = as_refs.clone();
            with_self.push(test.as_slice());
            prop_assert_eq!(knn_score(&t, &store(&with_self), 1, Metric::Euclidean).unwrap(), 0.0);
        }
    }
}
