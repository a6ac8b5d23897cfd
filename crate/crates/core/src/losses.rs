//! Training objectives with their gradients.
//!
//! Tagging and denoise losses are multi-label binary cross-entropy evaluated in
//! logit space. The mixture loss is the squared distance between the student's
//! mixture embedding and a convex combination of teacher embeddings of the
//! separated sources.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{mix_at_snr_unitnoise, AudioError, Waveform};
use crate::encoder::FrameEmbedding;
use crate::features::MelFeatures;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: {0} logits vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Multi-hot vector over `c_machines` machine classes followed by `n_noises` noise classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<bool>,
    pub c_machines: usize,
    pub n_noises: usize,
}

impl LabelVector {
    pub fn empty(c_machines: usize, n_noises: usize) -> Self {
        Self {
            values: vec![false; c_machines + n_noises],
            c_machines,
            n_noises,
        }
    }

    /// Machine class `machine` plus noise class `noise`.
    pub fn mixture(c_machines: usize, n_noises: usize, machine: usize, noise: usize) -> Self {
        let mut v = Self::empty(c_machines, n_noises);
        v.values[machine] = true;
        v.values[c_machines + noise] = true;
        v
    }

    pub fn one_hot(len: usize, k: usize) -> Self {
        let mut v = Self::empty(len, 0);
        v.values[k] = true;
        v
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.values.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()
    }

    /// Machine-only part, as used by the denoising objective.
    pub fn machine_slice(&self) -> LabelVector {
        LabelVector {
            values: self.values[..self.c_machines].to_vec(),
            c_machines: self.c_machines,
            n_noises: 0,
        }
    }

    pub fn union(&self, other: &LabelVector) -> Result<LabelVector, LossError> {
        if self.c_machines != other.c_machines || self.n_noises != other.n_noises {
            return Err(LossError::LengthMismatch(self.len(), other.len()));
        }
        Ok(LabelVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a || *b).collect(),
            c_machines: self.c_machines,
            n_noises: self.n_noises,
        })
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy on logits, `sum y softplus(-z) + (1 - y) softplus(z)`,
/// with gradient `sigmoid(z) - y`.
/// Targets may be soft (mixup).
pub fn bce_multilabel(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    if logits.len() != targets.len() {
        return Err(LossError::LengthMismatch(logits.len(), targets.len()));
    }
    let value = logits
        .iter()
        .zip(targets)
        .map(|(z, y)| y * softplus(-z) + (1.0 - y) * softplus(*z))
        .sum();
    let grad = logits.iter().zip(targets).map(|(z, y)| sigmoid(*z) - y).collect();
    Ok((value, grad))
}

/// Tagging loss over all machine and noise classes.
pub fn tagging_loss(logits: &[f64], label: &LabelVector) -> Result<(f64, Vec<f64>), LossError> {
    bce_multilabel(logits, &label.targets())
}

/// Denoising baseline loss: BCE over machine classes only; `logits` has length C.
pub fn denoise_loss(logits: &[f64], label: &LabelVector) -> Result<(f64, Vec<f64>), LossError> {
    bce_multilabel(logits, &label.machine_slice().targets())
}

/// `lambda * e_target + (1 - lambda) * e_noise`, elementwise.
pub fn convex_teacher_target(
    e_target: &FrameEmbedding,
    e_noise: &FrameEmbedding,
    lambda: f64,
) -> Result<FrameEmbedding, LossError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(LossError::LambdaOutOfRange(lambda));
    }
    if !e_target.same_shape(e_noise) {
        return Err(LossError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            e_target.values.dim(),
            e_noise.values.dim()
        )));
    }
    let mut values = e_target.values.mapv(|v| lambda * v);
    values.zip_mut_with(&e_noise.values, |a, b| *a += (1.0 - lambda) * b);
    Ok(FrameEmbedding {
        values,
        t_patches: e_target.t_patches,
        f_patches: e_target.f_patches,
        layer_index: e_target.layer_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Squared L2 distance between student and teacher embeddings.
pub fn mixture_mse(
    f_student: &FrameEmbedding,
    f_teacher: &FrameEmbedding,
    reduce: Reduction,
) -> Result<(f64, Array2<f64>), LossError> {
    if f_student.values.dim() != f_teacher.values.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            f_student.values.dim(),
            f_teacher.values.dim()
        )));
    }
    let diff = &f_student.values - &f_teacher.values;
    let scale = match reduce {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / diff.len() as f64,
    };
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    Ok((value, diff.mapv(|d| 2.0 * d * scale)))
}

/// Weights of the combined objective and the convex-target mixing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda_mix: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.alpha < 0.0 || self.beta < 0.0 || !(self.alpha + self.beta > 0.0) {
            return Err(LossError::InvalidParameter(format!(
                "alpha={} beta={} (need non-negative, not both zero)",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(LossError::LambdaOutOfRange(self.lambda_mix));
        }
        Ok(())
    }
}

pub fn combined_loss(tagging_value: f64, mixture_value: f64, w: &LossWeights) -> f64 {
    w.alpha * tagging_value + w.beta * mixture_value
}

/// Mixes features and soft targets with ratio `gamma`.
pub fn linear_mixup_with_ratio(
    f1: &MelFeatures,
    y1: &[f64],
    f2: &MelFeatures,
    y2: &[f64],
    gamma: f64,
) -> Result<(MelFeatures, Vec<f64>), LossError> {
    if f1.t_frames != f2.t_frames || f1.n_mels != f2.n_mels {
        return Err(LossError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            f1.t_frames, f1.n_mels, f2.t_frames, f2.n_mels
        )));
    }
    if y1.len() != y2.len() {
        return Err(LossError::LengthMismatch(y1.len(), y2.len()));
    }
    let values = f1
        .values
        .iter()
        .zip(&f2.values)
        .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
        .collect();
    let targets = y1.iter().zip(y2).map(|(a, b)| gamma * a + (1.0 - gamma) * b).collect();
    Ok((
        MelFeatures {
            values,
            t_frames: f1.t_frames,
            n_mels: f1.n_mels,
        },
        targets,
    ))
}

/// Linear mixup with `gamma ~ Beta(beta_ab, beta_ab)`.
pub fn linear_mixup(
    f1: &MelFeatures,
    y1: &[f64],
    f2: &MelFeatures,
    y2: &[f64],
    beta_ab: f64,
    rng: &mut impl Rng,
) -> Result<(MelFeatures, Vec<f64>), LossError> {
    let gamma = sample_beta(beta_ab, rng)?;
    linear_mixup_with_ratio(f1, y1, f2, y2, gamma)
}

pub fn sample_beta(beta_ab: f64, rng: &mut impl Rng) -> Result<f64, LossError> {
    if !(beta_ab > 0.0) {
        return Err(LossError::InvalidParameter(format!("beta parameter {beta_ab}")));
    }
    let dist = Beta::new(beta_ab, beta_ab).map_err(|e| LossError::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// SNR mixup with hard labels: unit-noise mixing and the union of both label sets.
pub fn snr_mixup(
    x1: &Waveform,
    y1: &LabelVector,
    x2: &Waveform,
    y2: &LabelVector,
    snr_db: f64,
) -> Result<(Waveform, LabelVector), LossError> {
    let mixed = mix_at_snr_unitnoise(x1, x2, snr_db)?;
    Ok((mixed.mixture, y1.union(y2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(vals: &[f64], l: usize, d: usize) -> FrameEmbedding {
        FrameEmbedding {
            values: Array2::from_shape_vec((l, d), vals.to_vec()).unwrap(),
            t_patches: l,
            f_patches: 1,
            layer_index: 1,
        }
    }

    #[test]
    fn bce_examples() {
        let (v, _) = bce_multilabel(&[20.0], &[1.0]).unwrap();
        assert!((v - softplus(-20.0)).abs() < 1e-20);
        assert!((v - 2.061153620314381e-9).abs() < 1e-20);
        let k = 7;
        let (v, _) = bce_multilabel(&vec![0.0; k], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((v - k as f64 * 2f64.ln()).abs() < 1e-12);
        let (_, g) = bce_multilabel(&[20.0, -20.0], &[1.0, 0.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-8));
        assert!(matches!(bce_multilabel(&[0.0], &[1.0, 0.0]), Err(LossError::LengthMismatch(1, 2))));
        let (v, _) = bce_multilabel(&[800.0, -800.0], &[0.0, 1.0]).unwrap();
        assert!((v - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let k = rng.random_range(1..=32);
            let z: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
            let y: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
            let (_, g) = bce_multilabel(&z, &y).unwrap();
            let h = 1e-5;
            for i in 0..k {
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (bce_multilabel(&zp, &y).unwrap().0 - bce_multilabel(&zm, &y).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(g[i].abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn convex_target_examples() {
        let a = emb(&[2.0, 1.0], 1, 2);
        let b = emb(&[4.0, -3.0], 1, 2);
        assert_eq!(convex_teacher_target(&a, &b, 1.0).unwrap().values, a.values);
        assert_eq!(convex_teacher_target(&a, &b, 0.0).unwrap().values, b.values);
        assert_eq!(convex_teacher_target(&a, &b, 0.5).unwrap().values[[0, 0]], 3.0);
        assert!(matches!(convex_teacher_target(&a, &b, 1.5), Err(LossError::LambdaOutOfRange(_))));
        assert!(matches!(
            convex_teacher_target(&a, &emb(&[1.0], 1, 1), 0.5),
            Err(LossError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mixture_mse_examples() {
        let a = emb(&[1.0; 8], 4, 2);
        let (v, g) = mixture_mse(&a, &a, Reduction::Sum).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
        let b = emb(&[0.5; 8], 4, 2);
        assert_eq!(mixture_mse(&a, &b, Reduction::Sum).unwrap().0, 2.0);
        assert_eq!(mixture_mse(&a, &b, Reduction::Mean).unwrap().0, 0.25);
    }

    #[test]
    fn combined_and_weights() {
        assert_eq!(combined_loss(2.0, 3.0, &LossWeights::new(1.0, 1.0)), 5.0);
        assert_eq!(combined_loss(2.0, 3.0, &LossWeights::new(1.0, 0.0)), 2.0);
        assert_eq!(combined_loss(2.0, 3.0, &LossWeights::new(0.0, 1.0)), 3.0);
        assert!(LossWeights::new(0.0, 0.0).validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }

    #[test]
    fn linear_mixup_examples() {
        let f1 = MelFeatures::new(vec![1.0, 2.0], 1, 2).unwrap();
        let f2 = MelFeatures::new(vec![3.0, 6.0], 1, 2).unwrap();
        let (f, y) = linear_mixup_with_ratio(&f1, &[1.0, 0.0], &f2, &[0.0, 1.0], 1.0).unwrap();
        assert_eq!((f, y), (f1.clone(), vec![1.0, 0.0]));
        let (_, y) = linear_mixup_with_ratio(&f1, &[1.0, 0.0, 0.0], &f2, &[0.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(y, vec![0.5, 0.5, 0.0]);
        let f3 = MelFeatures::new(vec![0.0; 3], 1, 3).unwrap();
        assert!(matches!(
            linear_mixup_with_ratio(&f1, &[1.0], &f3, &[1.0], 0.5),
            Err(LossError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn beta_one_is_uniform_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_beta(1.0, &mut rng).unwrap()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = ((i + 1) as f64 / n as f64 - x).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at alpha = 0.01
        let crit = 1.6276 / (n as f64).sqrt();
        assert!(d < crit, "D = {d} >= {crit}");
    }

    #[test]
    fn snr_mixup_examples() {
        let y1 = LabelVector::one_hot(10, 3);
        let y2 = LabelVector::one_hot(10, 7);
        let x1 = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], SAMPLE_RATE);
        let x2 = Waveform::new(vec![1.0, 1.0, -1.0, -1.0], SAMPLE_RATE);
        let (w, y) = snr_mixup(&x1, &y1, &x2, &y2, 0.0).unwrap();
        assert!(y.values[3] && y.values[7] && y.values.iter().filter(|b| **b).count() == 2);
        assert_eq!(w.samples, vec![2.0, 0.0, 0.0, -2.0]);
        let (_, same) = snr_mixup(&x1, &y1, &x2, &y1, 0.0).unwrap();
        assert_eq!(same, y1);
    }

    #[test]
    fn label_vector_layout() {
        let l = LabelVector::mixture(4, 2, 1, 1);
        assert_eq!(l.targets(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(l.machine_slice().targets(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn convex_target_is_linear_in_lambda(vals in prop::collection::vec(-5.0f64..5.0, 8),
                                             other in prop::collection::vec(-5.0f64..5.0, 8),
                                             lambda in 0.0f64..=1.0) {
            let a = emb(&vals, 4, 2);
            let b = emb(&other, 4, 2);
            let at = convex_teacher_target(&a, &b, lambda).unwrap().values;
            let one = convex_teacher_target(&a, &b, 1.0).unwrap().values;
            let zero = convex_teacher_target(&a, &b, 0.0).unwrap().values;
            for ((x, o), z) in at.iter().zip(&one).zip(&zero) {
                prop_assert!((x - (lambda * o + (1.0 - lambda) * z)).abs() < 1e-12);
            }
        }

        #[test]
        fn mixture_mse_symmetric_and_zero_iff_equal(vals in prop::collection::vec(-5.0f64..5.0, 6),
                                                    other in prop::collection::vec(-5.0f64..5.0, 6)) {
            let a = emb(&vals, 3, 2);
            let b = emb(&other, 3, 2);
            let ab = mixture_mse(&a, &b, Reduction::Sum).unwrap().0;
            let ba = mixture_mse(&b, &a, Reduction::Sum).unwrap().0;
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, vals == other);
        }

        #[test]
        fn combined_is_linear(t1 in -10.0f64..10.0, t2 in -10.0f64..10.0, m in -10.0f64..10.0,
                              alpha in 0.0f64..3.0, beta in 0.0f64..3.0) {
            let w = LossWeights::new(alpha, beta);
            let lhs = combined_loss(t1 + t2, m, &w);
            let rhs = combined_loss(t1, m, &w) + combined_loss(t2, 0.0, &w);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
