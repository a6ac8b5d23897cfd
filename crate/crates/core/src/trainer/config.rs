use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::encoder::EncoderConfig;
use crate::features::SpecAugmentConfig;
use crate::losses::{LossWeights, Reduction};

/// Per-sample SNR draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrPolicy {
    Fixed(f64),
    Uniform(f64, f64),
}

impl SnrPolicy {
    pub fn validate(&self) -> Result<(), TrainError> {
        match *self {
            SnrPolicy::Fixed(db) if db.is_finite() => Ok(()),
            SnrPolicy::Uniform(lo, hi) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            other => Err(TrainError::InvalidConfig(format!("snr policy {other:?}"))),
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SnrPolicy::Fixed(db) => db,
            SnrPolicy::Uniform(lo, hi) if lo == hi => lo,
            SnrPolicy::Uniform(lo, hi) => rng.random_range(lo..=hi),
        }
    }

    /// Row label used by sweeps: "SNR at 0 dB", "SNR at ±5 dB", "SNR in [-10, 5] dB".
    pub fn label(&self) -> String {
        match *self {
            SnrPolicy::Fixed(db) => format!("SNR at {db} dB"),
            SnrPolicy::Uniform(lo, hi) if lo == -hi => format!("SNR at ±{hi} dB"),
            SnrPolicy::Uniform(lo, hi) => format!("SNR in [{lo}, {hi}] dB"),
        }
    }
}

/// What the student learns from each mixture.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Tagging over machine and noise classes plus mixture alignment.
    #[default]
    Retain,
    /// Machine-only tagging of noisy mixtures.
    Denoise,
    /// Denoise on linear mixups of two mixtures, ratio ~ Beta(beta_ab, beta_ab).
    DenoiseLinearMixup { beta_ab: f64 },
    /// Denoise on SNR mixups of two mixtures with hard union labels.
    DenoiseSnrMixup,
}

impl Objective {
    pub fn head_classes(&self, c_machines: usize, n_noises: usize) -> usize {
        match self {
            Objective::Retain => c_machines + n_noises,
            _ => c_machines,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Retain => "retain",
            Objective::Denoise => "denoise",
            Objective::DenoiseLinearMixup { .. } => "denoise_linear_mixup",
            Objective::DenoiseSnrMixup => "denoise_snr_mixup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub snr_policy: SnrPolicy,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub objective: Objective,
    pub reduction: Reduction,
    pub spec_augment: SpecAugmentConfig,
    /// Block whose output is aligned to the teacher; `None` means the last block.
    pub mixture_layer: Option<usize>,
    pub encoder: EncoderConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Desk scale: 2000 steps of batch 16 on the tiny encoder.
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            grad_accum: 1,
            lr: 1e-4,
            weight_decay: 1e-3,
            warmup_steps: 200,
            snr_policy: SnrPolicy::Uniform(-5.0, 5.0),
            loss_weights: LossWeights::default(),
            seed: 0,
            objective: Objective::Retain,
            reduction: Reduction::Sum,
            spec_augment: SpecAugmentConfig::default(),
            mixture_layer: None,
            encoder: tiny_encoder(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        patch_t: 16,
        patch_f: 16,
        d_model: 32,
        n_layers: 4,
        n_classes: 0,
        seed: 0,
    }
}

impl TrainConfig {
    /// 20k steps, batch 64, two accumulation steps, full-size encoder.
    pub fn full_scale() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            grad_accum: 2,
            encoder: EncoderConfig::default(),
            ..Self::default()
        }
    }

    pub fn mixture_layer(&self) -> usize {
        self.mixture_layer.unwrap_or(self.encoder.n_layers)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.steps <= self.warmup_steps {
            return bad(format!("steps {} must exceed warmup {}", self.steps, self.warmup_steps));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch_size and grad_accum must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad(format!("lr {} / weight_decay {}", self.lr, self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("optimizer moments must lie in [0, 1) and eps be positive".into());
        }
        self.snr_policy.validate()?;
        self.loss_weights
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        let layer = self.mixture_layer();
        if layer == 0 || layer > self.encoder.n_layers {
            return bad(format!("mixture layer {layer} outside 1..={}", self.encoder.n_layers));
        }
        if let Objective::DenoiseLinearMixup { beta_ab } = self.objective {
            if !(beta_ab > 0.0) {
                return bad(format!("mixup beta parameter {beta_ab}"));
            }
        }
        if self.uses_partner() && self.batch_size < 2 {
            return bad("mixup objectives need batch_size >= 2".into());
        }
        Ok(())
    }

    pub(crate) fn uses_partner(&self) -> bool {
        matches!(
            self.objective,
            Objective::DenoiseLinearMixup { .. } | Objective::DenoiseSnrMixup
        )
    }
}

/// Linear warmup from 0 to `lr`, then cosine decay to 0 at `steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    let warmup = config.warmup_steps;
    if step < warmup {
        return config.lr * step as f64 / warmup as f64;
    }
    if step >= config.steps {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (config.steps - warmup) as f64;
    config.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lr_schedule_examples() {
        let c = TrainConfig {
            steps: 1200,
            warmup_steps: 200,
            lr: 1e-4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &c), 0.0);
        assert_eq!(lr_at(200, &c), 1e-4);
        assert!((lr_at(700, &c) - 5e-5).abs() < 1e-18);
        assert!((lr_at(100, &c) - 5e-5).abs() < 1e-18);
        assert!(lr_at(1200, &c).abs() < 1e-20);
        assert!(lr_at(1199, &c) > 0.0);
        for s in 200..1199 {
            assert!(lr_at(s + 1, &c) <= lr_at(s, &c));
        }
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::full_scale().validate().is_ok());
        let p = TrainConfig::full_scale();
        assert_eq!((p.steps, p.batch_size, p.grad_accum, p.warmup_steps), (20_000, 64, 2, 200));
        assert_eq!((p.lr, p.weight_decay), (1e-4, 1e-3));
        let bad = [
            TrainConfig { steps: 200, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { snr_policy: SnrPolicy::Uniform(f64::NEG_INFINITY, 0.0), ..TrainConfig::default() },
            TrainConfig { snr_policy: SnrPolicy::Fixed(f64::NAN), ..TrainConfig::default() },
            TrainConfig { mixture_layer: Some(9), ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn snr_draws_respect_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| SnrPolicy::Fixed(0.0).draw(&mut rng) == 0.0));
        assert!((0..1000).all(|_| (-5.0..=5.0).contains(&SnrPolicy::Uniform(-5.0, 5.0).draw(&mut rng))));
        assert_eq!(SnrPolicy::Fixed(0.0).label(), "SNR at 0 dB");
        assert_eq!(SnrPolicy::Uniform(-5.0, 5.0).label(), "SNR at ±5 dB");
    }

    #[test]
    fn config_json_roundtrip() {
        let c = TrainConfig {
            objective: Objective::DenoiseLinearMixup { beta_ab: 0.4 },
            snr_policy: SnrPolicy::Fixed(-3.0),
            ..TrainConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
