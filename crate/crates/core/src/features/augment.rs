use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MelFeatures;

/// Mask counts and maximum widths; widths are drawn uniformly from `0..=max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub time_masks: usize,
    pub max_time_width: usize,
    pub freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            time_masks: 2,
            max_time_width: 64,
            freq_masks: 2,
            max_freq_width: 16,
        }
    }
}

impl SpecAugmentConfig {
    pub const OFF: SpecAugmentConfig = SpecAugmentConfig {
        time_masks: 0,
        max_time_width: 0,
        freq_masks: 0,
        max_freq_width: 0,
    };
}

/// Default masking policy, deterministic per seed.
pub fn spec_augment(f: &MelFeatures, seed: u64) -> MelFeatures {
    spec_augment_with(f, &SpecAugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Fills masked cells with the mean of the unmasked input.
pub fn spec_augment_with(f: &MelFeatures, cfg: &SpecAugmentConfig, rng: &mut impl Rng) -> MelFeatures {
    let fill = f.mean();
    let mut out = f.clone();
    for _ in 0..cfg.time_masks {
        let (start, width) = draw_mask(f.t_frames, cfg.max_time_width, rng);
        for t in start..start + width {
            out.values[t * f.n_mels..(t + 1) * f.n_mels].fill(fill);
        }
    }
    for _ in 0..cfg.freq_masks {
        let (start, width) = draw_mask(f.n_mels, cfg.max_freq_width, rng);
        for t in 0..f.t_frames {
            out.values[t * f.n_mels + start..t * f.n_mels + start + width].fill(fill);
        }
    }
    out
}

fn draw_mask(extent: usize, max_width: usize, rng: &mut impl Rng) -> (usize, usize) {
    let width = rng.random_range(0..=max_width.min(extent));
    let start = rng.random_range(0..=extent - width);
    (start, width)
}
