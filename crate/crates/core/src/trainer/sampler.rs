use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::rng::rng_for;

/// Draws index `k` with probability proportional to `1 / counts[k]`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(counts: &[usize]) -> Result<Self, TrainError> {
        if counts.is_empty() {
            return Err(TrainError::EmptyClass(0));
        }
        if let Some(k) = counts.iter().position(|c| *c == 0) {
            return Err(TrainError::EmptyClass(k));
        }
        let weights: Vec<f64> = counts.iter().map(|c| 1.0 / *c as f64).collect();
        let dist = WeightedIndex::new(weights).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(Self { dist })
    }

    /// Item weights `1 / count(class of item)`, which makes classes equally likely.
    pub fn balanced_over(item_classes: &[usize], class_counts: &[usize]) -> Result<Self, TrainError> {
        let per_item: Vec<usize> = item_classes
            .iter()
            .map(|k| class_counts.get(*k).copied().unwrap_or(0))
            .collect();
        Self::new(&per_item)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng)
    }

    pub fn stream(&self, seed: u64) -> impl Iterator<Item = usize> + '_ {
        let mut rng = rng_for(seed, &[0x7374_7265_616d]);
        std::iter::repeat_with(move || self.draw(&mut rng))
    }
}

/// Noise clip order: a fresh permutation of the pool per epoch, so a clip is
/// reused only after every other clip has been drawn once.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    seed: u64,
    pool: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl NoiseSchedule {
    pub fn new(seed: u64, pool: usize) -> Self {
        Self { seed, pool, cached: None }
    }

    pub fn epoch_of(&self, draw: u64) -> u64 {
        draw / self.pool as u64
    }

    pub fn permutation(seed: u64, pool: usize, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..pool).collect();
        let mut rng: ChaCha8Rng = rng_for(seed, &[0x6e6f_6973_65, epoch]);
        order.shuffle(&mut rng);
        order
    }

    /// Noise index of the `draw`-th sample of the run.
    pub fn at(&mut self, draw: u64) -> usize {
        let epoch = self.epoch_of(draw);
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.cached = Some((epoch, Self::permutation(self.seed, self.pool, epoch)));
        }
        let (_, perm) = self.cached.as_ref().expect("filled above");
        perm[(draw % self.pool as u64) as usize]
    }
}
