use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;

use super::NnError;
use crate::rng;

/// Draws sample indices i.i.d. with probability proportional to their
/// weights, with replacement.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(weights: Vec<f64>, seed: u64) -> Result<Self, NnError> {
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(NnError::InvalidWeight { index, value });
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(NnError::AllZeroWeights);
        }
        let dist = WeightedIndex::new(&weights).map_err(|_| NnError::AllZeroWeights)?;
        Ok(Self {
            weights,
            dist,
            rng: rng::stream(seed, &[0x5a3b]),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Target probability of each index.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn sample_indices(&mut self, count: usize) -> Vec<usize> {
        (0..count)
            .map(|_| self.dist.sample(&mut self.rng))
            .collect()
    }
}
