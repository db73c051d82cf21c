use serde::{Deserialize, Serialize};

use super::{check_dims, Standardizer};
use crate::error::{Error, Result};

/// Nearest-neighbour distance scorer in standardized Euclidean space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub training_vectors: Vec<Vec<f64>>,
    /// Per-dimension sample standard deviation of the training set.
    pub stds: Vec<f64>,
    pub k: usize,
}

impl KnnModel {
    pub fn train(train: &[Vec<f64>], k: usize) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::InvalidTrainingSet(format!(
                "k-NN needs at least 2 vectors, got {}",
                train.len()
            )));
        }
        if k == 0 || k > train.len() {
            return Err(Error::InvalidTrainingSet(format!(
                "k = {k} is outside 1..={}",
                train.len()
            )));
        }
        check_dims(train)?;
        let stds = Standardizer::fit(train, 1).stds;
        Ok(KnnModel {
            training_vectors: train.to_vec(),
            stds,
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.stds.len()
    }

    /// Mean standardized distance to the `k` nearest training points.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "vector has {} dimensions, model has {}",
                v.len(),
                self.dim()
            )));
        }
        let mut dists: Vec<f64> = self
            .training_vectors
            .iter()
            .map(|t| {
                t.iter()
                    .zip(v)
                    .zip(&self.stds)
                    .map(|((a, b), s)| ((a - b) / s).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        if self.k == 1 {
            return Ok(dists.iter().copied().fold(f64::INFINITY, f64::min));
        }
        dists.sort_by(f64::total_cmp);
        Ok(dists[..self.k].iter().sum::<f64>() / self.k as f64)
    }
}
