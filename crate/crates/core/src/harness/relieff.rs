//! ReliefF feature ranking.
//!
//! Neighbours are found in standardized feature space (Manhattan distance);
//! weight updates use range-normalized per-feature differences. Every
//! instance is visited (`m = n`) with `k` nearest hits and misses per class,
//! misses weighted by class prior.

use serde::{Deserialize, Serialize};

use crate::detector::Standardizer;
use crate::error::{Error, Result};

pub const RELIEFF_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub weight: f64,
}

/// Features in descending weight; ties keep input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub features: Vec<RankedFeature>,
}

impl FeatureRanking {
    pub fn top(&self) -> Option<&str> {
        self.features.first().map(|f| f.name.as_str())
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }
}

/// Ranks the columns of `data` by how well they separate `classes`.
pub fn relieff(
    data: &[Vec<f64>],
    classes: &[usize],
    names: &[String],
    k: usize,
) -> Result<FeatureRanking> {
    let n = data.len();
    if classes.len() != n {
        return Err(Error::RankingError(format!(
            "{n} instances but {} class labels",
            classes.len()
        )));
    }
    let dim = names.len();
    if let Some(row) = data.iter().find(|r| r.len() != dim) {
        return Err(Error::RankingError(format!(
            "instance has {} features, expected {dim}",
            row.len()
        )));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::RankingError("non-finite feature value".into()));
    }
    if k == 0 {
        return Err(Error::RankingError("k must be positive".into()));
    }
    let mut labels: Vec<usize> = classes.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::RankingError(format!(
            "need at least two classes, found {}",
            labels.len()
        )));
    }
    let prior = |c: usize| classes.iter().filter(|&&x| x == c).count() as f64 / n as f64;

    let std = Standardizer::fit(data, 1);
    let z: Vec<Vec<f64>> = data.iter().map(|r| std.apply(r)).collect();
    let range: Vec<f64> = (0..dim)
        .map(|d| {
            let (lo, hi) = data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[d]), hi.max(r[d]))
                });
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect();

    let mut w = vec![0.0; dim];
    let m = n as f64;
    for i in 0..n {
        let ci = classes[i];
        // Distances to every other instance, nearest first; index breaks ties.
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    z[i].iter()
                        .zip(&z[j])
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>(),
                    j,
                )
            })
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let p_ci = prior(ci);
        for &c in &labels {
            let near: Vec<usize> = by_dist
                .iter()
                .filter(|(_, j)| classes[*j] == c)
                .take(k)
                .map(|&(_, j)| j)
                .collect();
            if near.is_empty() {
                continue;
            }
            let scale = if c == ci {
                -1.0
            } else {
                prior(c) / (1.0 - p_ci)
            };
            for d in 0..dim {
                let diff: f64 = near
                    .iter()
                    .map(|&j| (data[i][d] - data[j][d]).abs() / range[d])
                    .sum();
                w[d] += scale * diff / (m * near.len() as f64);
            }
        }
    }
    let mut features: Vec<RankedFeature> = names
        .iter()
        .cloned()
        .zip(w)
        .map(|(name, weight)| RankedFeature { name, weight })
        .collect();
    features.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(FeatureRanking { features })
}
