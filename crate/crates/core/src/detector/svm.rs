//! One-class SVM (ν formulation) with an RBF kernel, solved by SMO with
//! second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::{check_dims, Standardizer};
use crate::error::{Error, Result};

pub const DEFAULT_NU: f64 = 0.05;
/// Stopping tolerance on the maximal KKT violation.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Support vectors in standardized coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    /// Dual coefficients; they sum to one and lie in `[0, 1/(ν n)]`.
    pub coefficients: Vec<f64>,
    /// Offset `ρ` of the decision function `Σ α K(x_i, x) - ρ`.
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Solver tolerance in score units; scores within it of zero lie on
    /// the boundary.
    pub margin: f64,
    pub standardizer: Standardizer,
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub nu: f64,
    /// RBF width; `None` uses `1 / dim` on the standardized data.
    pub gamma: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            nu: DEFAULT_NU,
            gamma: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: 10_000_000,
        }
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvmModel {
    pub fn train(train: &[Vec<f64>], params: SvmParams) -> Result<Self> {
        let n = train.len();
        if n < 5 {
            return Err(Error::InvalidTrainingSet(format!(
                "one-class SVM needs at least 5 vectors, got {n}"
            )));
        }
        if !(params.nu > 0.0 && params.nu <= 1.0) {
            return Err(Error::InvalidTrainingSet(format!(
                "nu must be in (0, 1], got {}",
                params.nu
            )));
        }
        let dim = check_dims(train)?;
        let standardizer = Standardizer::fit(train, 0);
        let x: Vec<Vec<f64>> = train.iter().map(|v| standardizer.apply(v)).collect();
        let gamma = params.gamma.unwrap_or(1.0 / dim as f64);
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidTrainingSet(format!(
                "gamma must be positive, got {gamma}"
            )));
        }

        let q: Vec<Vec<f64>> = x
            .iter()
            .map(|a| x.iter().map(|b| rbf(a, b, gamma)).collect())
            .collect();
        let (alpha, rho) = solve(&q, params.nu, params.tolerance, params.max_iterations)?;

        // rescale from the Σα = νn, α <= 1 form to Σα = 1
        let scale = 1.0 / (params.nu * n as f64);
        let mut support_vectors = Vec::new();
        let mut coefficients = Vec::new();
        for (a, xi) in alpha.iter().zip(x) {
            if *a > 0.0 {
                support_vectors.push(xi);
                coefficients.push(a * scale);
            }
        }
        Ok(SvmModel {
            support_vectors,
            coefficients,
            rho: rho * scale,
            gamma,
            nu: params.nu,
            margin: params.tolerance * scale,
            standardizer,
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.means.len()
    }

    /// Raw decision value `ρ - Σ α_i K(x_i, v)`: positive outside the
    /// learned support. Bounded above by `ρ`.
    pub fn decision(&self, v: &[f64]) -> Result<f64> {
        let z = self.checked(v)?;
        let f: f64 = self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, a)| a * rbf(sv, &z, self.gamma))
            .sum();
        Ok(self.rho - f)
    }

    /// `ln(ρ / Σ α_i K(x_i, v))`: same sign and boundary as
    /// [`decision`](Self::decision) but unbounded, growing like the squared
    /// distance to the nearest support vector far from the data. Larger is
    /// more anomalous.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        let z = self.checked(v)?;
        // log-sum-exp so distant probes do not underflow to ln(0)
        let terms: Vec<f64> = self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, a)| {
                a.ln()
                    - self.gamma
                        * sv.iter()
                            .zip(&z)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        Ok(self.rho.ln() - lse)
    }

    /// Strictly outside the boundary, beyond solver precision.
    pub fn is_outlier(&self, v: &[f64]) -> Result<bool> {
        Ok(self.decision(v)? > self.margin)
    }

    fn checked(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "vector has {} dimensions, model has {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(self.standardizer.apply(v))
    }
}

/// Minimizes `½ αᵀQα` subject to `0 <= α_i <= 1`, `Σ α = ν n`.
/// Returns `(α, ρ)`.
fn solve(q: &[Vec<f64>], nu: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let n = q.len();
    let total = nu * n as f64;
    let mut alpha = vec![0.0; n];
    let mut remaining = total;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = remaining.min(1.0);
        remaining -= *a;
    }
    let mut grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| q[i][j] * alpha[j]).sum())
        .collect();

    let mut iter = 0;
    loop {
        // i maximizes -G over those that can grow
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if alpha[t] < 1.0 && -grad[t] >= gmax {
                gmax = -grad[t];
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 {
                gmax2 = gmax2.max(grad[t]);
                if i == usize::MAX {
                    continue;
                }
                let diff = gmax + grad[t];
                if diff > 0.0 {
                    let quad = (q[i][i] + q[t][t] - 2.0 * q[i][t]).max(TAU);
                    let obj = -diff * diff / quad;
                    if obj <= best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            break;
        }
        iter += 1;
        if iter > max_iter {
            return Err(Error::TrainingFailed(format!(
                "SMO did not reach tolerance {tol} in {max_iter} iterations"
            )));
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (q[i][i] + q[j][j] - 2.0 * q[i][j]).max(TAU);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = old_i + old_j;
        let mut ai = old_i - delta;
        let mut aj = old_j + delta;
        if sum > 1.0 {
            if ai > 1.0 {
                ai = 1.0;
                aj = sum - 1.0;
            }
            if aj > 1.0 {
                aj = 1.0;
                ai = sum - 1.0;
            }
        } else {
            if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += q[t][i] * di + q[t][j] * dj;
        }
    }

    let mut free_sum = 0.0;
    let mut free = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        if alpha[t] >= 1.0 {
            lb = lb.max(grad[t]);
        } else if alpha[t] <= 0.0 {
            ub = ub.min(grad[t]);
        } else {
            free += 1;
            free_sum += grad[t];
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok((alpha, rho))
}
