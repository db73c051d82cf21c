//! One-class scoring, score normalization and the accept/reject logic for
//! passive (PKES) and remote (RKE) keyless entry.

mod knn;
mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureVector};
use crate::rng::Rng;
use crate::signal::ModulationKind;

pub use knn::KnnModel;
pub use svm::{SvmModel, SvmParams, DEFAULT_NU, DEFAULT_TOLERANCE};

/// Version written to and required from model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "fobprint-detector";
pub const NPC_ITERATIONS: usize = 10;
const SIGMA_FLOOR: f64 = 1e-9;
/// Largest preamble repetition count of a remote keyless entry press.
pub const MAX_RKE_PREAMBLES: usize = 5;
/// Threshold preset for the ASK vehicle setup.
pub const ASK_PRESET_GAMMA: f64 = 70.0;

/// Per-dimension centering and scaling. Zero-spread dimensions get unit
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// `ddof = 1` gives the sample standard deviation, `0` the population one.
    pub fn fit(data: &[Vec<f64>], ddof: usize) -> Self {
        let n = data.len();
        let dim = data.first().map_or(0, Vec::len);
        let means: Vec<f64> = (0..dim)
            .map(|d| data.iter().map(|v| v[d]).sum::<f64>() / n as f64)
            .collect();
        let stds = (0..dim)
            .map(|d| {
                let ss: f64 = data.iter().map(|v| (v[d] - means[d]).powi(2)).sum();
                let s = (ss / (n.saturating_sub(ddof).max(1)) as f64).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    log::debug!("feature dimension {d} has zero spread; using unit scale");
                    1.0
                }
            })
            .collect();
        Standardizer { means, stds }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Common dimension of `data`.
fn check_dims(data: &[Vec<f64>]) -> Result<usize> {
    let dim = data.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::InvalidTrainingSet(
            "training vectors are empty".into(),
        ));
    }
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(Error::InvalidTrainingSet(format!(
            "vector {i} has {} dimensions, expected {dim}",
            v.len()
        )));
    }
    if data.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidTrainingSet(
            "training vectors contain non-finite values".into(),
        ));
    }
    Ok(dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Knn,
    Svm,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::Knn => "knn",
            ScorerKind::Svm => "svm",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ScorerKind::Knn),
            "svm" => Ok(ScorerKind::Svm),
            other => Err(Error::Config(format!(
                "unknown scorer '{other}' (expected knn or svm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Pkes,
    Rke,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Pkes => "pkes",
            System::Rke => "rke",
        })
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pkes" => Ok(System::Pkes),
            "rke" => Ok(System::Rke),
            other => Err(Error::Config(format!(
                "unknown system '{other}' (expected pkes or rke)"
            ))),
        }
    }
}

/// Default `Γ` for a system and scorer.
pub fn default_threshold(system: System, scorer: ScorerKind) -> f64 {
    match (system, scorer) {
        (System::Pkes, ScorerKind::Knn) => 4.0,
        (System::Pkes, ScorerKind::Svm) => 5.0,
        (System::Rke, ScorerKind::Knn) => 4.5,
        (System::Rke, ScorerKind::Svm) => 5.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub svm: SvmParams,
}

fn one() -> usize {
    1
}

impl ScorerConfig {
    pub fn knn() -> Self {
        ScorerConfig {
            kind: ScorerKind::Knn,
            k: 1,
            svm: SvmParams::default(),
        }
    }

    pub fn svm() -> Self {
        ScorerConfig {
            kind: ScorerKind::Svm,
            k: 1,
            svm: SvmParams::default(),
        }
    }

    pub fn of_kind(kind: ScorerKind) -> Self {
        match kind {
            ScorerKind::Knn => Self::knn(),
            ScorerKind::Svm => Self::svm(),
        }
    }

    pub fn fit(&self, train: &[Vec<f64>]) -> Result<Scorer> {
        match self.kind {
            ScorerKind::Knn => KnnModel::train(train, self.k).map(Scorer::Knn),
            ScorerKind::Svm => SvmModel::train(train, self.svm).map(Scorer::Svm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scorer {
    Knn(KnnModel),
    Svm(SvmModel),
}

impl Scorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::Knn(_) => ScorerKind::Knn,
            Scorer::Svm(_) => ScorerKind::Svm,
        }
    }

    /// Raw anomaly score; larger is more anomalous.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        match self {
            Scorer::Knn(m) => m.score(v),
            Scorer::Svm(m) => m.score(v),
        }
    }
}

/// Mean and spread of held-out legitimate scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mu: f64,
    pub sigma: f64,
}

impl NormParams {
    /// Fits `μ` and the population `σ` (floored at `1e-9`) to `scores`.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidTrainingSet("no scores to normalize".into()));
        }
        let n = scores.len() as f64;
        let mu = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
        Ok(NormParams {
            mu,
            sigma: var.sqrt().max(SIGMA_FLOOR),
        })
    }

    pub fn z(&self, score: f64) -> f64 {
        (score - self.mu).abs() / self.sigma
    }
}

/// Normalization parameter calculation: `iterations` random 90/10 splits,
/// fitting on 90 % and scoring the held-out 10 %.
pub fn npc(
    train: &[Vec<f64>],
    scorer: &ScorerConfig,
    iterations: usize,
    rng: &mut Rng,
) -> Result<NormParams> {
    npc_scores(train, scorer, iterations, rng).and_then(|s| NormParams::from_scores(&s))
}

/// Held-out scores accumulated by [`npc`].
pub fn npc_scores(
    train: &[Vec<f64>],
    scorer: &ScorerConfig,
    iterations: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = train.len();
    if n < 10 {
        return Err(Error::InvalidTrainingSet(format!(
            "normalization needs at least 10 vectors, got {n}"
        )));
    }
    check_dims(train)?;
    let held = n.div_ceil(10);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scores = Vec::with_capacity(iterations * held);
    for _ in 0..iterations {
        order.shuffle(rng);
        let (test, fit) = order.split_at(held);
        let fit_set: Vec<Vec<f64>> = fit.iter().map(|&i| train[i].clone()).collect();
        let model = scorer.fit(&fit_set)?;
        for &i in test {
            scores.push(model.score(&train[i])?);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreambleScore {
    pub raw_score: f64,
    pub z_score: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    /// For RKE, the `(⌊N/2⌋+1)`-th largest preamble z-score: the request is
    /// rejected exactly when this exceeds `Γ`.
    pub z_score: f64,
    pub raw_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_preamble: Option<Vec<PreambleScore>>,
}

/// Majority rule: reject when more than `⌊N/2⌋` preambles are flagged.
pub fn rke_majority(flags: &[bool]) -> Decision {
    if flags.iter().filter(|&&f| f).count() > flags.len() / 2 {
        Decision::Reject
    } else {
        Decision::Accept
    }
}

/// Training options for [`DetectorModel::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub scorer: ScorerConfig,
    pub system: System,
    /// `None` uses [`default_threshold`].
    #[serde(default)]
    pub threshold_gamma: Option<f64>,
    #[serde(default = "npc_iterations")]
    pub npc_iterations: usize,
    /// Feature subset; `None` takes all features for PKES and the
    /// `[f_peak, spectral_brightness]` subset for RKE.
    #[serde(default)]
    pub features: Option<Vec<FeatureName>>,
}

fn npc_iterations() -> usize {
    NPC_ITERATIONS
}

impl DetectorConfig {
    pub fn new(scorer: ScorerKind, system: System) -> Self {
        DetectorConfig {
            scorer: ScorerConfig::of_kind(scorer),
            system,
            threshold_gamma: None,
            npc_iterations: NPC_ITERATIONS,
            features: None,
        }
    }

    pub fn with_threshold(mut self, gamma: f64) -> Self {
        self.threshold_gamma = Some(gamma);
        self
    }
}

/// Trained scorer, its normalization and decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format: String,
    pub version: u32,
    pub system: System,
    pub modulation: ModulationKind,
    pub feature_names: Vec<FeatureName>,
    pub scorer: Scorer,
    pub norm: NormParams,
    pub threshold_gamma: f64,
}

impl DetectorModel {
    /// Fits the scorer on all of `train` and the normalization by NPC.
    pub fn train(train: &[FeatureVector], config: &DetectorConfig, rng: &mut Rng) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidTrainingSet("no training vectors".into()))?;
        if let Some(v) = train.iter().find(|v| v.modulation != first.modulation) {
            return Err(Error::InvalidTrainingSet(format!(
                "mixed modulations {} and {}",
                first.modulation, v.modulation
            )));
        }
        let feature_names = match (&config.features, config.system) {
            (Some(f), _) => f.clone(),
            (None, System::Rke) => FeatureName::rke_subset().to_vec(),
            (None, System::Pkes) => first.names.clone(),
        };
        let data = train
            .iter()
            .map(|v| {
                v.select(&feature_names)
                    .map(|s| s.values)
                    .map_err(|e| Error::InvalidTrainingSet(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        for (d, name) in feature_names.iter().enumerate() {
            if data.iter().all(|r| r[d] == data[0][d]) {
                log::warn!("{name} is constant over the training set; it cannot separate anything");
            }
        }
        let threshold_gamma =
            config
                .threshold_gamma
                .unwrap_or_else(|| match (first.modulation, config.system) {
                    (ModulationKind::Ask, System::Pkes) => ASK_PRESET_GAMMA,
                    _ => default_threshold(config.system, config.scorer.kind),
                });
        if !(threshold_gamma > 0.0) {
            return Err(Error::Config(format!(
                "threshold must be positive, got {threshold_gamma}"
            )));
        }
        let scorer = config.scorer.fit(&data)?;
        let norm = npc(&data, &config.scorer, config.npc_iterations, rng)?;
        Ok(DetectorModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            system: config.system,
            modulation: first.modulation,
            feature_names,
            scorer,
            norm,
            threshold_gamma,
        })
    }

    /// Raw score and z-score of `v`.
    pub fn score(&self, v: &FeatureVector) -> Result<(f64, f64)> {
        let projected = v.select(&self.feature_names)?;
        let raw = self.scorer.score(&projected.values)?;
        Ok((raw, self.norm.z(raw)))
    }

    pub fn detect_pkes(&self, v: &FeatureVector) -> Result<Verdict> {
        if self.system != System::Pkes {
            return Err(Error::InvalidInput("model was trained for RKE".into()));
        }
        let (raw_score, z_score) = self.score(v)?;
        let decision = if z_score > self.threshold_gamma {
            Decision::Reject
        } else {
            Decision::Accept
        };
        Ok(Verdict {
            decision,
            z_score,
            raw_score,
            per_preamble: None,
        })
    }

    /// Per-preamble thresholding followed by the majority rule.
    pub fn detect_rke(&self, preambles: &[FeatureVector]) -> Result<Verdict> {
        if self.system != System::Rke {
            return Err(Error::InvalidInput("model was trained for PKES".into()));
        }
        if preambles.is_empty() || preambles.len() > MAX_RKE_PREAMBLES {
            return Err(Error::InvalidInput(format!(
                "RKE takes 1..={MAX_RKE_PREAMBLES} preambles, got {}",
                preambles.len()
            )));
        }
        let per = preambles
            .iter()
            .map(|v| {
                self.score(v).map(|(raw_score, z_score)| PreambleScore {
                    raw_score,
                    z_score,
                    flagged: z_score > self.threshold_gamma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let flags: Vec<bool> = per.iter().map(|p| p.flagged).collect();
        let decision = rke_majority(&flags);
        let mut ranked = per.clone();
        ranked.sort_by(|a, b| b.z_score.total_cmp(&a.z_score));
        let pivot = ranked[per.len() / 2];
        Ok(Verdict {
            decision,
            z_score: pivot.z_score,
            raw_score: pivot.raw_score,
            per_preamble: Some(per),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DetectorModel =
            serde_json::from_str(text).map_err(|e| Error::parse("detector model", e))?;
        if m.format != MODEL_FORMAT {
            return Err(Error::parse(
                "detector model",
                format!("unexpected format '{}'", m.format),
            ));
        }
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                "detector model",
                format!(
                    "unsupported version {} (expected {MODEL_FORMAT_VERSION})",
                    m.version
                ),
            ));
        }
        if !(m.threshold_gamma > 0.0 && m.norm.sigma > 0.0) {
            return Err(Error::parse(
                "detector model",
                "threshold and sigma must be positive",
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn vectors(seed: u64, n: usize) -> Vec<FeatureVector> {
        let mut r = from_seed(seed);
        let names = FeatureName::order_for(ModulationKind::Fsk).to_vec();
        (0..n)
            .map(|_| {
                let vals = (0..4)
                    .map(|d| 10.0 * d as f64 + r.sample::<f64, _>(StandardNormal))
                    .collect();
                FeatureVector::new(names.clone(), vals, ModulationKind::Fsk).unwrap()
            })
            .collect()
    }

    #[test]
    fn npc_accumulates_expected_count() {
        let data: Vec<Vec<f64>> = vectors(1, 95).into_iter().map(|v| v.values).collect();
        let s = npc_scores(&data, &ScorerConfig::knn(), 10, &mut from_seed(2)).unwrap();
        assert_eq!(s.len(), 10 * 10);
        let a = npc(&data, &ScorerConfig::knn(), 10, &mut from_seed(2)).unwrap();
        let b = npc(&data, &ScorerConfig::knn(), 10, &mut from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert!(npc(&data[..9], &ScorerConfig::knn(), 10, &mut from_seed(2)).is_err());
    }

    #[test]
    fn pkes_threshold_contract() {
        let mut m = DetectorModel::train(
            &vectors(3, 50),
            &DetectorConfig::new(ScorerKind::Knn, System::Pkes),
            &mut from_seed(1),
        )
        .unwrap();
        assert_eq!(m.threshold_gamma, 4.0);
        let v = vectors(3, 1).remove(0);
        let (raw, _) = m.score(&v).unwrap();
        m.norm = NormParams {
            mu: raw - 0.5,
            sigma: 1.0,
        };
        assert_eq!(m.detect_pkes(&v).unwrap().decision, Decision::Accept);
        m.norm = NormParams {
            mu: raw - 10.0,
            sigma: 1.0,
        };
        m.threshold_gamma = 5.0;
        let verdict = m.detect_pkes(&v).unwrap();
        assert_eq!(verdict.decision, Decision::Reject);
        assert!((verdict.z_score - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rke_majority_examples() {
        let f = |n: usize, k: usize| rke_majority(&(0..n).map(|i| i < k).collect::<Vec<_>>());
        assert_eq!(f(5, 3), Decision::Reject);
        assert_eq!(f(5, 2), Decision::Accept);
        assert_eq!(f(1, 1), Decision::Reject);
        assert_eq!(f(1, 0), Decision::Accept);
    }

    #[test]
    fn rke_uses_subset_and_checks_count() {
        let train = vectors(4, 40);
        let m = DetectorModel::train(
            &train,
            &DetectorConfig::new(ScorerKind::Svm, System::Rke),
            &mut from_seed(1),
        )
        .unwrap();
        assert_eq!(m.feature_names, FeatureName::rke_subset());
        assert!(m.detect_rke(&[]).is_err());
        assert!(m.detect_rke(&train[..6]).is_err());
        assert!(m.detect_pkes(&train[0]).is_err());
        let v = m.detect_rke(&train[..3]).unwrap();
        assert_eq!(v.per_preamble.unwrap().len(), 3);
    }

    #[test]
    fn model_json_round_trip() {
        for kind in [ScorerKind::Knn, ScorerKind::Svm] {
            let m = DetectorModel::train(
                &vectors(5, 30),
                &DetectorConfig::new(kind, System::Pkes),
                &mut from_seed(1),
            )
            .unwrap();
            let back = DetectorModel::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
            let probe = vectors(6, 5);
            for p in &probe {
                assert_eq!(back.detect_pkes(p).unwrap(), m.detect_pkes(p).unwrap());
            }
        }
        let bad = DetectorModel::train(
            &vectors(5, 30),
            &DetectorConfig::new(ScorerKind::Knn, System::Pkes),
            &mut from_seed(1),
        )
        .unwrap()
        .to_json()
        .replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            DetectorModel::from_json(&bad),
            Err(Error::ParseError { .. })
        ));
    }

    #[test]
    fn mixed_modulations_rejected() {
        let mut v = vectors(7, 20);
        v[3].modulation = ModulationKind::Ask;
        assert!(DetectorModel::train(
            &v,
            &DetectorConfig::new(ScorerKind::Knn, System::Pkes),
            &mut from_seed(1)
        )
        .is_err());
    }
}
