//! End-to-end experiments: synthesize, train on legitimate captures, score
//! held-out legitimate and attack traffic, and report.
//!
//! Orientation: a *positive* is an attack. A false positive is a legitimate
//! request rejected, a false negative an attack accepted.

use serde::{Deserialize, Deserializer, Serialize};

use super::presets::Preset;
use crate::detector::{Decision, DetectorConfig, DetectorModel, NormParams, ScorerKind, System};
use crate::dsp::ReceiverConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureName, FeatureVector};
use crate::rng::{derive_seed, substream};
use crate::signal::{IqBuffer, ModulationKind};
use crate::synth::{
    generate_dataset, AttackChain, AttackScenario, DeviceProfile, Label, LabeledCapture,
    ScenarioConfig, LEGIT_PARTITION,
};

/// Captures per pilot batch while searching for the SNR-matching distance.
pub const SNR_PILOT_CAPTURES: usize = 24;
/// Attack mean SNR must land within this of the legitimate mean, dB.
pub const SNR_MATCH_TOLERANCE_DB: f64 = 0.5;
const SNR_SEARCH_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One preset or a list; all share the same legitimate baseline.
    #[serde(alias = "preset", deserialize_with = "one_or_many")]
    pub presets: Vec<Preset>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "fsk")]
    pub modulation: ModulationKind,
    #[serde(default = "hundred")]
    pub train_count: usize,
    #[serde(default = "hundred")]
    pub legit_test_count: usize,
    /// Test requests per preset.
    #[serde(default = "hundred")]
    pub attack_count: usize,
    #[serde(default = "knn")]
    pub scorer: ScorerKind,
    #[serde(default = "pkes")]
    pub system: System,
    #[serde(default)]
    pub threshold_gamma: Option<f64>,
    /// Preambles per RKE request.
    #[serde(default = "three")]
    pub rke_preambles: usize,
    /// `None` follows the preset.
    #[serde(default)]
    pub snr_match: Option<bool>,
    #[serde(default)]
    pub legit_device: Option<DeviceProfile>,
    #[serde(default)]
    pub receiver: Option<ReceiverConfig>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Preset>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Preset),
        Many(Vec<Preset>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

fn fsk() -> ModulationKind {
    ModulationKind::Fsk
}
fn hundred() -> usize {
    100
}
fn three() -> usize {
    3
}
fn knn() -> ScorerKind {
    ScorerKind::Knn
}
fn pkes() -> System {
    System::Pkes
}

impl ExperimentConfig {
    pub fn new(presets: &[Preset], seed: u64) -> Self {
        ExperimentConfig {
            presets: presets.to_vec(),
            seed,
            modulation: ModulationKind::Fsk,
            train_count: 100,
            legit_test_count: 100,
            attack_count: 100,
            scorer: ScorerKind::Knn,
            system: System::Pkes,
            threshold_gamma: None,
            rke_preambles: 3,
            snr_match: None,
            legit_device: None,
            receiver: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.presets.is_empty() {
            return Err(Error::Config("no preset given".into()));
        }
        if self.train_count < 10 {
            return Err(Error::Config(format!(
                "need at least 10 training captures, got {}",
                self.train_count
            )));
        }
        if self.system == System::Rke
            && !(1..=crate::detector::MAX_RKE_PREAMBLES).contains(&self.rke_preambles)
        {
            return Err(Error::Config(format!(
                "rke_preambles must be 1..={}",
                crate::detector::MAX_RKE_PREAMBLES
            )));
        }
        if let Some(g) = self.threshold_gamma {
            if !(g > 0.0) {
                return Err(Error::Config(format!(
                    "threshold must be positive, got {g}"
                )));
            }
        }
        Ok(())
    }

    fn captures_per_request(&self) -> usize {
        match self.system {
            System::Pkes => 1,
            System::Rke => self.rke_preambles,
        }
    }

    fn scenario_config(&self, legit_count: usize) -> ScenarioConfig {
        let mut sc = ScenarioConfig::new(self.modulation, self.seed, legit_count);
        if let Some(d) = &self.legit_device {
            sc.legit_device = d.clone();
        }
        if let Some(r) = self.receiver {
            sc.receiver = r;
        }
        sc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub tpr: Option<f64>,
}

impl Metrics {
    /// Rates over legitimate requests (`false_pos` of `legit`) and attacks
    /// (`false_neg` of `attack`); empty populations give `None`.
    pub fn from_counts(false_pos: usize, legit: usize, false_neg: usize, attack: usize) -> Self {
        let rate = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
        let fpr = rate(false_pos, legit);
        let fnr = rate(false_neg, attack);
        Metrics {
            fpr,
            tnr: fpr.map(|r| 1.0 - r),
            fnr,
            tpr: fnr.map(|r| 1.0 - r),
        }
    }
}

/// Score of one test request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub partition: String,
    pub label: Label,
    /// Index of the request within its partition.
    pub index: usize,
    /// Capture seeds making up the request.
    pub seeds: Vec<u64>,
    pub z_score: Option<f64>,
    pub raw_score: Option<f64>,
    pub decision: Decision,
    /// Why no score exists. Unprocessable requests are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub partition: String,
    pub label: Label,
    pub count: usize,
    pub rejected: usize,
    pub reject_rate: f64,
    pub median_z: Option<f64>,
    pub min_z: Option<f64>,
    pub max_z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrMatch {
    pub target_db: f64,
    pub achieved_db: f64,
    pub relay_distance_m: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub train: usize,
    pub legit_test: usize,
    pub attack_test: usize,
}

/// Machine-readable outcome of one preset. Contains nothing
/// run-dependent, so identical configs give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub modulation: ModulationKind,
    pub scorer: ScorerKind,
    pub system: System,
    pub threshold_gamma: f64,
    pub feature_names: Vec<FeatureName>,
    pub norm: NormParams,
    pub counts: ReportCounts,
    pub metrics: Metrics,
    pub partitions: Vec<PartitionStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_match: Option<SnrMatch>,
    pub samples: Vec<SampleResult>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn partition(&self, name: &str) -> Option<&PartitionStats> {
        self.partitions.iter().find(|p| p.partition == name)
    }

    /// z-scores of scored requests in `partition`.
    pub fn z_scores(&self, partition: &str) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.partition == partition)
            .filter_map(|s| s.z_score)
            .collect()
    }

    /// One row per request.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("scenario,partition,label,index,seeds,z_score,raw_score,decision,error\n");
        let num = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for s in &self.samples {
            let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
            let decision = match s.decision {
                Decision::Accept => "accept",
                Decision::Reject => "reject",
            };
            let error = s
                .error
                .as_deref()
                .unwrap_or("")
                .replace(['"', ',', '\n'], " ");
            out += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                self.scenario,
                s.partition,
                s.label,
                s.index,
                seeds.join(";"),
                num(s.z_score),
                num(s.raw_score),
                decision,
                error
            );
        }
        out
    }

    /// Short human summary.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| {
            v.map(|x| format!("{:.2}%", 100.0 * x))
                .unwrap_or_else(|| "n/a".into())
        };
        let mut out = format!(
            "{} [{} {} {} seed={} Γ={}]: FPR {} FNR {} TPR {} TNR {}\n",
            self.scenario,
            self.modulation,
            self.system,
            self.scorer,
            self.seed,
            self.threshold_gamma,
            pct(self.metrics.fpr),
            pct(self.metrics.fnr),
            pct(self.metrics.tpr),
            pct(self.metrics.tnr)
        );
        for p in &self.partitions {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
            out += &format!(
                "  {:<28} {:>4} requests  rejected {:>4}  median z {}  range [{}, {}]\n",
                p.partition,
                p.count,
                p.rejected,
                f(p.median_z),
                f(p.min_z),
                f(p.max_z)
            );
        }
        if let Some(m) = &self.snr_match {
            out += &format!(
                "  SNR matched at {:.1} m: attack {:.2} dB vs legit {:.2} dB\n",
                m.relay_distance_m, m.achieved_db, m.target_db
            );
        }
        out
    }
}

/// Trained detector plus held-out legitimate traffic, reused across presets.
pub struct Baseline {
    pub config: ExperimentConfig,
    pub extractor: FeatureExtractor,
    pub model: DetectorModel,
    /// Mean SNR of the training captures, dB.
    pub legit_snr_db: f64,
    legit_test: Vec<(LabeledCapture, Result<FeatureVector>)>,
}

fn extract_all(
    fx: &FeatureExtractor,
    captures: Vec<LabeledCapture>,
) -> Vec<(LabeledCapture, Result<FeatureVector>)> {
    let refs: Vec<&IqBuffer> = captures.iter().map(|c| &c.iq).collect();
    let feats = fx.extract_batch(&refs);
    captures.into_iter().zip(feats).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_snr(feats: &[&FeatureVector]) -> Option<f64> {
    let v: Vec<f64> = feats
        .iter()
        .filter_map(|f| f.get(FeatureName::SnrDb))
        .collect();
    (!v.is_empty()).then(|| mean(&v))
}

impl Baseline {
    /// Synthesizes the legitimate partition, trains on its head and keeps
    /// the tail as legitimate test traffic.
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let per = config.captures_per_request();
        let total = config.train_count + config.legit_test_count * per;
        let sc = config.scenario_config(total);
        let ds = generate_dataset(&sc)?;
        let extractor = FeatureExtractor::new(ds.modulation, ds.receiver)?;
        let mut all = extract_all(&extractor, ds.captures);
        let legit_test = all.split_off(config.train_count);
        // The semi-supervised contract: nothing but legitimate captures is
        // ever trained on.
        let mut train = Vec::new();
        for (c, f) in &all {
            debug_assert_eq!(c.label, Label::Legit);
            match f {
                Ok(v) => train.push(v.clone()),
                Err(e) => log::warn!("training capture {} dropped: {e}", c.seed),
            }
        }
        if train.len() < 10 {
            return Err(Error::InvalidTrainingSet(format!(
                "only {} usable training captures",
                train.len()
            )));
        }
        let mut dc = DetectorConfig::new(config.scorer, config.system);
        dc.threshold_gamma = config.threshold_gamma;
        let model = DetectorModel::train(&train, &dc, &mut substream(config.seed, "npc", 0))?;
        let legit_snr_db = mean_snr(&train.iter().collect::<Vec<_>>())
            .ok_or_else(|| Error::InvalidTrainingSet("no SNR feature".into()))?;
        Ok(Baseline {
            config: config.clone(),
            extractor,
            model,
            legit_snr_db,
            legit_test,
        })
    }

    fn attack_dataset(
        &self,
        scenario: AttackScenario,
        seed: u64,
    ) -> Result<Vec<(LabeledCapture, Result<FeatureVector>)>> {
        let mut sc = self.config.scenario_config(0).with_scenario(scenario);
        sc.seed = seed;
        Ok(extract_all(
            &self.extractor,
            generate_dataset(&sc)?.captures,
        ))
    }

    /// Finds the amplifier-to-vehicle distance at which the attack's mean SNR
    /// equals the legitimate mean. The pilot batch keeps its seed across
    /// steps so the search sees a smooth, monotone function of distance.
    fn match_snr(&self, scenario: &AttackScenario) -> Result<AttackScenario> {
        let with_distance = |d: f64| -> Result<AttackScenario> {
            let mut s = scenario.clone();
            match &mut s.chain {
                AttackChain::Amplification {
                    relay_distance_m, ..
                } => *relay_distance_m = Some(d),
                _ => {
                    return Err(Error::Config(format!(
                        "SNR matching needs an amplification chain, got {}",
                        s.label()
                    )))
                }
            }
            Ok(s)
        };
        let pilot_seed = derive_seed(self.config.seed, "snr_pilot", 0);
        let snr_at = |d: f64| -> Result<f64> {
            let pilot = AttackScenario {
                count: SNR_PILOT_CAPTURES,
                ..with_distance(d)?
            };
            let feats = self.attack_dataset(pilot, pilot_seed)?;
            let ok: Vec<&FeatureVector> =
                feats.iter().filter_map(|(_, f)| f.as_ref().ok()).collect();
            mean_snr(&ok).ok_or_else(|| {
                Error::Config(format!("no pilot capture at {d} m could be processed"))
            })
        };
        let target = self.legit_snr_db;
        // Bisect log10(distance) over a bracket around the distance whose
        // path loss cancels the gain.
        let start = match &scenario.chain {
            AttackChain::Amplification { amp_gain_db, .. } => {
                let ch = self.config.scenario_config(0).channel;
                crate::synth::gain_offset_distance(&ch, *amp_gain_db).max(ch.reference_distance_m)
            }
            _ => 1.0,
        };
        let (mut lo, mut hi) = ((start.log10() - 1.5).max(0.0), start.log10() + 1.5);
        for _ in 0..SNR_SEARCH_STEPS {
            let mid = 0.5 * (lo + hi);
            let snr = snr_at(10f64.powf(mid))?;
            if (snr - target).abs() < 0.1 {
                lo = mid;
                hi = mid;
                break;
            }
            if snr > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        with_distance(10f64.powf(0.5 * (lo + hi)))
    }

    /// Runs `preset` against this baseline.
    pub fn evaluate(&self, preset: Preset) -> Result<ExperimentReport> {
        let cfg = &self.config;
        let per = cfg.captures_per_request();
        let legit = cfg
            .legit_device
            .clone()
            .unwrap_or_else(DeviceProfile::legit_default);
        let mut scenario =
            preset.scenario(&legit, &self.extractor.modulation(), cfg.attack_count * per);
        let matching = cfg.snr_match.unwrap_or(preset.snr_matched());
        if matching {
            scenario = self.match_snr(&scenario)?;
        }
        let relay_distance = match &scenario.chain {
            AttackChain::Amplification {
                relay_distance_m, ..
            } => *relay_distance_m,
            _ => None,
        };
        let attacks = self.attack_dataset(scenario, cfg.seed)?;
        let snr_match = match (matching, relay_distance) {
            (true, Some(d)) => {
                let ok: Vec<&FeatureVector> = attacks
                    .iter()
                    .filter_map(|(_, f)| f.as_ref().ok())
                    .collect();
                let achieved = mean_snr(&ok).unwrap_or(f64::NAN);
                Some(SnrMatch {
                    target_db: self.legit_snr_db,
                    achieved_db: achieved,
                    relay_distance_m: d,
                    within_tolerance: (achieved - self.legit_snr_db).abs()
                        <= SNR_MATCH_TOLERANCE_DB,
                })
            }
            _ => None,
        };

        let mut samples = self.score_partition(LEGIT_PARTITION, &self.legit_test)?;
        samples.extend(self.score_partition(preset.name(), &attacks)?);
        let stats_of = |name: &str| partition_stats(name, &samples);
        let mut partitions = vec![stats_of(LEGIT_PARTITION)];
        partitions.push(stats_of(preset.name()));

        let legit_n = samples.iter().filter(|s| !s.label.is_attack()).count();
        let attack_n = samples.len() - legit_n;
        let fp = samples
            .iter()
            .filter(|s| !s.label.is_attack() && s.decision == Decision::Reject)
            .count();
        let fn_ = samples
            .iter()
            .filter(|s| s.label.is_attack() && s.decision == Decision::Accept)
            .count();
        Ok(ExperimentReport {
            scenario: preset.name().into(),
            seed: cfg.seed,
            modulation: cfg.modulation,
            scorer: cfg.scorer,
            system: cfg.system,
            threshold_gamma: self.model.threshold_gamma,
            feature_names: self.model.feature_names.clone(),
            norm: self.model.norm,
            counts: ReportCounts {
                train: cfg.train_count,
                legit_test: legit_n,
                attack_test: attack_n,
            },
            metrics: Metrics::from_counts(fp, legit_n, fn_, attack_n),
            partitions,
            snr_match,
            samples,
        })
    }

    /// Groups consecutive captures into requests and scores each.
    fn score_partition(
        &self,
        name: &str,
        items: &[(LabeledCapture, Result<FeatureVector>)],
    ) -> Result<Vec<SampleResult>> {
        let per = self.config.captures_per_request();
        let mut out = Vec::with_capacity(items.len() / per);
        for (index, chunk) in items.chunks_exact(per).enumerate() {
            let label = chunk[0].0.label;
            let seeds = chunk.iter().map(|(c, _)| c.seed).collect();
            let feats: std::result::Result<Vec<FeatureVector>, String> = chunk
                .iter()
                .map(|(_, f)| f.as_ref().cloned().map_err(|e| e.to_string()))
                .collect();
            let verdict = feats.and_then(|f| {
                match self.config.system {
                    System::Pkes => self.model.detect_pkes(&f[0]),
                    System::Rke => self.model.detect_rke(&f),
                }
                .map_err(|e| e.to_string())
            });
            out.push(match verdict {
                Ok(v) => SampleResult {
                    partition: name.into(),
                    label,
                    index,
                    seeds,
                    z_score: Some(v.z_score),
                    raw_score: Some(v.raw_score),
                    decision: v.decision,
                    error: None,
                },
                Err(e) => SampleResult {
                    partition: name.into(),
                    label,
                    index,
                    seeds,
                    z_score: None,
                    raw_score: None,
                    decision: Decision::Reject,
                    error: Some(e),
                },
            });
        }
        Ok(out)
    }
}

fn partition_stats(name: &str, samples: &[SampleResult]) -> PartitionStats {
    let mine: Vec<&SampleResult> = samples.iter().filter(|s| s.partition == name).collect();
    let mut z: Vec<f64> = mine.iter().filter_map(|s| s.z_score).collect();
    z.sort_by(f64::total_cmp);
    let rejected = mine
        .iter()
        .filter(|s| s.decision == Decision::Reject)
        .count();
    let count = mine.len();
    PartitionStats {
        partition: name.into(),
        label: mine.first().map(|s| s.label).unwrap_or(Label::Legit),
        count,
        rejected,
        reject_rate: if count > 0 {
            rejected as f64 / count as f64
        } else {
            0.0
        },
        median_z: median_sorted(&z),
        min_z: z.first().copied(),
        max_z: z.last().copied(),
    }
}

/// Median of an ascending slice.
pub fn median_sorted(z: &[f64]) -> Option<f64> {
    match z.len() {
        0 => None,
        n if n % 2 == 1 => Some(z[n / 2]),
        n => Some(0.5 * (z[n / 2 - 1] + z[n / 2])),
    }
}

/// One report per preset of `config`, in config order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let baseline = Baseline::build(config)?;
    config
        .presets
        .iter()
        .map(|p| baseline.evaluate(*p))
        .collect()
}
