//! Experiment presets, the experiment runner, feature ranking and timing.

pub mod bench;
pub mod experiment;
pub mod presets;
pub mod relieff;

pub use bench::{bench_capture, BenchReport, StageTiming};
pub use experiment::{
    run_experiment, Baseline, ExperimentConfig, ExperimentReport, Metrics, PartitionStats,
    SampleResult, SnrMatch,
};
pub use presets::Preset;
pub use relieff::{relieff, FeatureRanking, RankedFeature, RELIEFF_K};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::synth::Label;

/// ReliefF over labeled feature vectors, one class per distinct label.
pub fn rank_features(vectors: &[FeatureVector], labels: &[Label]) -> Result<FeatureRanking> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::RankingError("no instances".into()))?;
    if let Some(v) = vectors.iter().find(|v| v.names != first.names) {
        return Err(Error::RankingError(format!(
            "mixed feature layouts {:?} and {:?}",
            first.names, v.names
        )));
    }
    let names: Vec<String> = first.names.iter().map(|n| n.to_string()).collect();
    let data: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let classes: Vec<usize> = labels.iter().map(|l| *l as usize).collect();
    relieff(&data, &classes, &names, RELIEFF_K)
}
