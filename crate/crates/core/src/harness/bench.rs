//! Per-stage timing of the detection path on a single capture.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::dsp::{detect_preamble, rms_normalize};
use crate::error::{Error, Result};
use crate::features::{
    carrier_offset, kurtosis, peak_frequency, snr_db, spectral_brightness, FeatureExtractor,
    PeakSearch,
};
use crate::signal::{IqBuffer, PulseSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Median over repetitions, milliseconds.
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub capture_samples: usize,
    pub repetitions: usize,
    pub stages: Vec<StageTiming>,
    /// Median of the whole capture-to-verdict path.
    pub detect_total_ms: f64,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} samples, median of {} runs\n",
            self.capture_samples, self.repetitions
        );
        for s in &self.stages {
            out += &format!("  {:<22} {:>9.3} ms\n", s.stage, s.median_ms);
        }
        out += &format!(
            "  {:<22} {:>9.3} ms\n",
            "detect (end to end)", self.detect_total_ms
        );
        out
    }
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64() * 1e3))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Times each stage of feature extraction and scoring on `capture`.
pub fn bench_capture(
    capture: &IqBuffer,
    fx: &FeatureExtractor,
    model: &DetectorModel,
    preamble_bits: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    if capture.is_empty() {
        return Err(Error::InvalidInput(
            "bench needs a non-empty capture".into(),
        ));
    }
    if repetitions == 0 {
        return Err(Error::InvalidInput(
            "bench needs at least one repetition".into(),
        ));
    }
    let names = [
        "filter+demodulate",
        "preamble detection",
        "snr_db",
        "rms normalize",
        "f_peak",
        "kurtosis",
        "spectral_brightness",
        "fc_offset",
        "score",
    ];
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut total = Vec::new();
    let rx = fx.receiver();
    let fs = capture.sample_rate_hz();
    for _ in 0..repetitions {
        let ((baseband, pulse), t0) = time(|| rx.front_end(capture))?;
        let (pre, t1) =
            time(|| detect_preamble(&pulse, &rx.modulation, preamble_bits, rx.guard_window()))?;
        let (_, t2) = time(|| snr_db(&pre.pulse, pre.span, pre.guard))?;
        let (d_rms, t3) = time(|| {
            let seg = PulseSignal::new(
                pre.pulse.samples()[pre.span.start..pre.span.end].to_vec(),
                fs,
            )?;
            let whole = seg.full_span();
            rms_normalize(&seg)?.with_preamble(whole)
        })?;
        let whole = d_rms.full_span();
        let (_, t4) = time(|| peak_frequency(&d_rms, PeakSearch::default()))?;
        let (_, t5) = time(|| kurtosis(&d_rms, whole))?;
        let (_, t6) = time(|| spectral_brightness(&d_rms, whole, fs))?;
        let (_, t7) = time(|| carrier_offset(&baseband, pre.span))?;
        let (v, t_all) = time(|| fx.extract(capture))?;
        let (_, t8) = time(|| model.score(&v))?;
        for (slot, t) in per.iter_mut().zip([t0, t1, t2, t3, t4, t5, t6, t7, t8]) {
            slot.push(t);
        }
        total.push(t_all + t8);
    }
    Ok(BenchReport {
        capture_samples: capture.len(),
        repetitions,
        stages: names
            .iter()
            .zip(per)
            .map(|(n, v)| StageTiming {
                stage: n.to_string(),
                median_ms: median(v),
            })
            .collect(),
        detect_total_ms: median(total),
    })
}
