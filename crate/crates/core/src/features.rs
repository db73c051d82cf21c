//! Per-preamble features and the per-modulation feature vector.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{rms_normalize, Receiver, ReceiverConfig};
use crate::error::{Error, Result};
use crate::signal::{
    fft_magnitude, mean_power, IqBuffer, ModulationKind, ModulationScheme, PulseSignal, Span,
};
use crate::synth::DEFAULT_PREAMBLE;

/// Brightness counts energy above this fraction of the sample rate.
pub const BRIGHTNESS_CUTOFF_FRACTION: f64 = 0.1;
/// Cap applied when the noise window is exactly silent.
pub const SNR_CAP_DB: f64 = 200.0;
/// Default frequency grid spacing of the refined peak search, Hz.
pub const DEFAULT_PEAK_RESOLUTION_HZ: f64 = 0.02;
const MIN_OFFSET_SPAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureName {
    #[serde(rename = "f_peak")]
    FPeak,
    #[serde(rename = "kurtosis")]
    Kurtosis,
    #[serde(rename = "spectral_brightness")]
    SpectralBrightness,
    #[serde(rename = "snr_db")]
    SnrDb,
    #[serde(rename = "fc_offset")]
    FcOffset,
}

impl FeatureName {
    pub const ALL: [FeatureName; 5] = [
        FeatureName::FPeak,
        FeatureName::Kurtosis,
        FeatureName::SpectralBrightness,
        FeatureName::SnrDb,
        FeatureName::FcOffset,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureName::FPeak => "f_peak",
            FeatureName::Kurtosis => "kurtosis",
            FeatureName::SpectralBrightness => "spectral_brightness",
            FeatureName::SnrDb => "snr_db",
            FeatureName::FcOffset => "fc_offset",
        }
    }

    /// Feature order used for `kind`.
    pub fn order_for(kind: ModulationKind) -> &'static [FeatureName] {
        match kind {
            ModulationKind::Fsk => &[
                FeatureName::FPeak,
                FeatureName::Kurtosis,
                FeatureName::SpectralBrightness,
                FeatureName::SnrDb,
            ],
            ModulationKind::Ask => &[
                FeatureName::FPeak,
                FeatureName::Kurtosis,
                FeatureName::FcOffset,
                FeatureName::SpectralBrightness,
                FeatureName::SnrDb,
            ],
        }
    }

    /// Reduced set used for remote keyless entry.
    pub fn rke_subset() -> &'static [FeatureName] {
        &[FeatureName::FPeak, FeatureName::SpectralBrightness]
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<FeatureName>,
    pub values: Vec<f64>,
    pub modulation: ModulationKind,
}

impl FeatureVector {
    pub fn new(
        names: Vec<FeatureName>,
        values: Vec<f64>,
        modulation: ModulationKind,
    ) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some((n, v)) = names.iter().zip(&values).find(|(_, v)| !v.is_finite()) {
            return Err(Error::DegenerateSignal(format!(
                "feature {n} is not finite ({v})"
            )));
        }
        Ok(FeatureVector {
            names,
            values,
            modulation,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: FeatureName) -> Option<f64> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    /// Projection onto `names`, in that order.
    pub fn select(&self, names: &[FeatureName]) -> Result<FeatureVector> {
        let values = names
            .iter()
            .map(|n| {
                self.get(*n)
                    .ok_or_else(|| Error::InvalidInput(format!("feature {n} not present")))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureVector {
            names: names.to_vec(),
            values,
            modulation: self.modulation,
        })
    }
}

/// How finely [`peak_frequency`] resolves the spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PeakSearch {
    /// Plain FFT bins of the next-power-of-two transform.
    Bins,
    /// Same argmax on the grid of an FFT zero-padded to a power of two with
    /// bin width at most `resolution_hz`, searched within one coarse bin of
    /// the coarse peak.
    Zoom { resolution_hz: f64 },
}

impl Default for PeakSearch {
    fn default() -> Self {
        PeakSearch::Zoom {
            resolution_hz: DEFAULT_PEAK_RESOLUTION_HZ,
        }
    }
}

fn preamble_of(d: &PulseSignal) -> Result<Span> {
    d.preamble_span()
        .ok_or_else(|| Error::InvalidInput("pulse has no preamble span".into()))
}

/// Frequency of the largest non-DC spectral component of the preamble.
pub fn peak_frequency(d_rms: &PulseSignal, search: PeakSearch) -> Result<f64> {
    let span = preamble_of(d_rms)?;
    if span.len() < 4 {
        return Err(Error::SpanTooShort(format!(
            "{} samples cannot resolve a non-DC bin",
            span.len()
        )));
    }
    let spec = fft_magnitude(d_rms, span)?;
    let k0 = spec
        .argmax_in(1..spec.magnitudes.len())
        .expect("at least one non-DC bin");
    let resolution_hz = match search {
        PeakSearch::Bins => return Ok(spec.frequency_of(k0)),
        PeakSearch::Zoom { resolution_hz } => resolution_hz,
    };
    if !(resolution_hz > 0.0) {
        return Err(Error::InvalidInput(format!(
            "peak resolution must be positive, got {resolution_hz}"
        )));
    }
    let fs = d_rms.sample_rate_hz();
    let coarse = spec.fft_len as u64;
    let fine = ((fs / resolution_hz).ceil() as u64)
        .next_power_of_two()
        .max(coarse);
    let ratio = fine / coarse;
    let lo = (k0 as u64).saturating_sub(1).saturating_mul(ratio).max(1);
    let hi = ((k0 as u64 + 1) * ratio).min(fine / 2);
    let x = &d_rms.samples()[span.start..span.end];
    let best = zoom_argmax(x, fine, lo, hi);
    Ok(best as f64 * fs / fine as f64)
}

/// `|Σ x[t] e^{-j2π j t / L}|²`. The phasor is re-anchored from exact integer
/// phase every few thousand steps to stop rounding drift.
fn dtft_power(x: &[f64], j: u64, len: u64) -> f64 {
    const ANCHOR: usize = 2048;
    let w = Complex64::from_polar(1.0, -2.0 * PI * j as f64 / len as f64);
    let mut acc = Complex64::new(0.0, 0.0);
    for (c, chunk) in x.chunks(ANCHOR).enumerate() {
        let t0 = (c * ANCHOR) as u64;
        let phase = ((j as u128 * t0 as u128) % len as u128) as f64 / len as f64;
        let mut p = Complex64::from_polar(1.0, -2.0 * PI * phase);
        for &v in chunk {
            acc += p * v;
            p *= w;
        }
    }
    acc.norm_sqr()
}

/// Argmax of [`dtft_power`] over bins `lo..=hi` by coarse-to-fine scanning,
/// ties toward the lower bin.
fn zoom_argmax(x: &[f64], len: u64, lo: u64, hi: u64) -> u64 {
    let width = hi - lo;
    let mut step = if width >= 256 {
        1u64 << (63 - (width / 128).leading_zeros())
    } else {
        1
    };
    let (mut a, mut b) = (lo, hi);
    loop {
        let mut best = (a, f64::MIN);
        let mut j = a;
        while j <= b {
            let p = dtft_power(x, j, len);
            if p > best.1 {
                best = (j, p);
            }
            j += step;
        }
        if step == 1 {
            return best.0;
        }
        a = best.0.saturating_sub(step).max(lo);
        b = (best.0 + step).min(hi);
        step = (step / 16).max(1);
    }
}

/// Signed frequency of the strongest component of the complex baseband
/// over `span`.
pub fn carrier_offset(baseband: &IqBuffer, span: Span) -> Result<f64> {
    span.check(baseband.len())?;
    if span.len() < MIN_OFFSET_SPAN {
        return Err(Error::SpanTooShort(format!(
            "carrier offset needs at least {MIN_OFFSET_SPAN} samples, got {}",
            span.len()
        )));
    }
    let spec = fft_magnitude(baseband, span)?;
    Ok(spec.peak_frequency_hz().expect("non-empty spectrum"))
}

/// `10 log10((P_sig - P_noise) / P_noise)`, floored at `1e-12` in the
/// numerator and capped at [`SNR_CAP_DB`].
pub fn snr_db(d: &PulseSignal, signal_span: Span, noise_span: Span) -> Result<f64> {
    let ps = mean_power(d, signal_span)?;
    let pn = mean_power(d, noise_span)?;
    if pn == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * ((ps - pn).max(1e-12) / pn).log10()).min(SNR_CAP_DB))
}

/// Population kurtosis `E[((x - μ)/σ)^4]` over `span`.
pub fn kurtosis(d_rms: &PulseSignal, span: Span) -> Result<f64> {
    span.check(d_rms.len())?;
    let x = &d_rms.samples()[span.start..span.end];
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let c2 = (v - mean) * (v - mean);
        (m2 + c2, m4 + c2 * c2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(Error::DegenerateSignal(
            "zero variance over the span".into(),
        ));
    }
    Ok(m4 / (m2 * m2))
}

/// `Σ |D[f]|²` over one-sided bins with `0.1 fs <= f <= 0.5 fs`.
///
/// The span is Hann-tapered and rescaled to its untapered energy, so the
/// step between the first and last sample does not leak into the high bins.
pub fn spectral_brightness(d_rms: &PulseSignal, span: Span, fs: f64) -> Result<f64> {
    span.check(d_rms.len())?;
    let x = &d_rms.samples()[span.start..span.end];
    let n = x.len();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
        .collect();
    let gain = (n as f64 / w.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let tapered = PulseSignal::new(
        x.iter().zip(&w).map(|(v, w)| v * w * gain).collect(),
        d_rms.sample_rate_hz(),
    )?;
    let spec = fft_magnitude(&tapered, tapered.full_span())?;
    let cutoff = BRIGHTNESS_CUTOFF_FRACTION * fs;
    let first = (cutoff / spec.bin_width_hz).ceil() as usize;
    Ok(spec.magnitudes.iter().skip(first).map(|m| m * m).sum())
}

/// Receiver plus feature settings; extracts feature vectors from raw
/// captures.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    receiver: Receiver,
    preamble_bits: usize,
    peak_search: PeakSearch,
}

impl FeatureExtractor {
    pub fn new(modulation: ModulationScheme, rx: ReceiverConfig) -> Result<Self> {
        Ok(FeatureExtractor {
            receiver: Receiver::new(modulation, rx)?,
            preamble_bits: DEFAULT_PREAMBLE.len(),
            peak_search: PeakSearch::default(),
        })
    }

    pub fn with_preamble_bits(mut self, bits: usize) -> Self {
        self.preamble_bits = bits;
        self
    }

    pub fn with_peak_search(mut self, search: PeakSearch) -> Self {
        self.peak_search = search;
        self
    }

    pub fn receiver(&self) -> &Receiver {
        &self.receiver
    }

    pub fn modulation(&self) -> ModulationScheme {
        self.receiver.modulation
    }

    pub fn names(&self) -> &'static [FeatureName] {
        FeatureName::order_for(self.receiver.modulation.kind)
    }

    pub fn extract(&self, capture: &IqBuffer) -> Result<FeatureVector> {
        let processed = self.receiver.process(capture, self.preamble_bits)?;
        let pre = &processed.preamble;
        let fs = capture.sample_rate_hz();
        let snr = snr_db(&pre.pulse, pre.span, pre.guard)?;
        let segment = PulseSignal::new(
            pre.pulse.samples()[pre.span.start..pre.span.end].to_vec(),
            fs,
        )?;
        let whole = segment.full_span();
        let d_rms = rms_normalize(&segment)?.with_preamble(whole)?;
        let kind = self.receiver.modulation.kind;
        let values = self
            .names()
            .iter()
            .map(|name| match name {
                FeatureName::FPeak => peak_frequency(&d_rms, self.peak_search),
                FeatureName::Kurtosis => kurtosis(&d_rms, whole),
                FeatureName::SpectralBrightness => spectral_brightness(&d_rms, whole, fs),
                FeatureName::SnrDb => Ok(snr),
                FeatureName::FcOffset => carrier_offset(&processed.baseband, pre.span),
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureVector::new(self.names().to_vec(), values, kind)
    }

    /// Extracts every capture; parallel when the `parallel` feature is on.
    pub fn extract_batch(&self, captures: &[&IqBuffer]) -> Vec<Result<FeatureVector>> {
        crate::par::map_slice(captures, |c| self.extract(c))
    }

    pub fn extract_batch_seq(&self, captures: &[&IqBuffer]) -> Vec<Result<FeatureVector>> {
        crate::par::map_slice_seq(captures, |c| self.extract(c))
    }
}

/// Runs the receiver chain on `capture` and returns the feature
/// vector for `modulation`.
pub fn extract_features(
    capture: &IqBuffer,
    modulation: &ModulationScheme,
    rx: &ReceiverConfig,
) -> Result<FeatureVector> {
    FeatureExtractor::new(*modulation, *rx)?.extract(capture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::synth::{apply_channel, synth_preamble, ChannelProfile, DeviceProfile};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn pulse(x: Vec<f64>, fs: f64) -> PulseSignal {
        let n = x.len();
        PulseSignal::new(x, fs)
            .unwrap()
            .with_preamble(Span::new(0, n))
            .unwrap()
    }

    #[test]
    fn kurtosis_square_and_degenerate() {
        let sq: Vec<f64> = (0..1000)
            .map(|k| if (k / 10) % 2 == 0 { 3.0 } else { -1.0 })
            .collect();
        let p = pulse(sq, 1.0);
        assert!((kurtosis(&p, p.full_span()).unwrap() - 1.0).abs() < 1e-12);
        let c = pulse(vec![2.0; 50], 1.0);
        assert!(matches!(
            kurtosis(&c, c.full_span()),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn snr_examples() {
        let mut x = vec![1.0; 100];
        x.extend(vec![2f64.sqrt(); 100]);
        let p = PulseSignal::new(x, 1.0).unwrap();
        assert!(
            snr_db(&p, Span::new(100, 200), Span::new(0, 100))
                .unwrap()
                .abs()
                < 1e-9
        );
        let mut y = vec![1.0; 100];
        y.extend(vec![101f64.sqrt(); 100]);
        let q = PulseSignal::new(y, 1.0).unwrap();
        assert!((snr_db(&q, Span::new(100, 200), Span::new(0, 100)).unwrap() - 20.0).abs() < 1e-9);
        let mut z = vec![0.0; 100];
        z.extend(vec![1.0; 100]);
        let r = PulseSignal::new(z, 1.0).unwrap();
        assert_eq!(
            snr_db(&r, Span::new(100, 200), Span::new(0, 100)).unwrap(),
            SNR_CAP_DB
        );
    }

    #[test]
    fn brightness_of_slow_signal_is_negligible() {
        let fs = 1e5;
        let x: Vec<f64> = (0..4096)
            .map(|k| {
                (2.0 * PI * 500.0 * k as f64 / fs).sin()
                    * (0.5 - 0.5 * (2.0 * PI * k as f64 / 4096.0).cos())
            })
            .collect();
        let p = pulse(x.clone(), fs);
        let total: f64 = fft_magnitude(&p, p.full_span())
            .unwrap()
            .magnitudes
            .iter()
            .map(|m| m * m)
            .sum();
        assert!(spectral_brightness(&p, p.full_span(), fs).unwrap() <= 1e-6 * total);
    }

    #[test]
    fn brightness_of_white_noise() {
        let mut rng = from_seed(8);
        let x: Vec<f64> = (0..1 << 16).map(|_| rng.sample(StandardNormal)).collect();
        let p = pulse(x, 1e6);
        let total: f64 = fft_magnitude(&p, p.full_span())
            .unwrap()
            .magnitudes
            .iter()
            .map(|m| m * m)
            .sum();
        let ratio = spectral_brightness(&p, p.full_span(), 1e6).unwrap() / total;
        assert!((ratio - 0.8).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn carrier_offset_needs_span() {
        let iq = IqBuffer::zeros(100, 1e6).unwrap();
        assert!(matches!(
            carrier_offset(&iq, Span::new(0, 63)),
            Err(Error::SpanTooShort(_))
        ));
    }

    #[test]
    fn carrier_offset_signed() {
        let fs = 5e6;
        for f in [2000.0, 0.0, -1000.0] {
            let iq = IqBuffer::new(
                (0..40_000)
                    .map(|k| Complex64::from_polar(1.0, 2.0 * PI * f * k as f64 / fs))
                    .collect(),
                fs,
            )
            .unwrap();
            let est = carrier_offset(&iq, Span::new(5000, 35_000)).unwrap();
            assert!((est - f).abs() <= fs / 32768.0, "{f} -> {est}");
        }
    }

    #[test]
    fn zoom_resolves_beyond_bins() {
        let fs = 1000.0;
        let n = 500;
        let f = 100.3;
        let x: Vec<f64> = (0..n)
            .map(|k| 1.0 + (2.0 * PI * f * k as f64 / fs).cos())
            .collect();
        let p = pulse(x, fs);
        let coarse = peak_frequency(&p, PeakSearch::Bins).unwrap();
        let fine = peak_frequency(
            &p,
            PeakSearch::Zoom {
                resolution_hz: 0.01,
            },
        )
        .unwrap();
        assert!((coarse - f).abs() <= fs / 512.0);
        assert!((fine - f).abs() < 0.05, "{fine}");
    }

    #[test]
    fn vector_orders() {
        assert_eq!(FeatureName::order_for(ModulationKind::Fsk).len(), 4);
        assert_eq!(
            FeatureName::order_for(ModulationKind::Ask)[2],
            FeatureName::FcOffset
        );
        let v = FeatureVector::new(
            FeatureName::order_for(ModulationKind::Fsk).to_vec(),
            vec![1.0, 2.0, 3.0, 4.0],
            ModulationKind::Fsk,
        )
        .unwrap();
        let s = v.select(FeatureName::rke_subset()).unwrap();
        assert_eq!(s.values, vec![1.0, 3.0]);
        assert!(FeatureVector::new(
            vec![FeatureName::FPeak],
            vec![f64::NAN],
            ModulationKind::Fsk
        )
        .is_err());
    }

    fn capture(
        kind: ModulationKind,
        device: &DeviceProfile,
        seed: u64,
    ) -> (IqBuffer, ReceiverConfig, ModulationScheme) {
        let m = ModulationScheme::default_for(kind);
        let rx = ReceiverConfig {
            guard_samples: 20_000,
            ..ReceiverConfig::default()
        };
        let mut rng = from_seed(seed);
        let t = synth_preamble(device, &m, &rx, &mut rng).unwrap();
        (
            apply_channel(&t.iq, &ChannelProfile::los(1.0), &mut rng).unwrap(),
            rx,
            m,
        )
    }

    #[test]
    fn extraction_shapes_and_determinism() {
        let dev = DeviceProfile::legit_default();
        let (iq, rx, m) = capture(ModulationKind::Fsk, &dev, 1);
        let a = extract_features(&iq, &m, &rx).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, extract_features(&iq, &m, &rx).unwrap());
        let fp = a.get(FeatureName::FPeak).unwrap();
        assert!((fp - 1500.0).abs() <= 5e6 / 32768.0, "{fp}");

        let (iq, rx, m) = capture(ModulationKind::Ask, &dev, 1);
        let b = extract_features(&iq, &m, &rx).unwrap();
        assert_eq!(b.len(), 5);
        let off = b.get(FeatureName::FcOffset).unwrap();
        assert!((off - 3200.0).abs() <= 5e6 / 32768.0, "{off}");
    }

    #[test]
    fn clock_skew_orders_peak() {
        let mut slow = DeviceProfile::ideal("a");
        slow.tx_snr_floor_db = Some(40.0);
        let mut fast = slow.clone();
        fast.clock_offset_ppm = 200.0;
        let (a, rx, m) = capture(ModulationKind::Fsk, &slow, 3);
        let (b, _, _) = capture(ModulationKind::Fsk, &fast, 3);
        let fa = extract_features(&a, &m, &rx)
            .unwrap()
            .get(FeatureName::FPeak)
            .unwrap();
        let fb = extract_features(&b, &m, &rx)
            .unwrap()
            .get(FeatureName::FPeak)
            .unwrap();
        assert!(fb > fa, "{fa} {fb}");
        assert!(((fb - fa) - 0.3).abs() < 0.1, "{}", fb - fa);
    }
}
