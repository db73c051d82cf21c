//! Receiver-side preprocessing: LO mixing, FIR filtering, envelope
//! demodulation, RMS normalization and preamble segmentation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    forward_plan, inverse_plan, mean_power, IqBuffer, ModulationKind, ModulationScheme,
    PulseSignal, Span,
};

/// Sliding one-bit RMS must exceed this multiple of the guard RMS.
pub const ONSET_RMS_FACTOR: f64 = 4.0;

/// FSK passband `[low, high]` and transition width, Hz.
pub const FSK_BANDPASS_HZ: (f64, f64) = (15_000.0, 45_000.0);
pub const FSK_TRANSITION_HZ: f64 = 10_000.0;
/// ASK lowpass cutoff and transition width, Hz.
pub const ASK_LOWPASS_HZ: f64 = 20_000.0;
pub const ASK_TRANSITION_HZ: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub sample_rate_hz: f64,
    /// Receiver LO error `f_c'' - f_c`, Hz.
    #[serde(default)]
    pub receiver_lo_offset_hz: f64,
    /// Quiet samples the receiver expects ahead of the preamble.
    pub guard_samples: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            sample_rate_hz: 5e6,
            receiver_lo_offset_hz: 0.0,
            guard_samples: 50_000,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self, modulation: &ModulationScheme) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let highest = match modulation.kind {
            ModulationKind::Fsk => FSK_BANDPASS_HZ.1,
            ModulationKind::Ask => ASK_LOWPASS_HZ,
        };
        if self.sample_rate_hz < 10.0 * highest {
            return Err(Error::Config(format!(
                "sample rate {} Hz is below 10x the highest baseband frequency {highest} Hz",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// Multiplies sample `k` by `exp(-j 2π delta k / fs)`.
pub fn shift_frequency(sig: &IqBuffer, delta_hz: f64) -> IqBuffer {
    if delta_hz == 0.0 {
        return sig.clone();
    }
    let step = delta_hz / sig.sample_rate_hz();
    let out = sig
        .samples()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let cycles = (step * k as f64).fract();
            s * Complex64::from_polar(1.0, -2.0 * PI * cycles)
        })
        .collect();
    sig.with_samples(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// Linear-phase FIR designed by the windowed-sinc method.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<Complex64>,
    kind: FilterKind,
    cutoffs_hz: Vec<f64>,
    transition_hz: f64,
    sample_rate_hz: f64,
}

fn hamming(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc design.
///
/// `cutoffs_hz` is `[fc]` for a lowpass and `[low, high]` for a bandpass.
/// The bandpass is complex and one-sided: it passes `[low, high]` and
/// rejects the mirrored negative band. The tap count is
/// `ceil(3.3 fs / transition)` rounded up to odd.
pub fn design_fir(
    kind: FilterKind,
    cutoffs_hz: &[f64],
    transition_hz: f64,
    sample_rate_hz: f64,
) -> Result<FirFilter> {
    let nyquist = sample_rate_hz / 2.0;
    if !(transition_hz > 0.0) || !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidDesign(
            "transition width and sample rate must be positive".into(),
        ));
    }
    for &c in cutoffs_hz {
        if !(c > 0.0) {
            return Err(Error::InvalidDesign(format!(
                "cutoff {c} Hz must be positive"
            )));
        }
        if c >= nyquist {
            return Err(Error::InvalidDesign(format!(
                "cutoff {c} Hz is at or above Nyquist ({nyquist} Hz)"
            )));
        }
    }
    let (proto_cutoff, center) = match (kind, cutoffs_hz) {
        (FilterKind::Lowpass, [fc]) => (*fc, 0.0),
        (FilterKind::Bandpass, [lo, hi]) if lo < hi => ((hi - lo) / 2.0, (hi + lo) / 2.0),
        (FilterKind::Bandpass, [_, _]) => {
            return Err(Error::InvalidDesign("bandpass needs low < high".into()))
        }
        _ => {
            return Err(Error::InvalidDesign(format!(
                "{kind:?} takes {} cutoff(s)",
                if kind == FilterKind::Lowpass { 1 } else { 2 }
            )))
        }
    };
    let mut len = (3.3 * sample_rate_hz / transition_hz).ceil() as usize;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let mid = (len - 1) as f64 / 2.0;
    let norm_cut = 2.0 * proto_cutoff / sample_rate_hz;
    let mut proto: Vec<f64> = (0..len)
        .map(|n| norm_cut * sinc(norm_cut * (n as f64 - mid)) * hamming(n, len))
        .collect();
    for i in 0..len / 2 {
        proto[len - 1 - i] = proto[i];
    }
    let dc: f64 = proto.iter().sum();
    proto.iter_mut().for_each(|h| *h /= dc);
    let taps = proto
        .iter()
        .enumerate()
        .map(|(n, &h)| {
            if center == 0.0 {
                Complex64::new(h, 0.0)
            } else {
                h * Complex64::from_polar(
                    1.0,
                    2.0 * PI * center * (n as f64 - mid) / sample_rate_hz,
                )
            }
        })
        .collect();
    Ok(FirFilter {
        taps,
        kind,
        cutoffs_hz: cutoffs_hz.to_vec(),
        transition_hz,
        sample_rate_hz,
    })
}

impl FirFilter {
    /// Receiver filter for `modulation`: one-sided bandpass for FSK, lowpass
    /// for ASK.
    pub fn for_modulation(modulation: &ModulationScheme, sample_rate_hz: f64) -> Result<Self> {
        match modulation.kind {
            ModulationKind::Fsk => design_fir(
                FilterKind::Bandpass,
                &[FSK_BANDPASS_HZ.0, FSK_BANDPASS_HZ.1],
                FSK_TRANSITION_HZ,
                sample_rate_hz,
            ),
            ModulationKind::Ask => design_fir(
                FilterKind::Lowpass,
                &[ASK_LOWPASS_HZ],
                ASK_TRANSITION_HZ,
                sample_rate_hz,
            ),
        }
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn cutoffs_hz(&self) -> &[f64] {
        &self.cutoffs_hz
    }

    pub fn transition_hz(&self) -> f64 {
        self.transition_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Response at `freq_hz` referenced to the filter center, so a flat
    /// passband reads as real-valued gain.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let mid = self.group_delay() as f64;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, h)| {
                h * Complex64::from_polar(
                    1.0,
                    -2.0 * PI * freq_hz * (n as f64 - mid) / self.sample_rate_hz,
                )
            })
            .sum()
    }

    /// `Σ|h|²`: output noise power per unit input white-noise power.
    pub fn noise_gain(&self) -> f64 {
        self.taps.iter().map(|h| h.norm_sqr()).sum()
    }
}

/// Linear convolution with the group delay removed: output sample `i`
/// lines up with input sample `i`, and the output has the input's length.
pub fn filter_signal(sig: &IqBuffer, filter: &FirFilter) -> IqBuffer {
    let x = sig.samples();
    if x.is_empty() {
        return sig.clone();
    }
    let h = filter.taps();
    let delay = filter.group_delay();
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let zero = Complex64::new(0.0, 0.0);
    let mut xb: Vec<Complex64> = x.to_vec();
    xb.resize(n, zero);
    let mut hb: Vec<Complex64> = h.to_vec();
    hb.resize(n, zero);
    let fwd = forward_plan(n);
    fwd.process(&mut xb);
    fwd.process(&mut hb);
    for (a, b) in xb.iter_mut().zip(&hb) {
        *a *= b;
    }
    inverse_plan(n).process(&mut xb);
    let scale = 1.0 / n as f64;
    let out = xb[delay..delay + x.len()]
        .iter()
        .map(|c| c * scale)
        .collect();
    sig.with_samples(out)
}

/// Envelope detector: `|s[t]|` of the filtered baseband.
///
/// For FSK the one-sided bandpass keeps only the mark tone, so the
/// envelope is high on 1-bits and low on 0-bits. For ASK it is the on/off
/// amplitude directly.
pub fn demodulate(sig: &IqBuffer, _modulation: &ModulationScheme) -> PulseSignal {
    let env = sig.samples().iter().map(|s| s.norm()).collect();
    PulseSignal::new(env, sig.sample_rate_hz()).expect("sample rate already validated")
}

/// Scales `d` to unit mean-square.
pub fn rms_normalize(d: &PulseSignal) -> Result<PulseSignal> {
    if d.is_empty() {
        return Err(Error::ZeroSignal);
    }
    let ms = mean_power(d, d.full_span())?;
    if ms == 0.0 || !ms.is_finite() {
        return Err(Error::ZeroSignal);
    }
    let inv = 1.0 / ms.sqrt();
    Ok(d.map_samples(|x| x * inv))
}

/// Located preamble plus the quiet window used as noise reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Preamble {
    /// The input pulse with `preamble_span` set.
    pub pulse: PulseSignal,
    pub span: Span,
    pub guard: Span,
}

/// Noise window inside the receiver's guard interval, skipping filter edge
/// transients at the front and one bit at the back.
pub fn guard_window(rx: &ReceiverConfig, modulation: &ModulationScheme, filter_len: usize) -> Span {
    let spb = modulation.samples_per_bit(rx.sample_rate_hz).ceil() as usize;
    let start = filter_len / 2;
    let end = rx.guard_samples.saturating_sub(spb);
    Span::new(start, end.max(start))
}

/// Finds the preamble onset in `d`.
///
/// A one-bit sliding window gates the search: the first window whose RMS
/// exceeds [`ONSET_RMS_FACTOR`] times the guard RMS marks a burst. The
/// onset is then placed at the first sample whose lightly smoothed
/// envelope reaches half the burst level seen over the next three bits,
/// which keeps the estimate independent of SNR. The span covers
/// `expected_bits` nominal bit periods.
pub fn detect_preamble(
    d: &PulseSignal,
    modulation: &ModulationScheme,
    expected_bits: usize,
    guard: Span,
) -> Result<Preamble> {
    if expected_bits == 0 {
        return Err(Error::InvalidInput("expected_bits must be positive".into()));
    }
    if guard.is_empty() || guard.end > d.len() {
        return Err(Error::PreambleNotFound(
            "no quiet guard window ahead of the signal".into(),
        ));
    }
    let spb = modulation.samples_per_bit(d.sample_rate_hz());
    let win = (spb.round() as usize).max(1);
    let span_len = (expected_bits as f64 * spb).round() as usize;
    let x = d.samples();
    if x.len() < guard.end + span_len {
        return Err(Error::PreambleNotFound(format!(
            "signal of {} samples is shorter than the expected preamble",
            x.len()
        )));
    }
    let noise = mean_power(d, guard)?;
    let threshold = ONSET_RMS_FACTOR * ONSET_RMS_FACTOR * noise;

    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
        prefix.push(acc);
    }
    let gate = (guard.end..=x.len().saturating_sub(win))
        .find(|&w| (prefix[w + win] - prefix[w]) / win as f64 > threshold)
        .ok_or_else(|| Error::PreambleNotFound("no window rises above the guard noise".into()))?;

    let smooth = (win / 16).max(1);
    let region_end = (gate + 3 * win + win).min(x.len());
    let search_start = gate.saturating_sub(win).max(guard.end);
    let smoothed: Vec<f64> = (search_start..region_end)
        .map(|i| {
            let lo = i.saturating_sub(smooth / 2).max(search_start);
            let hi = (i + smooth / 2 + 1).min(region_end);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let level = smoothed.iter().copied().fold(0.0, f64::max);
    let onset = search_start + smoothed.iter().position(|&v| v >= 0.5 * level).unwrap_or(0);

    let span = Span::new(onset, onset + span_len);
    if span.end > x.len() {
        return Err(Error::PreambleNotFound(
            "preamble runs past the end of the capture".into(),
        ));
    }
    Ok(Preamble {
        pulse: d.clone().with_preamble(span)?,
        span,
        guard,
    })
}

/// Designed receiver chain for one modulation and receiver configuration.
#[derive(Debug, Clone)]
pub struct Receiver {
    pub modulation: ModulationScheme,
    pub rx: ReceiverConfig,
    pub filter: FirFilter,
}

/// Intermediate products of [`Receiver::process`].
#[derive(Debug, Clone)]
pub struct Processed {
    /// Mixed and filtered baseband.
    pub baseband: IqBuffer,
    pub preamble: Preamble,
}

impl Receiver {
    pub fn new(modulation: ModulationScheme, rx: ReceiverConfig) -> Result<Self> {
        modulation.validate()?;
        rx.validate(&modulation)?;
        let filter = FirFilter::for_modulation(&modulation, rx.sample_rate_hz)?;
        Ok(Receiver {
            modulation,
            rx,
            filter,
        })
    }

    pub fn guard_window(&self) -> Span {
        guard_window(&self.rx, &self.modulation, self.filter.taps().len())
    }

    pub fn samples_per_bit(&self) -> f64 {
        self.modulation.samples_per_bit(self.rx.sample_rate_hz)
    }

    /// Mix, filter and demodulate.
    pub fn front_end(&self, capture: &IqBuffer) -> Result<(IqBuffer, PulseSignal)> {
        if capture.is_empty() {
            return Err(Error::InvalidInput("empty capture".into()));
        }
        if (capture.sample_rate_hz() - self.rx.sample_rate_hz).abs() > 1e-6 * self.rx.sample_rate_hz
        {
            return Err(Error::InvalidInput(format!(
                "capture sample rate {} Hz does not match receiver {} Hz",
                capture.sample_rate_hz(),
                self.rx.sample_rate_hz
            )));
        }
        let mixed = shift_frequency(capture, self.rx.receiver_lo_offset_hz);
        let baseband = filter_signal(&mixed, &self.filter);
        let pulse = demodulate(&baseband, &self.modulation);
        Ok((baseband, pulse))
    }

    pub fn process(&self, capture: &IqBuffer, expected_bits: usize) -> Result<Processed> {
        let (baseband, pulse) = self.front_end(capture)?;
        let preamble =
            detect_preamble(&pulse, &self.modulation, expected_bits, self.guard_window())?;
        Ok(Processed { baseband, preamble })
    }
}
