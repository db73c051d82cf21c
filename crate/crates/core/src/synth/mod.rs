//! Synthetic key-fob transmissions, propagation and attack chains.
//!
//! Amplitudes are referenced to a unit-amplitude transmission received at
//! the reference distance, so channel noise floors read as dB relative to
//! that signal power (dBFS).

mod attack;
mod channel;
mod dataset;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{IqBuffer, ModulationKind, ModulationScheme};

pub use crate::dsp::ReceiverConfig;
pub use attack::{
    apply_attack_chain, decode_bits, gain_offset_distance, AnalogPrefilter, AttackChain,
    AttackContext, DEFAULT_PICKUP_DISTANCE_M, NOMINAL_CARRIER_HZ,
};
pub use channel::{apply_channel, path_loss_db, ChannelProfile, MultipathTap};
pub use dataset::{
    generate_dataset, AttackScenario, Counts, Dataset, DeviceDrift, Label, LabeledCapture,
    ScenarioConfig, LEGIT_PARTITION,
};

/// Default preamble: sixteen alternating bits starting with a one.
pub const DEFAULT_PREAMBLE: &str = "1010101010101010";

/// Transmitter imperfections of one key fob (or attacker radio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: String,
    /// Bit-clock deviation, parts per million.
    pub clock_offset_ppm: f64,
    /// `f_c' - f_c`, Hz.
    pub carrier_offset_hz: f64,
    #[serde(default)]
    pub amplitude_rise_time_s: f64,
    /// SNR of the transmitter's own white noise while keyed, dB. `None`
    /// means a noiseless transmitter.
    #[serde(default)]
    pub tx_snr_floor_db: Option<f64>,
    #[serde(default = "default_preamble")]
    pub preamble_bits: String,
}

fn default_preamble() -> String {
    DEFAULT_PREAMBLE.to_string()
}

impl DeviceProfile {
    /// The legitimate fob used throughout the default scenarios.
    pub fn legit_default() -> Self {
        DeviceProfile {
            id: "fob-legit".into(),
            clock_offset_ppm: 20.0,
            carrier_offset_hz: 3_200.0,
            amplitude_rise_time_s: 20e-6,
            tx_snr_floor_db: Some(45.0),
            preamble_bits: default_preamble(),
        }
    }

    /// An attacker radio that differs from `reference` by `ppm` of bit clock
    /// and `carrier_hz` of carrier offset, otherwise identical.
    pub fn attacker_near(reference: &DeviceProfile, ppm: f64, carrier_hz: f64) -> Self {
        DeviceProfile {
            id: "attacker-sdr".into(),
            clock_offset_ppm: reference.clock_offset_ppm + ppm,
            carrier_offset_hz: reference.carrier_offset_hz + carrier_hz,
            ..reference.clone()
        }
    }

    pub fn ideal(id: &str) -> Self {
        DeviceProfile {
            id: id.into(),
            clock_offset_ppm: 0.0,
            carrier_offset_hz: 0.0,
            amplitude_rise_time_s: 0.0,
            tx_snr_floor_db: None,
            preamble_bits: default_preamble(),
        }
    }

    pub fn bits(&self) -> Result<Vec<bool>> {
        if self.preamble_bits.is_empty() {
            return Err(Error::InvalidProfile(
                "preamble_bits must be non-empty".into(),
            ));
        }
        self.preamble_bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidProfile(format!(
                    "preamble bit '{other}' is not 0 or 1"
                ))),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_offset_ppm.abs() < 10_000.0) {
            return Err(Error::InvalidProfile(format!(
                "|clock_offset_ppm| must be < 10000, got {}",
                self.clock_offset_ppm
            )));
        }
        if !(self.amplitude_rise_time_s >= 0.0 && self.amplitude_rise_time_s.is_finite()) {
            return Err(Error::InvalidProfile(
                "amplitude_rise_time_s must be non-negative".into(),
            ));
        }
        if !self.carrier_offset_hz.is_finite() {
            return Err(Error::InvalidProfile(
                "carrier_offset_hz must be finite".into(),
            ));
        }
        self.bits().map(|_| ())
    }

    /// Bit rate this device actually keys at.
    pub fn effective_bit_rate(&self, modulation: &ModulationScheme) -> f64 {
        modulation.bit_rate_bps * (1.0 + self.clock_offset_ppm * 1e-6)
    }
}

/// A synthesized transmission with its ground-truth timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub iq: IqBuffer,
    /// First preamble sample.
    pub onset: usize,
    /// Preamble length at the device's own bit rate.
    pub preamble_len: usize,
    /// Samples during which the transmitter is keyed (preamble plus ramp-down).
    pub keyed_len: usize,
}

/// Complex white Gaussian noise of total power `power`.
pub(crate) fn add_awgn(samples: &mut [Complex64], power: f64, rng: &mut Rng) {
    if power <= 0.0 {
        return;
    }
    let sigma = (power / 2.0).sqrt();
    for s in samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sigma * re, sigma * im);
    }
}

pub(crate) fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Renders `bits` with `device`'s imperfections.
pub(crate) fn synth_bits(
    device: &DeviceProfile,
    bits: &[bool],
    modulation: &ModulationScheme,
    rx: &ReceiverConfig,
    rng: &mut Rng,
) -> Result<Transmission> {
    modulation.validate()?;
    device.validate()?;
    if bits.is_empty() {
        return Err(Error::InvalidProfile("no bits to transmit".into()));
    }
    let rate = device.effective_bit_rate(modulation);
    if !(rate > 0.0) {
        return Err(Error::InvalidProfile(format!(
            "effective bit rate {rate} is not positive"
        )));
    }
    let fs = rx.sample_rate_hz;
    let spb = fs / rate;
    let preamble_len = (bits.len() as f64 * spb).round() as usize;
    let nominal_spb = modulation.samples_per_bit(fs);
    let tail = (2.0 * nominal_spb).ceil() as usize;
    let onset = rx.guard_samples;
    let total = onset + preamble_len + tail;

    let rise = device.amplitude_rise_time_s * fs;
    let slew = if rise > 0.0 {
        1.0 / rise
    } else {
        f64::INFINITY
    };
    let mut samples = vec![Complex64::new(0.0, 0.0); total];
    let mut amp = 0.0f64;
    let mut phase = 0.0f64;
    let mut keyed_end = onset;
    for (k, out) in samples.iter_mut().enumerate().skip(onset) {
        let t = k - onset;
        let bit = if t < preamble_len {
            Some(bits[((t as f64 / spb) as usize).min(bits.len() - 1)])
        } else {
            None
        };
        let (target, freq) = match (modulation.kind, bit) {
            (ModulationKind::Fsk, Some(b)) => {
                let dev = if b {
                    modulation.freq_deviation_hz
                } else {
                    -modulation.freq_deviation_hz
                };
                (1.0, dev + device.carrier_offset_hz)
            }
            (ModulationKind::Ask, Some(b)) => (if b { 1.0 } else { 0.0 }, device.carrier_offset_hz),
            (_, None) => (0.0, device.carrier_offset_hz),
        };
        amp = if target > amp {
            (amp + slew).min(target)
        } else {
            (amp - slew).max(target)
        };
        *out = Complex64::from_polar(amp, phase);
        phase = (phase + 2.0 * PI * freq / fs) % (2.0 * PI);
        if amp > 0.0 || bit.is_some() {
            keyed_end = k + 1;
        }
    }
    let keyed_len = keyed_end - onset;
    if let Some(snr) = device.tx_snr_floor_db {
        add_awgn(&mut samples[onset..keyed_end], 1.0 / db_to_power(snr), rng);
    }
    Ok(Transmission {
        iq: IqBuffer::new(samples, fs)?,
        onset,
        preamble_len,
        keyed_len,
    })
}

/// Complex-baseband preamble from `device`: `guard_samples` of silence, then
/// the keyed preamble and a short quiet tail.
pub fn synth_preamble(
    device: &DeviceProfile,
    modulation: &ModulationScheme,
    rx: &ReceiverConfig,
    rng: &mut Rng,
) -> Result<Transmission> {
    let bits = device.bits()?;
    synth_bits(device, &bits, modulation, rx, rng)
}
