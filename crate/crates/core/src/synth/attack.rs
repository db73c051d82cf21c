//! Adversary signal paths as seen by the vehicle's UHF receiver.
//!
//! Every chain starts from the legitimate fob's transmission and ends with
//! the channel into the vehicle receiver, so the output is directly
//! comparable to a legitimate capture.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    add_awgn, db_to_power, synth_bits, synth_preamble, ChannelProfile, DeviceProfile,
    ReceiverConfig, Transmission,
};
use crate::dsp::{filter_signal, Receiver};
use crate::error::{Error, Result};
use crate::rng::{from_seed, Rng};
use crate::signal::{IqBuffer, ModulationScheme};
use rand::Rng as _;

/// UHF carrier the analog prefilter band is referenced to.
pub const NOMINAL_CARRIER_HZ: f64 = 433.92e6;

/// Analog RF bandpass in front of and behind the attacker's amplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalogPrefilter {
    pub low_cutoff_hz: f64,
    pub high_cutoff_hz: f64,
    #[serde(default = "nominal_carrier")]
    pub carrier_hz: f64,
}

/// Fob-to-amplifier distance of the amplification presets, metres.
pub const DEFAULT_PICKUP_DISTANCE_M: f64 = 5.5;

fn default_pickup() -> f64 {
    DEFAULT_PICKUP_DISTANCE_M
}

fn nominal_carrier() -> f64 {
    NOMINAL_CARRIER_HZ
}

impl AnalogPrefilter {
    /// 400-510 MHz cavity filter.
    pub fn uhf_400_510() -> Self {
        AnalogPrefilter {
            low_cutoff_hz: 400e6,
            high_cutoff_hz: 510e6,
            carrier_hz: NOMINAL_CARRIER_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackChain {
    None,
    /// Only the LF challenge is relayed; the fob answers from afar.
    SingleBandRelay {
        victim_distance_m: f64,
    },
    /// Analog amplifier next to the fob re-radiating toward the vehicle.
    Amplification {
        amp_gain_db: f64,
        amp_noise_figure_db: f64,
        #[serde(default)]
        analog_prefilter: Option<AnalogPrefilter>,
        /// Amplifier-to-vehicle distance; `None` places the amplifier where
        /// its gain exactly offsets the path loss.
        #[serde(default)]
        relay_distance_m: Option<f64>,
        /// Fob-to-amplifier distance. The amplifier's input noise is
        /// referenced to the fob signal arriving over it.
        #[serde(default = "default_pickup")]
        pickup_distance_m: f64,
    },
    /// Bits are decoded near the fob and re-sent by attacker hardware.
    DigitalRelay {
        attacker_device: DeviceProfile,
    },
    /// A recording of the fob replayed through ADC/DAC converters.
    Playback {
        record_sample_rate_hz: f64,
        adc_bits: u32,
        dac_bits: u32,
    },
}

impl AttackChain {
    pub fn single_band_relay(victim_distance_m: f64) -> Self {
        AttackChain::SingleBandRelay { victim_distance_m }
    }

    /// Amplifier with `gain_db`, 6 dB noise figure, placed to offset its gain.
    pub fn amplification(gain_db: f64) -> Self {
        AttackChain::Amplification {
            amp_gain_db: gain_db,
            amp_noise_figure_db: 6.0,
            analog_prefilter: None,
            relay_distance_m: None,
            pickup_distance_m: DEFAULT_PICKUP_DISTANCE_M,
        }
    }

    pub fn playback(bits: u32, record_sample_rate_hz: f64) -> Self {
        AttackChain::Playback {
            record_sample_rate_hz,
            adc_bits: bits,
            dac_bits: bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackChain::None => Ok(()),
            AttackChain::SingleBandRelay { victim_distance_m } => {
                if *victim_distance_m > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidAttack(
                        "victim distance must be positive".into(),
                    ))
                }
            }
            AttackChain::Amplification {
                amp_gain_db,
                amp_noise_figure_db,
                analog_prefilter,
                relay_distance_m,
                pickup_distance_m,
            } => {
                if !(*pickup_distance_m > 0.0) {
                    return Err(Error::InvalidAttack(
                        "pickup distance must be positive".into(),
                    ));
                }
                if !amp_gain_db.is_finite() || !(*amp_noise_figure_db >= 0.0) {
                    return Err(Error::InvalidAttack(
                        "gain must be finite and noise figure non-negative".into(),
                    ));
                }
                if let Some(f) = analog_prefilter {
                    if !(f.low_cutoff_hz < f.high_cutoff_hz) {
                        return Err(Error::InvalidAttack(
                            "prefilter needs low < high cutoff".into(),
                        ));
                    }
                }
                if let Some(d) = relay_distance_m {
                    if !(*d > 0.0) {
                        return Err(Error::InvalidAttack(
                            "relay distance must be positive".into(),
                        ));
                    }
                }
                Ok(())
            }
            AttackChain::DigitalRelay { attacker_device } => attacker_device.validate(),
            AttackChain::Playback {
                record_sample_rate_hz,
                adc_bits,
                dac_bits,
            } => {
                if !(*record_sample_rate_hz > 0.0) {
                    return Err(Error::InvalidAttack(
                        "record sample rate must be positive".into(),
                    ));
                }
                for b in [adc_bits, dac_bits] {
                    if !(2..=24).contains(b) {
                        return Err(Error::InvalidAttack(format!(
                            "converter resolution {b} bits outside [2, 24]"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Everything about the legitimate link an attack chain needs.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub device: DeviceProfile,
    pub modulation: ModulationScheme,
    pub rx: ReceiverConfig,
    /// Final hop into the vehicle receiver.
    pub channel: ChannelProfile,
}

impl AttackContext {
    /// Fob received at the reference distance by attacker gear with the
    /// same noise floor as the vehicle.
    fn pickup(&self, tx: &Transmission, rng: &mut Rng) -> Result<IqBuffer> {
        let near = ChannelProfile {
            multipath_taps: Vec::new(),
            ..self.channel.at_distance(self.channel.reference_distance_m)
        };
        super::apply_channel(&tx.iq, &near, rng)
    }
}

/// Simulates `chain` end to end and returns the vehicle-side capture.
pub fn apply_attack_chain(
    ctx: &AttackContext,
    chain: &AttackChain,
    rng: &mut Rng,
) -> Result<IqBuffer> {
    chain.validate()?;
    // Separate streams for the fob, the attacker's gear and the final hop:
    // the same seed under two chains gives the same transmission and the
    // same receiver noise.
    let mut fob = from_seed(rng.random());
    let mut gear = from_seed(rng.random());
    let mut link = from_seed(rng.random());
    let tx = synth_preamble(&ctx.device, &ctx.modulation, &ctx.rx, &mut fob)?;
    match chain {
        AttackChain::None => super::apply_channel(&tx.iq, &ctx.channel, &mut link),
        AttackChain::SingleBandRelay { victim_distance_m } => {
            let ch = ctx.channel.at_distance(*victim_distance_m);
            super::apply_channel(&tx.iq, &ch, &mut link)
        }
        AttackChain::Amplification {
            amp_gain_db,
            amp_noise_figure_db,
            analog_prefilter,
            relay_distance_m,
            pickup_distance_m,
        } => {
            // The amplifier is keyed by the relayed exchange: it only adds
            // its input noise while the fob is transmitting. That noise
            // sits against the fob signal as weakened over the pickup hop.
            let mut samples = tx.iq.samples().to_vec();
            if let Some(nf) = ctx.channel.noise_floor_dbfs {
                let pickup_loss = super::path_loss_db(
                    *pickup_distance_m,
                    ctx.channel.reference_distance_m,
                    ctx.channel.path_loss_exponent,
                );
                let keyed = &mut samples[tx.onset..tx.onset + tx.keyed_len];
                add_awgn(
                    keyed,
                    db_to_power(nf + amp_noise_figure_db + pickup_loss),
                    &mut gear,
                );
            }
            let mut sig = tx.iq.with_samples(samples);
            if let Some(pf) = analog_prefilter {
                sig = analog_band_limit(&sig, pf)?;
            }
            let sig = sig.scaled(10f64.powf(amp_gain_db / 20.0));
            let distance = relay_distance_m
                .unwrap_or_else(|| gain_offset_distance(&ctx.channel, *amp_gain_db));
            super::apply_channel(&sig, &ctx.channel.at_distance(distance), &mut link)
        }
        AttackChain::DigitalRelay { attacker_device } => {
            let heard = ctx.pickup(&tx, &mut gear)?;
            let bits = decode_bits(&heard, &ctx.modulation, &ctx.rx, ctx.device.bits()?.len())?;
            let resent = synth_bits(attacker_device, &bits, &ctx.modulation, &ctx.rx, &mut gear)?;
            super::apply_channel(&resent.iq, &ctx.channel, &mut link)
        }
        AttackChain::Playback {
            record_sample_rate_hz,
            adc_bits,
            dac_bits,
        } => {
            let heard = ctx.pickup(&tx, &mut gear)?;
            let fs = ctx.rx.sample_rate_hz;
            let recorded = quantize(
                &resample(heard.samples(), fs, *record_sample_rate_hz),
                *adc_bits,
            );
            let mut replay = quantize(&resample(&recorded, *record_sample_rate_hz, fs), *dac_bits);
            replay.resize(heard.len(), Complex64::new(0.0, 0.0));
            let peak = replay.iter().map(|s| s.norm()).fold(0.0, f64::max);
            if peak > 0.0 {
                replay.iter_mut().for_each(|s| *s /= peak);
            }
            super::apply_channel(&heard.with_samples(replay), &ctx.channel, &mut link)
        }
    }
}

/// Distance at which the path loss equals `gain_db`.
pub fn gain_offset_distance(channel: &ChannelProfile, gain_db: f64) -> f64 {
    channel.reference_distance_m
        * 10f64.powf(gain_db.max(0.0) / (10.0 * channel.path_loss_exponent))
}

/// Baseband view of an RF bandpass: whatever of `[low, high] - f_c` falls
/// inside the sampled band. Filters wider than the capture are pass-through.
fn analog_band_limit(sig: &IqBuffer, pf: &AnalogPrefilter) -> Result<IqBuffer> {
    let fs = sig.sample_rate_hz();
    let lo = (pf.low_cutoff_hz - pf.carrier_hz).max(-fs / 2.0);
    let hi = (pf.high_cutoff_hz - pf.carrier_hz).min(fs / 2.0);
    if lo <= -fs / 2.0 && hi >= fs / 2.0 {
        return Ok(sig.clone());
    }
    if lo >= hi {
        return Ok(sig.with_samples(vec![Complex64::new(0.0, 0.0); sig.len()]));
    }
    // shift the band to be centered on DC, lowpass, shift back
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let lp = crate::dsp::design_fir(
        crate::dsp::FilterKind::Lowpass,
        &[half.min(0.49 * fs)],
        (0.05 * fs).max(1.0),
        fs,
    )?;
    let down = crate::dsp::shift_frequency(sig, center);
    Ok(crate::dsp::shift_frequency(
        &filter_signal(&down, &lp),
        -center,
    ))
}

/// Linear-interpolation resampler.
pub(crate) fn resample(x: &[Complex64], from_hz: f64, to_hz: f64) -> Vec<Complex64> {
    if (from_hz - to_hz).abs() <= 1e-9 * from_hz || x.is_empty() {
        return x.to_vec();
    }
    let out_len = ((x.len() as f64) * to_hz / from_hz).round().max(1.0) as usize;
    let step = from_hz / to_hz;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * step;
            let i = t.floor() as usize;
            if i + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let frac = t - i as f64;
            x[i] * (1.0 - frac) + x[i + 1] * frac
        })
        .collect()
}

/// Uniform mid-rise quantizer on I and Q with full scale `±max|x|`.
pub(crate) fn quantize(x: &[Complex64], bits: u32) -> Vec<Complex64> {
    let full = x.iter().map(|s| s.norm()).fold(0.0, f64::max);
    if full == 0.0 {
        return x.to_vec();
    }
    let levels = (1u64 << bits) as f64;
    let step = 2.0 * full / levels;
    let top = full - step / 2.0;
    let q = |v: f64| (step * ((v / step).floor() + 0.5)).clamp(-top, top);
    x.iter().map(|s| Complex64::new(q(s.re), q(s.im))).collect()
}

/// Slices the preamble bits out of a capture the way a relay front end
/// would: locate the burst, sample the envelope mid-bit, threshold halfway
/// between the extremes.
pub fn decode_bits(
    capture: &IqBuffer,
    modulation: &ModulationScheme,
    rx: &ReceiverConfig,
    nbits: usize,
) -> Result<Vec<bool>> {
    let receiver =
        Receiver::new(*modulation, *rx).map_err(|e| Error::RelayDecodeError(e.to_string()))?;
    let processed = receiver
        .process(capture, nbits)
        .map_err(|e| Error::RelayDecodeError(e.to_string()))?;
    let spb = receiver.samples_per_bit();
    let pulse = processed.preamble.pulse.samples();
    let start = processed.preamble.span.start as f64;
    let levels: Vec<f64> = (0..nbits)
        .map(|i| pulse[(start + (i as f64 + 0.5) * spb) as usize])
        .collect();
    let hi = levels.iter().copied().fold(f64::MIN, f64::max);
    let lo = levels.iter().copied().fold(f64::MAX, f64::min);
    if !(hi > 0.0) || hi - lo < 0.3 * hi {
        return Err(Error::RelayDecodeError(format!(
            "eye closed: mid-bit levels span {lo:.3e}..{hi:.3e}"
        )));
    }
    let mid = (hi + lo) / 2.0;
    Ok(levels.into_iter().map(|v| v > mid).collect())
}
