//! Named attack and perturbation scenarios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ModulationScheme;
use crate::synth::{
    AnalogPrefilter, AttackChain, AttackScenario, ChannelProfile, DeviceDrift, DeviceProfile,
};

/// Sample rate of the digital-relay attacker's SDR. It keys bits on whole
/// samples, so at 3 kbps a bit lasts 667 samples instead of 666.67.
pub const DIGITAL_RELAY_SDR_RATE_HZ: f64 = 2e6;
/// Carrier offset of the attacker radio relative to the legitimate fob.
pub const DIGITAL_RELAY_CARRIER_HZ: f64 = 1_000.0;

/// Bit-clock error, in ppm, of a modulator that rounds the bit period to
/// whole samples at `sample_rate_hz`.
pub fn integer_bit_clock_ppm(bit_rate_bps: f64, sample_rate_hz: f64) -> f64 {
    let samples_per_bit = (sample_rate_hz / bit_rate_bps).round().max(1.0);
    (sample_rate_hz / samples_per_bit / bit_rate_bps - 1.0) * 1e6
}

/// The digital-relay attacker: an SDR with integer samples per bit, a
/// carrier [`DIGITAL_RELAY_CARRIER_HZ`] away from the fob's, otherwise the
/// fob's transmitter model.
pub fn digital_relay_attacker(
    legit: &DeviceProfile,
    modulation: &ModulationScheme,
) -> DeviceProfile {
    DeviceProfile {
        id: "attacker-sdr".into(),
        clock_offset_ppm: integer_bit_clock_ppm(modulation.bit_rate_bps, DIGITAL_RELAY_SDR_RATE_HZ),
        carrier_offset_hz: legit.carrier_offset_hz + DIGITAL_RELAY_CARRIER_HZ,
        ..legit.clone()
    }
}

/// Record rate of the playback presets, and of the high-rate variant.
pub const PLAYBACK_RATE_HZ: f64 = 2e6;
pub const PLAYBACK_HIGHRATE_HZ: f64 = 20e6;

/// Spread of NLoS link distances. The exponent-3 law stretches it, so it is
/// kept narrower than the line-of-sight spread.
pub const NLOS_DISTANCE_JITTER_M: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "single_band_relay_5m")]
    SingleBandRelay5m,
    #[serde(rename = "single_band_relay_10m")]
    SingleBandRelay10m,
    #[serde(rename = "single_band_relay_15m")]
    SingleBandRelay15m,
    #[serde(rename = "amplification_30dB")]
    Amplification30dB,
    #[serde(rename = "amplification_60dB")]
    Amplification60dB,
    #[serde(rename = "amplification_64dB")]
    Amplification64dB,
    #[serde(rename = "amplification_prefiltered")]
    AmplificationPrefiltered,
    #[serde(rename = "digital_relay")]
    DigitalRelay,
    #[serde(rename = "playback_8bit")]
    Playback8bit,
    #[serde(rename = "playback_16bit")]
    Playback16bit,
    #[serde(rename = "playback_highrate")]
    PlaybackHighrate,
    #[serde(rename = "nlos")]
    Nlos,
    #[serde(rename = "temperature_drift")]
    TemperatureDrift,
    #[serde(rename = "battery_drift")]
    BatteryDrift,
}

impl Preset {
    pub const ALL: [Preset; 14] = [
        Preset::SingleBandRelay5m,
        Preset::SingleBandRelay10m,
        Preset::SingleBandRelay15m,
        Preset::Amplification30dB,
        Preset::Amplification60dB,
        Preset::Amplification64dB,
        Preset::AmplificationPrefiltered,
        Preset::DigitalRelay,
        Preset::Playback8bit,
        Preset::Playback16bit,
        Preset::PlaybackHighrate,
        Preset::Nlos,
        Preset::TemperatureDrift,
        Preset::BatteryDrift,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::SingleBandRelay5m => "single_band_relay_5m",
            Preset::SingleBandRelay10m => "single_band_relay_10m",
            Preset::SingleBandRelay15m => "single_band_relay_15m",
            Preset::Amplification30dB => "amplification_30dB",
            Preset::Amplification60dB => "amplification_60dB",
            Preset::Amplification64dB => "amplification_64dB",
            Preset::AmplificationPrefiltered => "amplification_prefiltered",
            Preset::DigitalRelay => "digital_relay",
            Preset::Playback8bit => "playback_8bit",
            Preset::Playback16bit => "playback_16bit",
            Preset::PlaybackHighrate => "playback_highrate",
            Preset::Nlos => "nlos",
            Preset::TemperatureDrift => "temperature_drift",
            Preset::BatteryDrift => "battery_drift",
        }
    }

    /// Whether the test partition is attack traffic. Perturbation presets
    /// test legitimate captures under changed conditions.
    pub fn is_attack(&self) -> bool {
        !matches!(
            self,
            Preset::Nlos | Preset::TemperatureDrift | Preset::BatteryDrift
        )
    }

    /// Amplification presets place the attacker so its SNR matches the
    /// legitimate captures.
    pub fn snr_matched(&self) -> bool {
        matches!(
            self,
            Preset::Amplification30dB
                | Preset::Amplification60dB
                | Preset::Amplification64dB
                | Preset::AmplificationPrefiltered
        )
    }

    /// Test partition of `count` captures against `legit`.
    pub fn scenario(
        &self,
        legit: &DeviceProfile,
        modulation: &ModulationScheme,
        count: usize,
    ) -> AttackScenario {
        let name = self.name();
        let plain = |chain| AttackScenario::new(name, chain, count);
        match self {
            Preset::SingleBandRelay5m => plain(AttackChain::single_band_relay(5.0)),
            Preset::SingleBandRelay10m => plain(AttackChain::single_band_relay(10.0)),
            Preset::SingleBandRelay15m => plain(AttackChain::single_band_relay(15.0)),
            Preset::Amplification30dB => plain(AttackChain::amplification(30.0)),
            Preset::Amplification60dB => plain(AttackChain::amplification(60.0)),
            Preset::Amplification64dB => plain(AttackChain::amplification(64.0)),
            Preset::AmplificationPrefiltered => {
                let mut chain = AttackChain::amplification(64.0);
                if let AttackChain::Amplification {
                    analog_prefilter, ..
                } = &mut chain
                {
                    *analog_prefilter = Some(AnalogPrefilter::uhf_400_510());
                }
                plain(chain)
            }
            Preset::DigitalRelay => plain(AttackChain::DigitalRelay {
                attacker_device: digital_relay_attacker(legit, modulation),
            }),
            Preset::Playback8bit => plain(AttackChain::playback(8, PLAYBACK_RATE_HZ)),
            Preset::Playback16bit => plain(AttackChain::playback(16, PLAYBACK_RATE_HZ)),
            Preset::PlaybackHighrate => plain(AttackChain::playback(8, PLAYBACK_HIGHRATE_HZ)),
            Preset::Nlos => AttackScenario {
                channel: Some(ChannelProfile::nlos(1.0)),
                distance_jitter_m: Some(NLOS_DISTANCE_JITTER_M),
                ..plain(AttackChain::None)
            },
            // A few degrees of crystal drift: a fraction of a ppm on the bit
            // clock and tens of Hz on the carrier.
            Preset::TemperatureDrift => AttackScenario {
                drift: Some(DeviceDrift {
                    clock_ppm: 0.5,
                    carrier_hz: 40.0,
                }),
                ..plain(AttackChain::None)
            },
            Preset::BatteryDrift => AttackScenario {
                drift: Some(DeviceDrift {
                    clock_ppm: 0.2,
                    carrier_hz: 20.0,
                }),
                ..plain(AttackChain::None)
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown preset '{s}' (known: {})",
                    known.join(", ")
                ))
            })
    }
}
