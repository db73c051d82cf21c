use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{add_awgn, db_to_power};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::IqBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathTap {
    pub delay_samples: usize,
    pub gain: Complex64,
}

/// Log-distance propagation with optional discrete multipath and receiver
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub distance_m: f64,
    #[serde(default = "one")]
    pub reference_distance_m: f64,
    #[serde(default = "two")]
    pub path_loss_exponent: f64,
    /// White receiver noise power in dB relative to the reference signal;
    /// `None` is noiseless.
    #[serde(default)]
    pub noise_floor_dbfs: Option<f64>,
    #[serde(default)]
    pub multipath_taps: Vec<MultipathTap>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

/// Default receiver noise floor of the scenarios, dBFS.
pub const DEFAULT_NOISE_FLOOR_DBFS: f64 = -30.0;

impl ChannelProfile {
    /// Line of sight at `distance_m` with the default noise floor.
    pub fn los(distance_m: f64) -> Self {
        ChannelProfile {
            distance_m,
            reference_distance_m: 1.0,
            path_loss_exponent: 2.0,
            noise_floor_dbfs: Some(DEFAULT_NOISE_FLOOR_DBFS),
            multipath_taps: Vec::new(),
        }
    }

    /// Non-line-of-sight preset: exponent 3 and a short echo profile.
    pub fn nlos(distance_m: f64) -> Self {
        ChannelProfile {
            path_loss_exponent: 3.0,
            multipath_taps: vec![
                MultipathTap {
                    delay_samples: 0,
                    gain: Complex64::new(0.93, 0.0),
                },
                MultipathTap {
                    delay_samples: 2,
                    gain: Complex64::from_polar(0.30, 2.1),
                },
                MultipathTap {
                    delay_samples: 5,
                    gain: Complex64::from_polar(0.18, -0.8),
                },
            ],
            ..Self::los(distance_m)
        }
    }

    /// Noiseless, lossless pass-through.
    pub fn ideal() -> Self {
        ChannelProfile {
            noise_floor_dbfs: None,
            ..Self::los(1.0)
        }
    }

    pub fn at_distance(&self, distance_m: f64) -> Self {
        ChannelProfile {
            distance_m,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_distance_m > 0.0 && self.distance_m > 0.0) {
            return Err(Error::InvalidChannel("distances must be positive".into()));
        }
        if self.distance_m < self.reference_distance_m {
            return Err(Error::InvalidChannel(format!(
                "distance {} m is inside the reference distance {} m",
                self.distance_m, self.reference_distance_m
            )));
        }
        if !(self.path_loss_exponent >= 1.0) {
            return Err(Error::InvalidChannel(format!(
                "path loss exponent must be >= 1, got {}",
                self.path_loss_exponent
            )));
        }
        if let Some(first) = self.multipath_taps.first() {
            if first.delay_samples != 0 {
                return Err(Error::InvalidChannel(
                    "first multipath tap must have zero delay".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn path_loss_db(&self) -> f64 {
        path_loss_db(
            self.distance_m,
            self.reference_distance_m,
            self.path_loss_exponent,
        )
    }
}

/// `10 n log10(d / d0)`.
pub fn path_loss_db(distance_m: f64, reference_distance_m: f64, exponent: f64) -> f64 {
    10.0 * exponent * (distance_m / reference_distance_m).log10()
}

fn apply_taps(x: &[Complex64], taps: &[MultipathTap]) -> Vec<Complex64> {
    if taps.is_empty() {
        return x.to_vec();
    }
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for tap in taps {
        for (n, out) in y.iter_mut().enumerate().skip(tap.delay_samples) {
            *out += tap.gain * x[n - tap.delay_samples];
        }
    }
    y
}

/// Multipath, then path loss `10^(-PL/20)`, then receiver AWGN.
pub fn apply_channel(sig: &IqBuffer, ch: &ChannelProfile, rng: &mut Rng) -> Result<IqBuffer> {
    ch.validate()?;
    let gain = 10f64.powf(-ch.path_loss_db() / 20.0);
    let mut y = apply_taps(sig.samples(), &ch.multipath_taps);
    if gain != 1.0 {
        y.iter_mut().for_each(|s| *s *= gain);
    }
    if let Some(nf) = ch.noise_floor_dbfs {
        add_awgn(&mut y, db_to_power(nf), rng);
    }
    Ok(sig.with_samples(y))
}
