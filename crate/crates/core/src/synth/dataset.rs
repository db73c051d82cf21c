use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    apply_attack_chain, AttackChain, AttackContext, ChannelProfile, DeviceProfile, ReceiverConfig,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, from_seed};
use crate::signal::{IqBuffer, ModulationKind, ModulationScheme};

/// Ground-truth class of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Legit,
    SingleBandRelay,
    Amplification,
    DigitalRelay,
    Playback,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Legit,
        Label::SingleBandRelay,
        Label::Amplification,
        Label::DigitalRelay,
        Label::Playback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Legit => "legit",
            Label::SingleBandRelay => "single_band_relay",
            Label::Amplification => "amplification",
            Label::DigitalRelay => "digital_relay",
            Label::Playback => "playback",
        }
    }

    pub fn is_attack(&self) -> bool {
        *self != Label::Legit
    }

    pub fn of_chain(chain: &AttackChain) -> Label {
        match chain {
            AttackChain::None => Label::Legit,
            AttackChain::SingleBandRelay { .. } => Label::SingleBandRelay,
            AttackChain::Amplification { .. } => Label::Amplification,
            AttackChain::DigitalRelay { .. } => Label::DigitalRelay,
            AttackChain::Playback { .. } => Label::Playback,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown label '{s}'")))
    }
}

/// Bounded uniform perturbation of the legitimate device, redrawn per
/// capture (temperature, battery sag).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceDrift {
    #[serde(default)]
    pub clock_ppm: f64,
    #[serde(default)]
    pub carrier_hz: f64,
}

impl DeviceDrift {
    fn apply(&self, device: &DeviceProfile, rng: &mut crate::rng::Rng) -> DeviceProfile {
        let mut d = device.clone();
        if self.clock_ppm > 0.0 {
            d.clock_offset_ppm += rng.random_range(-self.clock_ppm..=self.clock_ppm);
        }
        if self.carrier_hz > 0.0 {
            d.carrier_offset_hz += rng.random_range(-self.carrier_hz..=self.carrier_hz);
        }
        d
    }
}

/// One labeled partition of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub name: String,
    pub chain: AttackChain,
    pub count: usize,
    /// Replaces the scenario-wide final-hop channel.
    #[serde(default)]
    pub channel: Option<ChannelProfile>,
    /// Replaces the scenario-wide device drift.
    #[serde(default)]
    pub drift: Option<DeviceDrift>,
    /// Replaces the scenario-wide distance jitter.
    #[serde(default)]
    pub distance_jitter_m: Option<f64>,
}

impl AttackScenario {
    pub fn new(name: impl Into<String>, chain: AttackChain, count: usize) -> Self {
        AttackScenario {
            name: name.into(),
            chain,
            count,
            channel: None,
            drift: None,
            distance_jitter_m: None,
        }
    }

    pub fn label(&self) -> Label {
        Label::of_chain(&self.chain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ModulationSpec {
    Kind(ModulationKind),
    Full(ModulationScheme),
}

/// Everything needed to synthesize a dataset. Serialized as the JSON
/// scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    modulation: ModulationSpec,
    #[serde(default)]
    pub receiver: ReceiverConfig,
    #[serde(default = "DeviceProfile::legit_default")]
    pub legit_device: DeviceProfile,
    #[serde(default = "default_channel")]
    pub channel: ChannelProfile,
    /// Each capture's link distance is drawn from `[d, d + jitter]`.
    #[serde(default)]
    pub distance_jitter_m: f64,
    #[serde(default)]
    pub drift: Option<DeviceDrift>,
    /// Legitimate captures under the scenario-wide channel.
    pub legit_count: usize,
    #[serde(default)]
    pub scenarios: Vec<AttackScenario>,
}

fn default_channel() -> ChannelProfile {
    ChannelProfile::los(1.0)
}

/// Default link-distance spread of legitimate captures, metres.
pub const DEFAULT_DISTANCE_JITTER_M: f64 = 0.3;

impl ScenarioConfig {
    /// Default legitimate setup with `legit_count` captures and no attacks.
    pub fn new(kind: ModulationKind, seed: u64, legit_count: usize) -> Self {
        ScenarioConfig {
            seed,
            modulation: ModulationSpec::Kind(kind),
            receiver: ReceiverConfig::default(),
            legit_device: DeviceProfile::legit_default(),
            channel: default_channel(),
            distance_jitter_m: DEFAULT_DISTANCE_JITTER_M,
            drift: None,
            legit_count,
            scenarios: Vec::new(),
        }
    }

    pub fn with_scenario(mut self, s: AttackScenario) -> Self {
        self.scenarios.push(s);
        self
    }

    pub fn modulation(&self) -> ModulationScheme {
        match &self.modulation {
            ModulationSpec::Kind(k) => ModulationScheme::default_for(*k),
            ModulationSpec::Full(m) => *m,
        }
    }

    pub fn set_modulation(&mut self, m: ModulationScheme) {
        self.modulation = ModulationSpec::Full(m);
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modulation();
        m.validate()?;
        self.receiver.validate(&m)?;
        self.legit_device.validate()?;
        self.channel.validate()?;
        if !(self.distance_jitter_m >= 0.0) {
            return Err(Error::Config(
                "distance_jitter_m must be non-negative".into(),
            ));
        }
        for s in &self.scenarios {
            s.chain.validate()?;
            if let Some(ch) = &s.channel {
                ch.validate()?;
            }
            if s.distance_jitter_m.is_some_and(|j| !(j >= 0.0)) {
                return Err(Error::Config(format!(
                    "scenario '{}': distance_jitter_m must be non-negative",
                    s.name
                )));
            }
            if s.name.is_empty() || s.name == LEGIT_PARTITION {
                return Err(Error::Config(format!(
                    "scenario name '{}' is reserved or empty",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Partitions in generation order, legit first.
    fn partitions(&self) -> Vec<AttackScenario> {
        let mut parts = vec![AttackScenario {
            name: LEGIT_PARTITION.into(),
            chain: AttackChain::None,
            count: self.legit_count,
            channel: None,
            drift: None,
            distance_jitter_m: None,
        }];
        parts.extend(self.scenarios.iter().cloned());
        parts
    }
}

/// Partition name of the scenario-wide legitimate captures.
pub const LEGIT_PARTITION: &str = "legit";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCapture {
    pub iq: IqBuffer,
    pub label: Label,
    /// Partition name.
    pub scenario: String,
    /// Per-capture seed; regenerates this capture alone.
    pub seed: u64,
    pub device_id: String,
    /// Attack chain parameters as recorded in the manifest.
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub legit: usize,
    pub attack: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modulation: ModulationScheme,
    pub receiver: ReceiverConfig,
    pub captures: Vec<LabeledCapture>,
}

impl Dataset {
    pub fn counts(&self) -> Counts {
        let legit = self
            .captures
            .iter()
            .filter(|c| !c.label.is_attack())
            .count();
        Counts {
            legit,
            attack: self.captures.len() - legit,
        }
    }

    pub fn partition<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a LabeledCapture> + 'a {
        self.captures.iter().filter(move |c| c.scenario == name)
    }
}

/// Synthesizes every partition of `config`. Each capture draws from its own
/// substream keyed by `(seed, partition, index)`, so the output does not
/// depend on thread count or generation order.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let modulation = config.modulation();
    let mut jobs = Vec::new();
    for part in config.partitions() {
        for i in 0..part.count {
            jobs.push((part.clone(), i as u64));
        }
    }
    let captures =
        crate::par::map_slice(&jobs, |(part, i)| synth_one(config, &modulation, part, *i));
    Ok(Dataset {
        modulation,
        receiver: config.receiver,
        captures: captures.into_iter().collect::<Result<_>>()?,
    })
}

fn synth_one(
    config: &ScenarioConfig,
    modulation: &ModulationScheme,
    part: &AttackScenario,
    index: u64,
) -> Result<LabeledCapture> {
    let seed = derive_seed(config.seed, &part.name, index);
    let mut rng = from_seed(seed);
    let drift = part.drift.or(config.drift);
    let device = match drift {
        Some(d) => d.apply(&config.legit_device, &mut rng),
        None => config.legit_device.clone(),
    };
    let base = part
        .channel
        .clone()
        .unwrap_or_else(|| config.channel.clone());
    let spread = part.distance_jitter_m.unwrap_or(config.distance_jitter_m);
    let jitter = if spread > 0.0 {
        rng.random_range(0.0..=spread)
    } else {
        0.0
    };
    let channel = base.at_distance(base.distance_m + jitter);
    let chain = jitter_chain(&part.chain, jitter, &channel);
    let ctx = AttackContext {
        device: device.clone(),
        modulation: *modulation,
        rx: config.receiver,
        channel,
    };
    let iq = apply_attack_chain(&ctx, &chain, &mut rng)?;
    let device_id = match &part.chain {
        AttackChain::DigitalRelay { attacker_device } => attacker_device.id.clone(),
        _ => device.id,
    };
    Ok(LabeledCapture {
        iq,
        label: part.label(),
        scenario: part.name.clone(),
        seed,
        device_id,
        params: serde_json::to_value(&part.chain).expect("attack chain serializes"),
    })
}

/// Spreads the attacker-side distances by the same jitter as the legit link.
fn jitter_chain(chain: &AttackChain, jitter: f64, channel: &ChannelProfile) -> AttackChain {
    match chain {
        AttackChain::SingleBandRelay { victim_distance_m } => AttackChain::SingleBandRelay {
            victim_distance_m: victim_distance_m + jitter,
        },
        AttackChain::Amplification {
            amp_gain_db,
            amp_noise_figure_db,
            analog_prefilter,
            relay_distance_m,
            pickup_distance_m,
        } => {
            let d = relay_distance_m
                .unwrap_or_else(|| super::attack::gain_offset_distance(channel, *amp_gain_db));
            AttackChain::Amplification {
                amp_gain_db: *amp_gain_db,
                amp_noise_figure_db: *amp_noise_figure_db,
                analog_prefilter: *analog_prefilter,
                relay_distance_m: Some(d + jitter),
                pickup_distance_m: *pickup_distance_m,
            }
        }
        other => other.clone(),
    }
}
