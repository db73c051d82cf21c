//! Physical-layer fingerprinting of key-fob transmissions for detecting
//! relay, amplification and playback attacks on keyless entry systems.
//!
//! The pipeline runs from synthetic complex-baseband captures
//! ([`synth`]) through receiver preprocessing ([`dsp`]) and feature
//! extraction ([`features`]) to one-class detection ([`detector`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod dsp;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod par;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use features::{extract_features, FeatureExtractor, FeatureName, FeatureVector, PeakSearch};
pub use signal::{
    fft_magnitude, mean_power, IqBuffer, ModulationKind, ModulationScheme, PulseSignal, Span,
    Spectrum,
};
