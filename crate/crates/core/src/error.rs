use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid span {start}..{end} for signal of length {len}")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("invalid device profile: {0}")]
    InvalidProfile(String),

    #[error("invalid modulation: {0}")]
    InvalidModulation(String),

    #[error("invalid filter design: {0}")]
    InvalidDesign(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid attack chain: {0}")]
    InvalidAttack(String),

    #[error("digital relay could not decode the preamble: {0}")]
    RelayDecodeError(String),

    #[error("signal is identically zero")]
    ZeroSignal,

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("span too short: {0}")]
    SpanTooShort(String),

    #[error("preamble not found: {0}")]
    PreambleNotFound(String),

    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {context}: {message}")]
    ParseError { context: String, message: String },

    #[error("truncated capture file {path}: {len} bytes is not a multiple of 8")]
    TruncatedFile { path: PathBuf, len: u64 },

    #[error("manifest entry {index} ({path}): {message}")]
    ManifestError {
        index: usize,
        path: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("ranking error: {0}")]
    RankingError(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::ParseError {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
