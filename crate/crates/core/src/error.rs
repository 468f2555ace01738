use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV file {path}: {reason}")]
    WavFormat { path: PathBuf, reason: String },

    #[error("unsupported channel count {channels} in {path} (mono only)")]
    UnsupportedChannels { path: PathBuf, channels: u16 },

    #[error("unsupported sample rate {rate} Hz in {path} (expected {expected} Hz)")]
    UnsupportedSampleRate {
        path: PathBuf,
        rate: u32,
        expected: u32,
    },

    #[error("sample {index} = {value} lies outside [-1, 1]")]
    SampleRange { index: usize, value: f64 },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate utterance id {utt_id} ({path}:{line})")]
    DuplicateUtt {
        path: PathBuf,
        line: usize,
        utt_id: String,
    },

    #[error("value {0} outside the companding domain [-1, 1]")]
    Domain(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("signal-to-noise ratio undefined: {0}")]
    UndefinedSnr(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate cost model: {0}")]
    DegenerateCost(String),

    #[error("empty score class: {0}")]
    EmptyClass(&'static str),

    #[error("bad checkpoint or feature file {path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
