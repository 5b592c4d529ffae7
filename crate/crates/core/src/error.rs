use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported sample rate: {0} Hz (expected 8000 Hz)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count: {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth: {bits}-bit {format} (expected 16-bit PCM)")]
    UnsupportedBitDepth { bits: u16, format: &'static str },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("degenerate power: {0} has zero mean-square power")]
    DegeneratePower(&'static str),
    #[error("invalid speaker spec {speaker}: {reason}")]
    InvalidSpeaker { speaker: String, reason: String },
    #[error("F0 contour leaves [50, 400] Hz: {f0:.2} Hz at t = {time:.4} s")]
    F0OutOfRange { f0: f64, time: f64 },
    #[error("input shorter than one frame: {len} samples < window {window}")]
    ShortInput { len: usize, window: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric overflow in {0}")]
    NumericOverflow(String),
    #[error("too few frames: {got} frames, reference encoder needs at least {required}")]
    TooFewFrames { got: usize, required: usize },
    #[error("infeasible triplet constraints: {0}")]
    InfeasibleTriplets(String),
    #[error("non-finite loss at triplet {index} (anchor {anchor}, positive {positive}, negative {negative})")]
    NonFiniteLoss {
        index: usize,
        anchor: String,
        positive: String,
        negative: String,
    },
    #[error("payload length mismatch: manifest needs {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("checkpoint parameter {name}: {reason}")]
    CheckpointParam { name: String, reason: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("insufficient voiced overlap: {0} mutually voiced frames (need 4)")]
    InsufficientVoicedOverlap(usize),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("invalid score set: {0}")]
    InvalidScores(String),
    #[error("trial mismatch: missing pairs {0}")]
    TrialMismatch(String),
    #[error("missing embedding for utterance {0}")]
    MissingEmbedding(String),
    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }
}
