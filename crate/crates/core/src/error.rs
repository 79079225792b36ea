use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("phoneme id {id} at position {position} is out of vocabulary (size {vocab})")]
    OutOfVocabulary { position: usize, id: u32, vocab: usize },
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty output")]
    EmptyOutput,
    #[error("runaway duration: {frames} predicted frames exceeds limit {limit}")]
    RunawayDuration { frames: usize, limit: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("cannot normalize silence")]
    Silence,
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("input too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("{message} at line {line}")]
    Alignment { line: usize, message: String },
    #[error("no intervals")]
    NoIntervals,
    #[error("alignment/audio mismatch: alignment covers {alignment} frames, audio has {audio}")]
    AlignmentMismatch { alignment: i64, audio: usize },
    #[error("unknown phoneme {0:?}")]
    UnknownPhoneme(String),
    #[error("insufficient voiced frames ({0})")]
    InsufficientVoiced(usize),
    #[error("degenerate stats: {0}")]
    DegenerateStats(&'static str),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("silent spectrogram")]
    SilentSpectrogram,
    #[error("unknown {kind} {name:?}")]
    UnknownName { kind: &'static str, name: String },
    #[error("loss term {0} is not finite")]
    NonFiniteLoss(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
