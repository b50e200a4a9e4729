//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, model training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A Volpiano string contained a character outside the known table
    /// while strict parsing was enabled.
    #[error("unknown volpiano character {0:?}")]
    UnknownCharacter(char),

    /// A melody contained no pitch letters after cleaning.
    #[error("empty melody after cleaning")]
    EmptyMelody,

    /// A chant lacks the boundary annotations a segmenter needs.
    #[error("chant {record_id} has no {unit} boundary annotations")]
    MissingBoundaries { record_id: String, unit: String },

    /// A removal trace referenced a table that no longer exists.
    #[error("stale trace: table {table} not found for the referenced dish")]
    StaleTrace { table: u64 },

    /// A segment exceeded the model's length cap.
    #[error("segment of length {len} exceeds the cap {cap}")]
    SegmentTooLong { len: usize, cap: usize },

    /// A segmentation does not cover its chant or violates the length cap.
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    /// A tone is not a member of the model alphabet.
    #[error("tone {0} is not in the alphabet")]
    UnknownTone(String),

    /// No model in an ensemble can assign the chant positive probability.
    #[error("no mode model can score chant {0}")]
    AllModesImpossible(String),

    /// An operation received an empty input where content is required.
    #[error("empty input")]
    EmptyInput,

    /// Correlation of a constant series is undefined.
    #[error("zero variance: correlation undefined")]
    ZeroVariance,

    /// A corpus split left one of the partitions empty.
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    /// The requested computation is undefined for the given encoding.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data.
    #[error("invalid data: {0}")]
    Data(String),

    /// A serialized model could not be read or written.
    #[error("model serialization: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
