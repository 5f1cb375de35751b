use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("input contains no events")]
    EmptyInput,

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("invalid catalog row {row}: {reason}")]
    InvalidCatalog { row: usize, reason: String },

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown song `{0}`")]
    UnknownSong(String),

    #[error("co-rated set of {found} songs is below the minimum overlap of {required}")]
    InsufficientOverlap { found: usize, required: usize },

    #[error("no user shares enough rated songs with `{0}`")]
    EmptyNeighborhood(String),

    #[error("no neighbor of `{user}` rated song `{song}`")]
    NoRatingSupport { user: String, song: String },

    #[error("training diverged at epoch {epoch}: train RMSE is {rmse}")]
    DivergenceDetected { epoch: usize, rmse: f64 },

    #[error("constant attribute columns cannot be fitted: {}", columns.join(", "))]
    DegenerateDesign { columns: Vec<String> },

    #[error("need at least {required} songs to fit latent mappers, found {found}")]
    TooFewSongs { required: usize, found: usize },

    #[error("no representative songs could be resolved for the seed profile")]
    NoRepresentatives,

    #[error("seed file is empty")]
    EmptySeeds,

    #[error("length mismatch: {left} predictions vs {right} actual values")]
    LengthMismatch { left: usize, right: usize },

    #[error("metric input is empty")]
    EmptyMetricInput,

    #[error("gain at position {position} is negative ({gain})")]
    NegativeGain { position: usize, gain: f64 },

    #[error("no users to average over")]
    NoUsers,

    #[error("split produced an empty test set")]
    EmptyTest,

    #[error("invalid range for {attribute}: {reason}")]
    InvalidRange { attribute: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("snapshot has no {0}")]
    MissingComponent(&'static str),

    #[error("snapshot config hash {found} does not match expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
