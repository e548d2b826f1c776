use thiserror::Error;

/// Which validated quantity broke its declared bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    LoggingPropensity,
    TargetPropensity,
    Weight,
    Reward,
    RewardBound,
    WeightBound,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Quantity::LoggingPropensity => "logging propensity",
            Quantity::TargetPropensity => "target propensity",
            Quantity::Weight => "importance weight",
            Quantity::Reward => "reward",
            Quantity::RewardBound => "reward bound",
            Quantity::WeightBound => "weight bound",
        };
        f.write_str(s)
    }
}

fn fmt_position(p: &Option<usize>) -> String {
    match p {
        Some(j) => format!(" at position {j}"),
        None => String::new(),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("entry {index}{}: logging propensity must be > 0, got {value}", fmt_position(.position))]
    NonPositiveLoggingPropensity {
        index: usize,
        position: Option<usize>,
        value: f64,
    },

    #[error("entry {index}{}: {quantity} {value} violates bound {bound}", fmt_position(.position))]
    BoundViolation {
        index: usize,
        position: Option<usize>,
        quantity: Quantity,
        value: f64,
        bound: f64,
    },

    #[error("importance weights sum to zero{}", fmt_position(.position))]
    ZeroWeightSum { position: Option<usize> },

    /// Weight variance is zero; empty `positions` means the scalar case.
    #[error("importance weights have zero variance{}", if .positions.is_empty() { String::new() } else { format!(" at positions {:?}", .positions) })]
    DegenerateWeights { positions: Vec<usize> },

    #[error("cross-fitting needs at least 2 folds, got {0}")]
    InvalidFolds(usize),

    #[error("fold {fold} has {size} entries; at least 2 required")]
    FoldTooSmall { fold: usize, size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support violation{}: target puts mass on context {context}, action {action} where logging has none", fmt_position(.position))]
    SupportViolation {
        position: Option<usize>,
        context: usize,
        action: usize,
    },

    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),

    #[error("need at least 2 points with distinct x for a log-log fit")]
    DegenerateX,

    #[error("log-log fit input must be strictly positive: ({x}, {y})")]
    NonPositivePoint { x: f64, y: f64 },

    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),

    #[error("{failed} of {total} replicates failed for {estimator} at n={n}: {first}")]
    TooManyFailures {
        estimator: String,
        n: usize,
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no reward/weight bounds: supply a `_meta` header line or explicit bounds")]
    MissingBounds,

    #[error("{0} requires an explicit true value")]
    TrueValueRequired(&'static str),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
