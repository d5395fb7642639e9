use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty node set")]
    EmptyNodeSet,

    #[error("initiator {0} not in node set")]
    InitiatorNotInSet(usize),

    #[error("unknown power index {0} (valid range 0..=31)")]
    UnknownPowerIndex(u8),

    #[error("contribution slot {slot} claimed by nodes {first} and {second}")]
    SlotCollision {
        slot: usize,
        first: usize,
        second: usize,
    },

    #[error("class mix sums to {0}, expected 1")]
    UnnormalizedMix(f64),

    #[error("mean headway {0} s must exceed the minimum gap {1} s")]
    HeadwayTooSmall(f64, f64),

    #[error("vehicle speed must be positive, got {0}")]
    NonPositiveSpeed(f64),

    #[error("window with multiple vehicles cannot be labeled in four-class mode")]
    MixedOccupancy,

    #[error("{count} instances of {each_us} us do not fit in period of {period_us} us (overflow {overflow_us} us)")]
    TimelineOverflow {
        count: u32,
        each_us: u64,
        period_us: u64,
        overflow_us: u64,
    },

    #[error("empty result list")]
    EmptyWindow,

    #[error("receiver {0} missing from a run result")]
    ReceiverMissing(usize),

    #[error("sweep level {level} has {got} windows, need at least {need}")]
    InsufficientSamples { level: u8, got: usize, need: usize },

    #[error("training set needs at least 2 classes, got {0}")]
    DegenerateClasses(usize),

    #[error("class {label} has {got} samples, need at least {need}")]
    TooFewSamples {
        label: String,
        got: usize,
        need: usize,
    },

    #[error("solver did not converge in {iterations} iterations (KKT gap {gap:.6})")]
    NotConverged { iterations: usize, gap: f64 },

    #[error("sample has {got} features, model expects {expected}")]
    ArityMismatch { got: usize, expected: usize },

    #[error("split fraction {0} must lie strictly between 0 and 1")]
    BadSplitFraction(f64),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("scenario yields zero measurement points")]
    NoMeasurementPoints,

    #[error("topology disconnected at sync power: node {0} unreachable from node 0")]
    DisconnectedTopology(usize),

    #[error("schedule invalid: {0}")]
    InvalidSchedule(String),

    #[error("trace timestamps out of order at row {0}")]
    TimestampDisorder(usize),

    #[error("csv column mismatch: expected {expected}, found {found}")]
    HeaderMismatch { expected: String, found: String },

    #[error("model file version {0} unsupported (this build reads version 1)")]
    UnsupportedModelVersion(u32),

    #[error("config: {0}")]
    Config(String),

    #[error("label {0} unknown")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
