use thiserror::Error;

use crate::model::EventType;

/// Errors raised by the simulator and its verification helpers.
#[derive(Debug, Error)]
pub enum BdsError {
    #[error("subgroup index {index} out of range for p = {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("swap event must move between distinct subgroups (got {0} -> {0})")]
    DegenerateSwap(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level set for n = {n}, p = {p} has {size} states, above the cap of {cap}")]
    EnumerationCap { n: u64, p: usize, size: u128, cap: usize },

    #[error("model returned invalid rate {rate} for {event} at z = {state:?}")]
    ModelViolation { event: EventType, state: Vec<u64>, rate: f64 },

    #[error("support condition violated: {event} has rate {rate} at z = {state:?}")]
    SupportViolation { event: EventType, state: Vec<u64>, rate: f64 },

    #[error("{event} rate {rate} exceeds its dominating bound {bound} at z = {state:?}")]
    DominationViolation { event: EventType, state: Vec<u64>, rate: f64, bound: f64 },

    #[error("zero denominator in Feller partial sum at z = {0}")]
    ZeroDenominator(u64),

    #[error("skeleton exceeded {cap} records before t = {time}")]
    Explosion { cap: usize, time: f64, partial: Box<crate::engine::JumpSkeleton> },

    #[error("corrupted skeleton: record {index} has mark {mark} above its dominating rate {rate}")]
    CorruptedSkeleton { index: usize, mark: f64, rate: f64 },

    #[error("strong order violated for {event}: low rate {low} at z = {low_state:?} exceeds high rate {high} at z = {high_state:?}")]
    StrongOrderViolation {
        event: EventType,
        low_state: Vec<u64>,
        high_state: Vec<u64>,
        low: f64,
        high: f64,
    },

    #[error("domination precondition violated at t = {time}: {reason}")]
    NotDominated { time: f64, reason: String },

    #[error("checkpoint {checkpoint} lies beyond the horizon {horizon}")]
    CheckpointBeyondHorizon { checkpoint: f64, horizon: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("swap chain on U_{n} has {classes} closed communicating classes; the invariant kernel is not unique")]
    UniquenessFailure { n: u64, classes: usize },

    #[error("stationary solve on U_{n} is ill-conditioned (residual {residual:e})")]
    IllConditioned { n: u64, residual: f64 },

    #[error("empty sample or window: {0}")]
    Empty(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BdsError>;
