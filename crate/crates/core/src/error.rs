use thiserror::Error;

use crate::network::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("decay factor must lie in (0, 1], got {0}")]
    InvalidDecay(f64),

    #[error("spike train has length {actual}, expected window {expected}")]
    WindowMismatch { expected: usize, actual: usize },

    #[error("fan-in mismatch: {inputs} inputs but {weights} weights")]
    FanInMismatch { inputs: usize, weights: usize },

    #[error("spike count {count} exceeds window {window}")]
    CountOutOfRange { count: u32, window: u32 },

    #[error("negative per-step input {value} at timestep {index}")]
    NegativeInput { index: usize, value: f64 },

    #[error("empty tensor")]
    EmptyTensor,

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("threshold {threshold} quantizes to zero at scale {scale}")]
    ThresholdUnderflow { threshold: f64, scale: f64 },

    #[error("fixed-point multiplier {0} does not fit in 32 bits")]
    MultiplierOverflow(f64),

    #[error("invalid quantization config: {0}")]
    InvalidQuantConfig(String),

    #[error("accumulator needs {needed} bits for fan-in {fan_in} at {bits}-bit operands, only 32 available")]
    AccumulatorWidth {
        fan_in: usize,
        bits: u32,
        needed: u32,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("input representation cannot be bridged: {0}")]
    Representation(String),

    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("model blob: {0}")]
    Blob(String),

    #[error("blob checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("core has no model loaded")]
    Unconfigured,

    #[error("simulator fault: {0}")]
    Fault(String),

    #[error("unknown trace event `{0}`")]
    UnknownEvent(String),

    #[error("energy coefficients: {0}")]
    Coefficients(String),

    #[error("crossover undefined: {0}")]
    DegenerateCrossover(&'static str),

    #[error("sparsity {0} is outside [0, 1]")]
    InvalidSparsity(f64),

    #[error("invalid search configuration: {0}")]
    InvalidSearch(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("no candidate satisfies the hard constraints (best effort: {best_effort})")]
    Infeasible { best_effort: String },

    #[error("layer {layer}: {source}")]
    LayerContext { layer: usize, source: Box<Error> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
