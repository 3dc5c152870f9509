//! Error type shared by all modules.

use std::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced while parsing, validating, or planning.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Document does not conform to its schema; names the offending
    /// field or construct.
    Schema(String),
    /// Unsupported or mismatched format version string.
    Version { found: String, expected: String },
    /// Spatial or channel sizes do not chain between two layers.
    Chain {
        producer: usize,
        consumer: usize,
        detail: String,
    },
    /// Macroblock annotations do not partition the conv layers.
    MacroblockPartition(String),
    /// Output spatial sizes increase along the pipeline.
    NonMonotoneSpatial { layer: usize },
    /// A plan does not match the graph it is applied to.
    PlanMismatch(String),
    /// Scaling would produce a channel width below one.
    WidthUnderflow { macroblock: usize },
    /// Stats or plan fingerprint does not match the target graph.
    FingerprintMismatch { expected: String, found: String },
    /// Stats file does not cover a conv layer of the model.
    MissingLayer { layer: usize },
    /// Stats file covers a layer more than once or one the model lacks.
    StatsCoverage(String),
    /// Non-zero probability outside [0, 1].
    ProbabilityRange { layer: usize, p: f64 },
    /// Simulation would allocate more activation elements than allowed.
    BudgetExceeded { required: u64, budget: u64 },
    /// Simulation requested with zero images.
    NoImages,
    /// Alpha-scaling factor outside (0, 1].
    AlphaRange { alpha: f64 },
    /// Planner threshold configuration is not positive.
    ThresholdRange { z: f64 },
    /// Unsupported generator family/parameter combination.
    UnsupportedZoo(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Schema(detail) => write!(f, "schema violation: {detail}"),
            Self::Version { found, expected } => {
                write!(f, "unsupported version {found:?}, expected {expected:?}")
            }
            Self::Chain {
                producer,
                consumer,
                detail,
            } => write!(
                f,
                "chain inconsistency between layer {producer} and layer {consumer}: {detail}"
            ),
            Self::MacroblockPartition(detail) => {
                write!(f, "macroblock partition violation: {detail}")
            }
            Self::NonMonotoneSpatial { layer } => write!(
                f,
                "output spatial size increases at layer {layer}; pipeline is malformed"
            ),
            Self::PlanMismatch(detail) => write!(f, "plan does not match graph: {detail}"),
            Self::WidthUnderflow { macroblock } => write!(
                f,
                "macroblock {macroblock} would scale to a channel width below 1"
            ),
            Self::FingerprintMismatch { expected, found } => write!(
                f,
                "model fingerprint mismatch: expected {expected}, found {found}"
            ),
            Self::MissingLayer { layer } => {
                write!(f, "stats are missing conv layer {layer}")
            }
            Self::StatsCoverage(detail) => write!(f, "stats coverage error: {detail}"),
            Self::ProbabilityRange { layer, p } => {
                write!(f, "layer {layer} has non-zero probability {p} outside [0, 1]")
            }
            Self::BudgetExceeded { required, budget } => write!(
                f,
                "simulation needs {required} activation elements per image, budget is {budget}"
            ),
            Self::NoImages => write!(f, "simulation requires at least one image"),
            Self::AlphaRange { alpha } => {
                write!(f, "alpha {alpha} outside (0, 1]")
            }
            Self::ThresholdRange { z } => write!(f, "threshold z = {z} must be positive"),
            Self::UnsupportedZoo(detail) => {
                write!(f, "unsupported model spec: {detail}")
            }
        }
    }
}

impl std::error::Error for Error {}
