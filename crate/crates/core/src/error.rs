//! Single error type for the core crate.
//!
//! Every public fallible operation returns `Result<_, CoreError>`. Numerical
//! failures carry the name of the operation that produced them so a training
//! abort can say *where* the NaN appeared.

use alloc::string::String;
use core::fmt;

/// Errors produced by the numerical and model layers.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Tensor shapes incompatible for the attempted operation.
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    /// A non-finite value (NaN or ±Inf) appeared in the named operation.
    NonFinite { op: &'static str },
    /// Non-finite value while evaluating diffusion step `t`.
    NonFiniteAtStep { op: &'static str, t: usize },
    /// Matrix handed to the eigensolver deviates from symmetry.
    NotSymmetric { max_dev: f64 },
    /// Jacobi sweeps exhausted without reaching the off-diagonal tolerance.
    EigNoConvergence { sweeps: usize },
    /// backward() requires a scalar output node.
    NonScalarOutput { shape: String },
    /// A tape can only run one backward pass.
    TapeConsumed,
    /// Parameter name registered twice on the same tape or set.
    DuplicateParam { name: String },
    /// Noise-schedule construction violated an invariant.
    InvalidSchedule { reason: String },
    /// Diffusion time index outside 1..=T.
    TimeOutOfRange { t: usize, t_max: usize },
    /// Molecular-graph invariant violated (connectivity, indices, ...).
    InvalidGraph { reason: String },
    /// Model or training configuration rejected.
    InvalidConfig { reason: String },
    /// Dataset record failed validation.
    InvalidRecord { id: String, reason: String },
    /// Two records share an id.
    DuplicateId { id: String },
    /// A split or batch came out empty where data is required.
    EmptyData { what: &'static str },
    /// Fine-tuning requires a label on every record.
    MissingLabel { id: String },
    /// Potential evaluated on a conformation with the wrong atom count.
    WrongAtomCount { expected: usize, got: usize },
    /// Dihedral undefined: one of the inner angles is collinear.
    DegenerateDihedral,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected}, got {got}")
            }
            CoreError::NonFinite { op } => {
                write!(f, "non-finite value produced by '{op}'")
            }
            CoreError::NonFiniteAtStep { op, t } => {
                write!(f, "non-finite value produced by '{op}' at diffusion step t={t}")
            }
            CoreError::NotSymmetric { max_dev } => {
                write!(f, "matrix not symmetric (max |a_ij - a_ji| = {max_dev:e})")
            }
            CoreError::EigNoConvergence { sweeps } => {
                write!(f, "Jacobi eigensolver did not converge within {sweeps} sweeps")
            }
            CoreError::NonScalarOutput { shape } => {
                write!(f, "backward requires a scalar output, got shape {shape}")
            }
            CoreError::TapeConsumed => write!(f, "tape already consumed by a backward pass"),
            CoreError::DuplicateParam { name } => {
                write!(f, "parameter '{name}' registered twice")
            }
            CoreError::InvalidSchedule { reason } => write!(f, "invalid noise schedule: {reason}"),
            CoreError::TimeOutOfRange { t, t_max } => {
                write!(f, "diffusion time t={t} outside 1..={t_max}")
            }
            CoreError::InvalidGraph { reason } => write!(f, "invalid molecular graph: {reason}"),
            CoreError::InvalidConfig { reason } => write!(f, "invalid configuration: {reason}"),
            CoreError::InvalidRecord { id, reason } => {
                write!(f, "invalid dataset record '{id}': {reason}")
            }
            CoreError::DuplicateId { id } => write!(f, "duplicate record id '{id}'"),
            CoreError::EmptyData { what } => write!(f, "empty {what}"),
            CoreError::MissingLabel { id } => {
                write!(f, "record '{id}' has no label but fine-tuning requires one")
            }
            CoreError::WrongAtomCount { expected, got } => {
                write!(f, "potential expects {expected} atoms, conformation has {got}")
            }
            CoreError::DegenerateDihedral => {
                write!(f, "dihedral undefined: collinear inner atoms")
            }
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
