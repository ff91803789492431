//! Minimal dense-tensor toolkit: the layers both networks need, reverse-mode
//! gradients over a recorded tape, Adam, and the checkpoint container.

mod array;
mod backward;
pub mod checkpoint;
mod elem;
pub mod gradcheck;
mod optim;
mod params;
mod tape;

#[cfg(test)]
mod tests;

pub use array::Tensor;
pub use backward::Gradients;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use elem::Elem;
pub use optim::{Adam, LrSchedule, StepOutcome};
pub use params::{
    fan_in_uniform, BatchNorm, Conv2d, Dense, Padding, ParamId, ParamStore, RunningStats, BN_EPS,
    BN_MOMENTUM,
};
pub use tape::{Activation, BatchStats, Mode, Tape, Var};

/// Leaky-ReLU slope used throughout both networks.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("batch norm used in infer mode before any running statistics exist")]
    MissingStatistics,
    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("node {0} is not recorded on this tape")]
    Unrecorded(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
