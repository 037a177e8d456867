//! Dense numerical engine: tensors, reverse-mode differentiation, Adam,
//! gradient checking and checkpoint persistence.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod scalar;
pub mod stopping;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState, StepOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{glorot_uniform, Grads, ParamStore};
pub use scalar::Scalar;
pub use stopping::{EarlyStopping, StopReason, Verdict};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
