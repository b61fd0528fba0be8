//! Minimal reverse-mode automatic differentiation for small convolutional
//! policy/value networks, with SAME-padded (transposed) convolutions, dense
//! layers, RMSProp/Adam and a lock-per-block shared parameter store.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod parallel;
mod params;
pub mod store;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use kernels::{conv2d_same, dense, softmax_and_entropy};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use params::{Gradients, ParamSet};
pub use store::{optimizer_step, AccessMode, ParameterStore, StepOutcome};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
