//! Minimal differentiable core: tensors, a reverse-mode tape, parameter
//! storage with checkpoints, RMSProp, and a finite-difference checker.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckConfig, GradCheckReport};
pub use layers::{linear, softmax_cross_entropy, EncodedSequence, Linear, SequenceEncoder};
pub use optim::RmsProp;
pub use params::{Checkpoint, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
