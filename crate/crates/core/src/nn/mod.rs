//! Minimal dense-tensor autodiff: tensors, a define-by-run tape, layers,
//! Xavier initialization, Adam and JSON checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use layers::{BatchNorm1d, Conv2d, Ctx, Dense, Layer, Lstm};
pub use optim::{fit, Adam, TrainReport};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
