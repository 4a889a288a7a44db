//! Dense kernels, the leaf/probability network pair, optimizers and the
//! learning-rate schedule.

pub mod checkpoint;
pub mod linalg;
pub(crate) mod matrix;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use matrix::{gemm, Matrix, Transpose};
pub use mlp::{Activation, Linear, Mlp, MlpGrads, MlpTape};
pub use model::{softmax_in_place, TreeNet, TreeNetForward, TreeNetGrads};
pub use optim::{OptimizerMode, OptimizerState};
pub use schedule::PlateauScheduler;
