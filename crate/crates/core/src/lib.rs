//! LuNet: a hierarchy of 1D-convolution + LSTM blocks for network intrusion
//! detection, with the data pipeline and evaluation harness around it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use model::{LuNetModel, LuNetSpec};
pub use nn::{Layer, LayerKind, LayerParams, Mode};
pub use rng::Rng;
pub use tensor::Tensor;
