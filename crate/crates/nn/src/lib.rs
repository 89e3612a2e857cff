//! Minimal differentiable-computation substrate: dense tensors, a
//! reverse-mode tape, the layers used by the radchar models, losses, LeCun
//! initialisation, Adam, and a checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod float;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use float::{DType, Float};
pub use layers::{Activation, Ctx, EncoderLayer, EncoderSpec, Layer, LayerSpec, Mode};
pub use optim::{adam_update, Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;
