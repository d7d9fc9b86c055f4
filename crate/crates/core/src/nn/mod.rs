//! Minimal differentiable building blocks used by every model in the crate.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{Activation, LayerNorm, Linear, Mlp};
pub use optim::Adam;
pub use params::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ParamId, ParamStore};
pub use tape::{Grads, Mat, Tape, Var};
