//! Small fully connected networks trained from scratch.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod neural_h;

pub use adam::{AdamState, LrSchedule};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, Role};
pub use mlp::{sigmoid, Gradients, Mlp, OutputActivation, Trace};
pub use neural_h::NeuralH;
