//! Full network assembly, parameter accounting and checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{NetworkConfig, Preset};
pub use network::{shape_trace, ConvBnRelu, Network, NetworkCtx, ParamCount, TraceRow};
