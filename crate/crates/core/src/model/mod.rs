//! The energy model: embeddings, pre-LN encoder stack and scalar energy head.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, Checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{LeafSpec, ModelConfig, Variant};
pub use forward::ForwardTrace;
pub use params::{init_params, EncoderLayer, EnergyHead, LayerNormParams, ModelParams, INIT_STD};
