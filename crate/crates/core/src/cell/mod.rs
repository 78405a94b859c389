//! The inductive attention cell and its building blocks.

mod baseline;
mod checkpoint;
mod config;
pub mod layers;
mod memory;
mod model;

pub use baseline::{BaselineUnroll, FirstOrderBaseline};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{CellConfig, GateMode, QueryMode};
pub use layers::LayerIds;
pub use memory::{memory_footprint_bytes, IndexedMemory, MemoryEntry};
pub use model::{IamModel, IamState, KeySource, Prediction, StepOutput, StepTrace, Unroll};
