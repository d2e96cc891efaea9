//! Run orchestration: configuration, checkpoints, the training loop, and
//! tiled inference.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod trainer;

pub use checkpoint::{Checkpoint, RngState};
pub use config::RunConfig;
pub use infer::{infer_file, infer_from_path, infer_map, InferOutcome, ZMode};
pub use trainer::{TrainStepReport, TrainSummary, Trainer};
