//! Conditional patch-based GAN for retinal vessel segmentation.
//!
//! A self-contained stack: rank-4 tensor core with reverse-mode autodiff,
//! an encoder/decoder generator with skip connections, a patch-based
//! discriminator, the adversarial + L1 composite objective, Adam training
//! with learning-rate decay, NetPBM dataset ingestion, and Acc/Se/Sp/AUC
//! evaluation. The `vesselgan` CLI in the sibling crate drives training,
//! inference and evaluation on top of this library.

pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod objective;
pub mod optim;
pub mod params;
pub mod run;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward,
    DiscriminatorConfig, GeneratorConfig, NoiseSpec,
};
pub use objective::{LossReport, ObjectiveConfig};
pub use optim::{AdamConfig, AdamState};
pub use params::{Gradients, Lease, ParameterStore, RunningStats};
pub use tensor::conv::ConvSpec;
pub use tensor::tape::{ActivationKind, BnMode, NetTag, Tape, TensorId};
pub use tensor::{Scalar, Shape, Tensor};
