//! Cycle-consistent multimodal contrastive learning at desk scale.
//!
//! Two small MLP encoders embed paired "image" and "text" feature views onto
//! a shared unit hypersphere. Training minimizes the symmetric contrastive loss
//! plus in-modal and cross-modal consistency regularizers; the [`metrics`]
//! module measures the resulting geometry.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod train;

pub mod cli;

pub use encoder::{init_encoder, EmbeddingBatch, MlpEncoder, ParamGradients};
pub use error::{Error, Result};
pub use loss::{cyclip_loss, LogitScale, LossBreakdown, LossWeights, Variant};
pub use math::{Matrix, Vector};
