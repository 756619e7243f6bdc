//! Simultaneous decomposition and classification for noisy radar chips.
//!
//! A small self-contained stack: dense f64 tensors and layer primitives with
//! exact backward passes, a two-sub-network model trained on the joint
//! decomposition + classification loss, a deterministic synthetic chip
//! generator with the `x + lambda*g` mixing protocol, a sparse-representation
//! baseline over a shared ground dictionary, and an evaluation harness that
//! emits CSV tables and SVG charts.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod presets;
pub(crate) mod seeds;
pub mod src_baseline;
pub mod storage;
pub mod svg;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use eval::{EvalRecord, Method, Metric, Prediction};
pub use layers::{LayerGrads, Padding};
pub use model::{LayerDesc, NetworkConfig, NetworkParams, TrainItem};
pub use src_baseline::{Dictionary, SparseCode};
pub use synth::{Chip, ClassLabel, Dataset, GenConfig, GroundModel, ObjectTemplate, Pol, Sample};
pub use tensor::Tensor;
pub use train::{EpochStats, TrainConfig, TrainMode};
