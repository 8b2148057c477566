//! Multi-angle mmWave point-cloud gesture recognition.
//!
//! The crate covers the whole pipeline: point-cloud data and synthetic
//! generation, frame binning and resampling, the temporal KNN graph, the
//! edge-convolution encoder, multi-angle fusion heads, training and
//! evaluation protocols, federated averaging, and a discrete-event
//! simulator for sidelink sensing sessions with chirp interference.

pub mod data;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod neuro;
pub mod preprocess;
pub mod rng;
pub mod sim;
pub mod train;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{MotionPointCloud, MultiAngleSample, Point, ANGLES};
pub use error::{Error, ErrorCategory, Result};
pub use fusion::{ClassDistribution, FusionConfig, HeadKind};
pub use graph::{build_temporal_graph, GraphConfig, TemporalGraph};
pub use model::{GestureModel, ModelConfig, PreparedSample};
pub use neuro::{AngleRepresentation, EncoderConfig, ModelParameters};
pub use preprocess::PreprocessConfig;
pub use train::{EvalReport, TrainConfig};
