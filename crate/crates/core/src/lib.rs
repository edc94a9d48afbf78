//! Normalizing-flow anomaly detection with synthetic-anomaly contrastive training.
//!
//! The crate is organized bottom-up: [`tensor`] provides a small reverse-mode
//! autodiff tape, [`flow`] builds an invertible flow on it, [`heads`] and
//! [`losses`] add the contrastive objectives, [`synth`] produces synthetic
//! anomalies, [`features`] extracts feature maps, [`eval`] scores and ranks,
//! and [`pipeline`] ties them into training and inference runs.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod heads;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use eval::{auroc, score_map, LabeledScores, ScoreMap};
pub use features::{extract_toy, FeatureMap};
pub use flow::{flow_forward, flow_inverse, init_flow, FlowModel, FlowOutput};
pub use raster::Image;
pub use synth::{cutpaste_plus, ft_saliency};
pub use tensor::{Graph, Tensor, Var};
