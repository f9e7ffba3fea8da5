//! Video summarization with global diverse attention.
//!
//! Frames are scored by an attention network whose weights favor frames
//! unlike the rest of the video, trained with a determinantal point process
//! objective (supervised) or length and repelling terms (unsupervised).
//! Videos are cut into shots by kernel temporal segmentation and key shots
//! are picked by an exact knapsack under a frame budget.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grad;
pub mod kts;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod summary;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use model::{forward, init_params, Dims, Dropout, ForwardTrace, HyperParams, ModelParams};
