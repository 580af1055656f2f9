//! Two-stage neural decoding pipeline: regress voxel-response vectors into
//! image-feature space, then decode those features into natural-language
//! captions with a two-layer LSTM language model. Includes feature-space
//! retrieval, voxel selection, caption metrics, and a synthetic-data
//! harness with planted ground truth.

pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod eval;
pub mod math;
pub mod optim;
pub mod persist;
pub mod pipeline;
pub mod regressors;
pub mod report;
pub mod rng;
