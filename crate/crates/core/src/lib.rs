//! Water-table depth forecasting from weekly gridded weather.
//!
//! Two many-to-one models share a time-distributed CNN encoder (TDC) that turns
//! each weather frame into a 27-dimensional row (16 pooled conv features plus an
//! 11-dimensional month encoding):
//!
//! * `TDC-LSTM`: bottleneck, spatial dropout, a 32-unit LSTM and a small dense head.
//! * `TDC-UnPWaveNet`: bottleneck, spatial dropout and five unpadded dilated
//!   convolution layers whose skip outputs are resized by channel-distributed
//!   layers before a final 1x1 convolution.
//!
//! The crate also carries the data plumbing (grid stacks, target series,
//! synthetic cases), preprocessing with leakage-free splits, training with
//! Nesterov SGD and ensembles, and hydrological skill metrics.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod seqmods;
pub mod tdc;
pub mod training;

pub use error::{Error, Result};
pub use seqmods::{build_model, count_parameters, Model, ModelConfig, ModelKind};
