//! Depth-camera driven prediction of 60 GHz received power under pedestrian
//! blockage: scene simulation, channel model, depth rendering, datasets,
//! regressors and evaluation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dataset;
pub mod depthcam;
pub mod ml;
pub mod mobility;
pub mod scene;
pub mod sim;
pub mod eval;
pub mod config;
pub mod pipeline;
