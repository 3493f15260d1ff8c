//! Two-stage skeleton action recognition.
//!
//! Stage 1 models each short skeleton tracklet with a spatial-temporal GCN;
//! stage 2 compresses the per-sequence features with mix pooling and models
//! inter-sequence relations with stacked transformer encoders. Task heads
//! cover video-level, instance-level and group-level recognition, trained
//! separately or jointly with a weighted combined loss.
//!
//! Inputs are built from per-frame detections: key frames at a stride of
//! half the sequence length, greedy IoU linking inside a centered window,
//! and fixed or adaptive sequence counts with zero padding behind masks.

pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod heads;
pub mod infer;
pub mod interaction;
pub mod layout;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod sequencing;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
