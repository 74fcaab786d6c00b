//! Weakly-supervised object detection with self-classification enhancement
//! and correction, trained on a synthetic proposal-feature benchmark.

pub mod boxgeom;
pub mod check;
pub mod error;
pub mod gradcore;
pub mod harness;
pub mod inference;
pub mod midn;
pub mod rcnn;
pub mod sce;

pub use error::{Error, Result};
