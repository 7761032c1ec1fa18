//! Few-shot scene text segmentation.
//!
//! Support images with masks feed two branches: a visual memory bank of
//! masked patch features and a set of learnable foreground/background
//! prompts aligned against prototype prompts and pooled visual features.
//! Query images are scored against both, the maps are refined and fused,
//! and a mask generator with edge support produces the final mask.

pub mod afa;
pub mod artifact;
pub mod backend;
pub mod data;
mod error;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod prompt_space;
pub mod score;
pub mod visual_bank;

pub use error::{Error, Result};
