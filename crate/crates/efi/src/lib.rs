//! Enhanced forest inventory engine: ground plots plus airborne LiDAR and
//! multispectral imagery in, wall-to-wall per-polygon forest attributes and
//! habitat suitability classes out.

pub mod config;
pub mod error;
pub mod features;
pub mod geodata;
pub mod habitat;
pub mod inference;
pub mod learn;
pub mod pipeline;
pub mod plots;
pub mod segmentation;
pub mod synth;
pub mod util;
