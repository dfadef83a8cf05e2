//! Quality control for crowdsourced image segmentation from annotation
//! clickstreams.
//!
//! Workers trace object outlines in a web tool that records every mouse
//! event. From the recorded clickstream alone, this crate estimates how good
//! each outline is, fuses several outlines into one, and models what the
//! whole campaign costs.
//!
//! Main entry points:
//! - [`clickstream`]: wire format, stroke segmentation, draw/correction split
//! - [`geometry`]: polygons, rasterization, Dice coefficient, normals
//! - [`imaging`]: Gaussian-derivative image gradients
//! - [`features`]: the fixed-layout per-session feature vector
//! - [`regressor`]: random forest, grouped cross-validation, feature selection
//! - [`fusion`]: majority voting variants and STAPLE
//! - [`cost`]: campaign cost equations and break-even
//! - [`simulator`]: synthetic scenes and worker behaviour
//! - [`pipeline`]: dataset directories and end-to-end commands

pub mod clickstream;
pub mod cost;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod imaging;
pub mod kdtree;
pub mod pgm;
pub mod pipeline;
pub mod regressor;
pub mod simulator;
