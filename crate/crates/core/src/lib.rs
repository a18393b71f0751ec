//! Error-driven adaptive splitting for 3D Gaussian splatting.
//!
//! The crate contains a CPU alpha-compositing rasterizer with an analytic
//! backward pass, the three stages of the adaptive split operator (error
//! region partitioning, child initialization and cross-view merging), an
//! adaptive density controller that plugs the operator into training, and a
//! synthetic-scene harness comparing it against fixed-cardinality splitting.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adc;
pub mod child_init;
pub mod cli;
pub mod config;
pub mod error;
pub mod error_partition;
pub mod exec;
pub mod harness;
pub mod merge;
pub mod raster;
pub mod scene;

pub use config::AdpSplitConfig;
pub use error::{Error, Result};
pub use exec::Exec;
pub use scene::{Camera, Gaussian3D, Scene};
