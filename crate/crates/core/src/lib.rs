//! Grid-anchor detection numerics for spatio-temporal action detection:
//! box geometry, label assignment, the composite detection loss with
//! analytic gradients, decoding and NMS, frame and video mAP, and a
//! synthetic moving-box dataset to train a toy detector on.

pub mod assignment;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod postprocess;

pub use error::{Error, Result};

/// Version stamped into every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
