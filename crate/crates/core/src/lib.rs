//! Distances, gradients and collision-probability bounds between ellipsoids
//! and Gaussian-mixture surface models.

pub mod distance;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod probability;
pub mod scenes;
pub mod spatial;
pub mod surface_model;

pub use distance::*;
pub use error::{GsmError, Result};
pub use geometry::*;
pub use probability::*;
pub use surface_model::*;
