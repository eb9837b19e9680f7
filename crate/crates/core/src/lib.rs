//! Object-compositional voxel SDF trained by volume rendering, whose
//! per-object opacity channels are clustered into consistent 3D segments
//! from view-inconsistent 2D labels.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod losses;
pub mod metrics;
pub mod mesh;
pub mod optim;
pub mod render;
pub mod sampler;
pub mod simplex;
pub mod synth;
pub mod train;

pub use error::{Category, Error, Result};
