//! Gaussian splat scenes, rasterization, feature lifting, segment fusion and evaluation.

mod binio;

pub mod augment;
pub mod camera;
pub mod curate;
pub mod error;
pub mod eval;
pub mod field;
pub mod fusion;
pub mod imaging;
pub mod lift;
pub mod ply;
pub mod raster;
pub mod sampling;
pub mod scene;
pub mod spatial;

pub use error::{Error, Result};
pub use field::SemanticFeatureField;
pub use scene::{GaussianPrimitive, GaussianScene, ATTR_DIM};
