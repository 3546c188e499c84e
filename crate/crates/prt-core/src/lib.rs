//! Spherical-harmonic radiance transfer toolkit.
//!
//! The crate bakes SH transfer vectors on mesh and SDF surfaces, trains a
//! small coordinate MLP that regresses transfer continuously over geometry,
//! packs trained weights into fragment-shader source, and renders/validates
//! the result with a deferred CPU pipeline.

pub mod bvh;
pub mod bake;
pub mod envmap;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod marching;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod mlp;
pub mod partition;
pub mod quadrature;
pub mod render;
pub mod scene;
pub mod sdf;
pub mod sh;
pub mod shader;
pub mod surface;
pub mod train;
pub mod triple;
pub mod zonal;

pub use error::{Error, Result};
pub use math::{Aabb, Ray, Vec3};
pub use mesh::TriangleMesh;
pub use sdf::SdfScene;
pub use sh::SHVector;
pub use surface::{Surface, SurfaceSample};
