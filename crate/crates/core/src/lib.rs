//! Star-convex 3D instance shapes modelled as closed meshes of cubic Bezier
//! triangles, with the per-voxel loss, sphere fitting, voxelization,
//! suppression and matching metrics built around them.

pub mod bezier;
pub mod error;
pub mod fitting;
pub mod instance;
pub mod lattice;
pub mod lm;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod volume;

pub use error::{Error, Result};

/// 3-vector in `(z, y, x)` component order.
pub type Vec3 = nalgebra::Vector3<f64>;
