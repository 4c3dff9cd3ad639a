//! Superquadric signed-distance safety filter for manipulators.

pub mod bench;
pub mod distance;
pub mod error;
pub mod filter;
pub mod kdtree;
pub mod kinematics;
pub mod lie;
mod optim;
pub mod oracle;
pub mod polytope;
pub mod qp;
pub mod sim;
pub mod smoothing;
pub mod superquadric;
pub mod voxel;
