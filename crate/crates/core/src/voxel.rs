//! Voxel coverage and over-approximation of a collision model against a
//! reference geometry.
//!
//! A voxel belongs to a shape set when its center lies inside any member
//! (inside-outside function `<= 0`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::lie::Vec3;
use crate::superquadric::PosedSuperquadric;

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelMetrics {
    /// `|V_R ∩ V_C| / |V_R|`
    pub coverage: f64,
    /// `|V_C \ V_R| / |V_R|`
    pub over_approx: f64,
    pub reference_voxels: usize,
    pub model_voxels: usize,
    pub shared_voxels: usize,
}

pub fn voxel_metrics(
    model: &[PosedSuperquadric],
    reference: &[PosedSuperquadric],
    delta: f64,
) -> Result<VoxelMetrics, GeometryError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(GeometryError::VoxelResolution(delta));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for s in model.iter().chain(reference) {
        let (a, b) = s.aabb();
        lo = lo.inf(&a);
        hi = hi.sup(&b);
    }
    if reference.is_empty() {
        return Err(GeometryError::EmptyReference);
    }
    // Snap the region to the voxel lattice anchored at the origin so results do
    // not depend on the order of the inputs.
    let start = (lo / delta).map(|c| c.floor() as i64 - 1);
    let end = (hi / delta).map(|c| c.ceil() as i64 + 1);
    let dims = (end - start).map(|c| c.max(0) as usize);

    let (reference_voxels, model_voxels, shared_voxels) = (0..dims.z)
        .into_par_iter()
        .map(|k| {
            let mut counts = (0usize, 0usize, 0usize);
            for j in 0..dims.y {
                for i in 0..dims.x {
                    let c = Vec3::new(
                        (start.x + i as i64) as f64 + 0.5,
                        (start.y + j as i64) as f64 + 0.5,
                        (start.z + k as i64) as f64 + 0.5,
                    ) * delta;
                    let in_ref = reference.iter().any(|s| s.contains(&c));
                    let in_model = model.iter().any(|s| s.contains(&c));
                    counts.0 += in_ref as usize;
                    counts.1 += in_model as usize;
                    counts.2 += (in_ref && in_model) as usize;
                }
            }
            counts
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));

    if reference_voxels == 0 {
        return Err(GeometryError::EmptyReference);
    }
    let r = reference_voxels as f64;
    Ok(VoxelMetrics {
        coverage: shared_voxels as f64 / r,
        over_approx: (model_voxels - shared_voxels) as f64 / r,
        reference_voxels,
        model_voxels,
        shared_voxels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Pose;
    use crate::superquadric::Superquadric;

    #[test]
    fn identical_sets_are_exact() {
        let s = PosedSuperquadric::new(
            Superquadric::new(0.05, 0.03, 0.08, 0.4, 1.2).unwrap(),
            Pose::from_parts(Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.3, 0.2, 0.1)),
        );
        let m = voxel_metrics(&[s], &[s], 0.005).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert_eq!(m.over_approx, 0.0);
    }

    #[test]
    fn concentric_spheres_volume_ratio() {
        let small = PosedSuperquadric::new(Superquadric::sphere(0.1).unwrap(), Pose::identity());
        let big = PosedSuperquadric::new(Superquadric::sphere(0.2).unwrap(), Pose::identity());
        let m = voxel_metrics(&[big], &[small], 0.005).unwrap();
        assert_eq!(m.coverage, 1.0);
        assert!(
            (m.over_approx - 7.0).abs() <= 0.05 * 7.0,
            "{}",
            m.over_approx
        );
    }

    #[test]
    fn errors() {
        let s = PosedSuperquadric::new(Superquadric::sphere(0.1).unwrap(), Pose::identity());
        assert!(matches!(
            voxel_metrics(&[s], &[s], 0.0),
            Err(GeometryError::VoxelResolution(_))
        ));
        assert!(matches!(
            voxel_metrics(&[s], &[], 0.01),
            Err(GeometryError::EmptyReference)
        ));
        // A reference much thinner than a voxel can miss every voxel center.
        let sliver = PosedSuperquadric::new(
            Superquadric::new(0.001, 0.001, 0.001, 1.0, 1.0).unwrap(),
            Pose::from_translation(Vec3::new(0.1, 0.1, 0.1)),
        );
        assert!(matches!(
            voxel_metrics(&[s], &[sliver], 0.5),
            Err(GeometryError::EmptyReference)
        ));
    }
}
