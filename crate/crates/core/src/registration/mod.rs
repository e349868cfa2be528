//! Pose estimation from matched centroids and depth.
//!
//! Poses are world-from-camera throughout: frame quantities live in the
//! camera frame, map quantities in the world frame, and a pose maps the
//! former onto the latter.

mod horn;
mod icp;
mod prob_ao;
mod ransac;
pub mod surface;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, RigidTransform, Vec3, COVARIANCE_FLOOR};

pub use horn::horn_ao;
pub use icp::{
    centroid_jacobian, depth_centroid_icp, estimate_normals, icp_normal_equations, point_to_plane_jacobian, IcpParams,
    IcpSystem,
};
pub use prob_ao::{probabilistic_ao, probabilistic_ao_with, prob_ao_cost, prob_ao_gradient, residual_jacobian, ProbAoParams};
pub use ransac::{ransac_ao, RansacParams};
pub use surface::SurfaceModel;

/// A frame centroid matched to a map centroid with its covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedPair {
    /// Camera frame.
    pub frame_point: Vec3,
    /// World frame.
    pub map_mean: Vec3,
    pub map_cov: Mat3,
}

impl WeightedPair {
    pub fn new(frame_point: Vec3, map_mean: Vec3, map_cov: Mat3) -> Self {
        WeightedPair {
            frame_point,
            map_mean,
            map_cov,
        }
    }

    /// Pair with identity covariance.
    pub fn isotropic(frame_point: Vec3, map_mean: Vec3) -> Self {
        Self::new(frame_point, map_mean, Mat3::identity())
    }

    /// Residual `map_mean - pose * frame_point`.
    pub fn residual(&self, pose: &RigidTransform) -> Vec3 {
        self.map_mean - pose.transform_point(&self.frame_point)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: RigidTransform,
    /// Indices into the input pairs.
    pub inliers: Vec<usize>,
    pub final_cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set by ICP when the final cost exceeds the initial one.
    #[serde(default)]
    pub diverged: bool,
}

/// Common preconditions of the closed-form and iterative AO solvers.
pub(crate) fn check_pairs(pairs: &[WeightedPair]) -> Result<()> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    for (i, p) in pairs.iter().enumerate() {
        let finite = p.frame_point.iter().chain(p.map_mean.iter()).chain(p.map_cov.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidInput(format!("pair {i} is not finite")));
        }
    }
    Ok(())
}

/// Inverse of a covariance after flooring its eigenvalues, so a slightly
/// under-floored input still yields a usable weight.
pub(crate) fn information(cov: &Mat3) -> Mat3 {
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let inv = eig.eigenvalues.map(|l| 1.0 / l.max(COVARIANCE_FLOOR));
    eig.eigenvectors * Mat3::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
