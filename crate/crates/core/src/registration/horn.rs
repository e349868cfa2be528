use nalgebra::SVD;

use super::{check_pairs, WeightedPair};
use crate::error::{Error, Result};
use crate::geom::{Mat3, RigidTransform, Vec3};

/// Ratio of the second to the first singular value of the centred frame
/// points below which they are treated as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

/// Closed-form least-squares rigid transform taking frame points onto map
/// means, ignoring the covariances.
///
/// Rotation is the orthogonal factor of the cross-covariance with the usual
/// determinant correction; translation follows from the centroids. No scale
/// is estimated.
pub fn horn_ao(pairs: &[WeightedPair]) -> Result<RigidTransform> {
    check_pairs(pairs)?;
    let n = pairs.len() as f64;
    let cf = pairs.iter().map(|p| p.frame_point).sum::<Vec3>() / n;
    let cm = pairs.iter().map(|p| p.map_mean).sum::<Vec3>() / n;

    check_rank(pairs)?;
    let mut cross = Mat3::zeros();
    for p in pairs {
        cross += (p.map_mean - cm) * (p.frame_point - cf).transpose();
    }

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Invariant("SVD did not converge".into())),
    };
    // the singular direction with the smallest value takes the sign flip
    let sv = svd.singular_values;
    let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(2);
    let mut d = Vec3::repeat(1.0);
    d[smallest] = (u * v_t).determinant().signum();
    let rotation = u * Mat3::from_diagonal(&d) * v_t;
    Ok(RigidTransform::new(rotation, cm - rotation * cf))
}

/// Fails with `CollinearPoints` unless the centred frame points span at
/// least a plane.
pub(super) fn check_rank(pairs: &[WeightedPair]) -> Result<()> {
    let n = pairs.len() as f64;
    let cf = pairs.iter().map(|p| p.frame_point).sum::<Vec3>() / n;
    let scatter: Mat3 = pairs
        .iter()
        .map(|p| {
            let a = p.frame_point - cf;
            a * a.transpose()
        })
        .sum();
    // eigenvalues of the scatter are squared singular values of the points
    let mut ev = scatter.symmetric_eigen().eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1].max(0.0).sqrt() <= COLLINEAR_RATIO * ev[0].sqrt() {
        return Err(Error::CollinearPoints);
    }
    Ok(())
}
