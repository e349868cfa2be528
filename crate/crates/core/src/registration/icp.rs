use nalgebra::{Matrix3x6, RowVector6, SVD};
use serde::{Deserialize, Serialize};

use super::{RegistrationResult, SurfaceModel, WeightedPair};
use crate::error::{Error, Result};
use crate::geom::{skew, Mat3, Mat6, RigidTransform, Vec3, Vec6};
use crate::spatial::KdTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    /// Weight of the point-to-plane depth term.
    pub w1: f64,
    /// Weight of the centroid term.
    pub w2: f64,
    pub iterations: usize,
    /// Correspondence distance gate, annealed linearly over the iterations.
    pub d_max_start: f64,
    pub d_max_end: f64,
    pub max_normal_angle_deg: f64,
    /// Neighbourhood size for frame normals.
    pub normal_neighbours: usize,
    /// Frames are subsampled to at most this many points.
    pub max_points: usize,
    /// Divide each term by its number of residuals.
    pub normalize_terms: bool,
    pub step_tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            w1: 1.0,
            w2: 1.0,
            iterations: 30,
            d_max_start: 0.20,
            d_max_end: 0.05,
            max_normal_angle_deg: 45.0,
            normal_neighbours: 16,
            max_points: 20_000,
            normalize_terms: false,
            step_tolerance: 1e-8,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.w1) || !ok(self.w2) || self.w1 + self.w2 == 0.0 {
            return Err(Error::InvalidInput("w1 and w2 must be >= 0 and not both zero".into()));
        }
        if !(self.d_max_start > 0.0 && self.d_max_end > 0.0) {
            return Err(Error::InvalidInput("correspondence gates must be positive".into()));
        }
        if self.iterations == 0 || self.max_points == 0 || self.normal_neighbours < 3 {
            return Err(Error::InvalidInput(
                "iterations and max_points must be >= 1, normal_neighbours >= 3".into(),
            ));
        }
        Ok(())
    }

    fn gate(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.d_max_end;
        }
        let f = iteration as f64 / (self.iterations - 1) as f64;
        self.d_max_start + (self.d_max_end - self.d_max_start) * f
    }
}

/// Row Jacobian of the point-to-plane residual `n . (p_m - q)` under a left
/// update, where `q` is the transformed frame point.
pub fn point_to_plane_jacobian(q: &Vec3, n: &Vec3) -> RowVector6<f64> {
    let c = q.cross(n);
    RowVector6::new(-c.x, -c.y, -c.z, -n.x, -n.y, -n.z)
}

/// Jacobian of the centroid residual `u_m - q` under a left update.
pub fn centroid_jacobian(q: &Vec3) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(q));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity()));
    j
}

/// Unit normals from PCA over each point's `k` nearest neighbours, oriented
/// toward the camera origin. `None` where the neighbourhood is degenerate.
pub fn estimate_normals(points: &[Vec3], k: usize) -> Vec<Option<Vec3>> {
    let tree = KdTree::new(points);
    let mut normals = vec![None; points.len()];
    for i in tree.order() {
        normals[i] = pca_normal(&tree, points, &points[i], k);
    }
    normals
}

fn pca_normal(tree: &KdTree, points: &[Vec3], p: &Vec3, k: usize) -> Option<Vec3> {
    let nb = tree.knn(p, k);
    if nb.len() < 3 {
        return None;
    }
    let m = nb.len() as f64;
    let mean = nb.iter().map(|n| points[n.index]).sum::<Vec3>() / m;
    let mut cov = Mat3::zeros();
    for n in &nb {
        let d = points[n.index] - mean;
        cov += d * d.transpose();
    }
    let n = plane_normal(&cov)?;
    Some(if n.dot(p) > 0.0 { -n } else { n })
}

/// Unit eigenvector of the smallest eigenvalue of a scatter matrix, in
/// closed form. `None` for line-like or isotropic scatter.
fn plane_normal(cov: &Mat3) -> Option<Vec3> {
    let scale = cov.amax();
    if !(scale > 0.0) {
        return None;
    }
    let a = cov / scale;
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if !(p > 0.0) {
        return None;
    }
    let b = (a - Mat3::identity() * q) / p;
    let phi = (0.5 * b.determinant()).clamp(-1.0, 1.0).acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let middle = 3.0 * q - largest - smallest;
    // a line-like neighbourhood has no defined normal
    if !(middle > 1e-12 * a.trace()) {
        return None;
    }
    let m = a - Mat3::identity() * smallest;
    let (r0, r1, r2) = (m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose());
    let n = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)]
        .into_iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let len = n.norm();
    (len > 0.0).then(|| n / len)
}

/// Frame points in spatially coherent order with their normals.
fn ordered_with_normals(points: &[Vec3], k: usize) -> (Vec<Vec3>, Vec<Option<Vec3>>) {
    let tree = KdTree::new(points);
    tree.order()
        .map(|i| (points[i], pca_normal(&tree, points, &points[i], k)))
        .unzip()
}

/// Linearised system of the combined cost at a fixed pose.
#[derive(Clone, Debug)]
pub struct IcpSystem {
    /// Gauss-Newton matrix `sum w J^T J`.
    pub hessian: Mat6,
    /// `sum w J^T r`; the update solves `hessian * delta = -rhs`.
    pub rhs: Vec6,
    pub cost: f64,
    /// Depth correspondences that passed both gates.
    pub depth_pairs: usize,
}

/// Builds the normal equations at `pose` with correspondence gate `d_max`.
///
/// `frame_normals` must be aligned with `frame_points`; points without a
/// normal are skipped.
pub fn icp_normal_equations(
    frame_points: &[Vec3],
    frame_normals: &[Option<Vec3>],
    surface: &SurfaceModel,
    pairs: &[WeightedPair],
    pose: &RigidTransform,
    d_max: f64,
    params: &IcpParams,
) -> IcpSystem {
    let mut hints = vec![None; frame_points.len()];
    assemble(frame_points, frame_normals, surface, pairs, pose, d_max, params, &mut hints)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    frame_points: &[Vec3],
    frame_normals: &[Option<Vec3>],
    surface: &SurfaceModel,
    pairs: &[WeightedPair],
    pose: &RigidTransform,
    d_max: f64,
    params: &IcpParams,
    hints: &mut [Option<usize>],
) -> IcpSystem {
    let cos_gate = params.max_normal_angle_deg.to_radians().cos();
    let gate2 = d_max * d_max;
    let map_points = surface.points();
    let map_normals = surface.normals();

    let mut h_depth = Mat6::zeros();
    let mut b_depth = Vec6::zeros();
    let mut cost_depth = 0.0;
    let mut count = 0usize;
    if params.w1 > 0.0 {
        // frame points are in tree order, so the previous match is a good
        // start for a point without one of its own
        let mut last = None;
        for ((p, nf), hint) in frame_points.iter().zip(frame_normals).zip(hints.iter_mut()) {
            let Some(nf) = nf else { continue };
            let q = pose.transform_point(p);
            let Some(nb) = surface.nearest_within(&q, gate2, hint.or(last)) else {
                *hint = None;
                continue;
            };
            *hint = Some(nb.index);
            last = *hint;
            let nm = &map_normals[nb.index];
            if (pose.rotation * nf).dot(nm) < cos_gate {
                continue;
            }
            let r = nm.dot(&(map_points[nb.index] - q));
            let j = point_to_plane_jacobian(&q, nm);
            h_depth += j.transpose() * j;
            b_depth += j.transpose() * r;
            cost_depth += r * r;
            count += 1;
        }
    }

    let mut h_cent = Mat6::zeros();
    let mut b_cent = Vec6::zeros();
    let mut cost_cent = 0.0;
    if params.w2 > 0.0 {
        for pair in pairs {
            let q = pose.transform_point(&pair.frame_point);
            let d = pair.map_mean - q;
            let j = centroid_jacobian(&q);
            h_cent += j.transpose() * j;
            b_cent += j.transpose() * d;
            cost_cent += d.norm_squared();
        }
    }

    let (mut w1, mut w2) = (params.w1, params.w2);
    if params.normalize_terms {
        w1 /= count.max(1) as f64;
        w2 /= pairs.len().max(1) as f64;
    }
    IcpSystem {
        hessian: h_depth * w1 + h_cent * w2,
        rhs: b_depth * w1 + b_cent * w2,
        cost: w1 * cost_depth + w2 * cost_cent,
        depth_pairs: count,
    }
}

/// Minimum-norm solution of `h * delta = -rhs`: directions the cost does
/// not constrain get no update.
fn solve_pinv(h: &Mat6, rhs: &Vec6) -> Vec6 {
    let svd = SVD::new(*h, true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Vec6::zeros();
    }
    svd.solve(&(-rhs), 1e-12 * smax).unwrap_or_else(|_| Vec6::zeros())
}

/// Deterministic stride subsample to at most `max` points.
fn subsample(points: &[Vec3], max: usize) -> Vec<Vec3> {
    if points.len() <= max {
        return points.to_vec();
    }
    let n = points.len();
    (0..max).map(|i| points[i * n / max]).collect()
}

/// Refines `init` by point-to-plane ICP on the frame depth points combined
/// with the centroid alignment of the inlier pairs.
pub fn depth_centroid_icp(
    frame_points: &[Vec3],
    surface: &SurfaceModel,
    pairs: &[WeightedPair],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    if surface.is_empty() {
        return Err(Error::EmptyModel);
    }
    if !init.is_valid() {
        return Err(Error::InvalidInput("initial pose is not a valid rigid transform".into()));
    }
    let (points, normals) = ordered_with_normals(&subsample(frame_points, params.max_points), params.normal_neighbours);
    let mut hints = vec![None; points.len()];

    let first = assemble(&points, &normals, surface, pairs, init, params.d_max_start, params, &mut hints);
    let initial = first.cost;
    // the first iteration runs at the same pose and, when annealing, the same gate
    let mut reuse = (params.gate(0) == params.d_max_start).then_some(first);

    let mut pose = *init;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..params.iterations {
        iterations = k + 1;
        let sys = match reuse.take() {
            Some(sys) => sys,
            None => assemble(&points, &normals, surface, pairs, &pose, params.gate(k), params, &mut hints),
        };
        if params.w1 > 0.0 && !points.is_empty() && sys.depth_pairs == 0 {
            return Err(Error::NoCorrespondences(k));
        }
        let delta = solve_pinv(&sys.hessian, &sys.rhs);
        pose = pose.left_update(&delta);
        if delta.norm() < params.step_tolerance {
            converged = true;
            break;
        }
    }

    let final_cost =
        assemble(&points, &normals, surface, pairs, &pose, params.d_max_start, params, &mut hints).cost;
    Ok(RegistrationResult {
        pose,
        inliers: (0..pairs.len()).collect(),
        final_cost,
        converged,
        iterations,
        diverged: final_cost > initial,
    })
}
