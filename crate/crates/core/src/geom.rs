//! Rigid transforms, oriented boxes and Gaussian centroids.
//!
//! Everything in here is a small value type over `nalgebra` 3-vectors and
//! 3x3 matrices. The free functions mirror the operations other modules
//! are written against; most are also available as methods.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

/// Smallest eigenvalue allowed in a centroid covariance (m^2).
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Drift from orthonormality above which `compose` re-projects the rotation.
const ORTHO_DRIFT: f64 = 1e-9;

/// Resolution of the IoU lattice along each box axis.
pub const IOU_LATTICE: usize = 32;

pub fn rot_x(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula; `omega` is an axis scaled by the angle in radians.
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-24 {
        return Mat3::identity() + k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + k * a + k * k * b
}

/// Inverse of [`exp_so3`], returning the rotation vector in radians.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if s < 1e-12 {
        if c > 0.0 {
            return 0.5 * w;
        }
        // near pi: recover the axis from the symmetric part
        let b = (r + Mat3::identity()) * 0.5;
        let mut best = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vec3 = b.column(best).into();
        axis /= axis.norm();
        return axis * theta;
    }
    w * (theta / (2.0 * s))
}

/// Nearest proper rotation to `m` in the Frobenius sense.
///
/// Returns `None` when `m` has rank below 2, where the projection is not
/// unique.
pub fn nearest_rotation(m: &Mat3) -> Option<Mat3> {
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut sv = svd.singular_values;
    let order = sorted_desc(&sv);
    let largest = sv[order[0]];
    if !(largest > 0.0) || sv[order[1]] <= 1e-9 * largest {
        return None;
    }
    let d = (u * v_t).determinant().signum();
    sv.fill(1.0);
    sv[order[2]] = d;
    Some(u * Mat3::from_diagonal(&sv) * v_t)
}

fn sorted_desc(v: &Vec3) -> [usize; 3] {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx
}

fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let e = r.transpose() * r - Mat3::identity();
    e.iter().all(|x| x.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

/// An element of SE(3): `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Wire form: row-major rotation and translation.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    r: [f64; 9],
    t: [f64; 3],
}

impl From<PoseRepr> for RigidTransform {
    fn from(p: PoseRepr) -> Self {
        RigidTransform {
            rotation: mat3_from_row_major(&p.r),
            translation: Vec3::from(p.t),
        }
    }
}

impl From<RigidTransform> for PoseRepr {
    fn from(t: RigidTransform) -> Self {
        PoseRepr {
            r: mat3_to_row_major(&t.rotation),
            t: t.translation.into(),
        }
    }
}

pub fn mat3_from_row_major(r: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(r)
}

pub fn mat3_to_row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
    out
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    /// Builds a transform from a rotation vector (radians) and translation.
    pub fn from_params(omega: &Vec3, t: &Vec3) -> Self {
        Self::new(exp_so3(omega), *t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        compose(self, other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Applies a left-multiplicative local update `(omega, v)`:
    /// `R <- exp(omega) R`, `t <- exp(omega) t + v`.
    pub fn left_update(&self, delta: &Vec6) -> Self {
        let omega = Vec3::new(delta[0], delta[1], delta[2]);
        let v = Vec3::new(delta[3], delta[4], delta[5]);
        let dr = exp_so3(&omega);
        let rotation = orthonormalize(&(dr * self.rotation));
        RigidTransform {
            rotation,
            translation: dr * self.translation + v,
        }
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation, 1e-9) && self.translation.iter().all(|x| x.is_finite())
    }
}

fn orthonormalize(r: &Mat3) -> Mat3 {
    if is_rotation(r, ORTHO_DRIFT) {
        *r
    } else {
        nearest_rotation(r).unwrap_or(*r)
    }
}

/// `a * b`: the result applies `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: orthonormalize(&(a.rotation * b.rotation)),
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(p)
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    let c = 0.5 * (r.trace() - 1.0);
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * w.norm();
    // same angle as acos(c) but well conditioned near 0 and 180 degrees
    s.atan2(c).to_degrees().clamp(0.0, 180.0)
}

/// A 3D bounding box with per-axis half-lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedBox {
    pub centroid: Vec3,
    pub orientation: Mat3,
    pub extents: Vec3,
    /// Cube root of the box volume.
    pub scale: f64,
}

impl OrientedBox {
    pub fn new(centroid: Vec3, orientation: Mat3, extents: Vec3) -> Result<Self> {
        if !extents.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidInput(format!("box extents must be positive, got {extents:?}")));
        }
        if !is_rotation(&orientation, 1e-6) {
            return Err(Error::InvalidInput("box orientation is not a proper rotation".into()));
        }
        if !centroid.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("box centroid is not finite".into()));
        }
        Ok(Self::new_unchecked(centroid, orientation, extents))
    }

    pub(crate) fn new_unchecked(centroid: Vec3, orientation: Mat3, extents: Vec3) -> Self {
        let scale = (8.0 * extents.x * extents.y * extents.z).cbrt();
        OrientedBox {
            centroid,
            orientation,
            extents,
            scale,
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.extents.x * self.extents.y * self.extents.z
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.orientation.transpose() * (p - self.centroid);
        local.x.abs() <= self.extents.x && local.y.abs() <= self.extents.y && local.z.abs() <= self.extents.z
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let half = self.orientation.abs() * self.extents;
        (self.centroid - half, self.centroid + half)
    }

    pub fn transformed(&self, t: &RigidTransform) -> OrientedBox {
        OrientedBox {
            centroid: t.transform_point(&self.centroid),
            orientation: t.rotation * self.orientation,
            extents: self.extents,
            scale: self.scale,
        }
    }

    fn order_key(&self) -> [u64; 15] {
        let mut k = [0u64; 15];
        let vals = self
            .centroid
            .iter()
            .chain(self.orientation.iter())
            .chain(self.extents.iter());
        for (slot, v) in k.iter_mut().zip(vals) {
            *slot = v.to_bits();
        }
        k
    }
}

/// Intersection-over-union of two oriented boxes.
///
/// The intersection volume is estimated on a fixed `32^3` midpoint lattice
/// spanning the smaller of the two boxes; the union is then
/// `vol(a) + vol(b) - intersection`. The box that carries the lattice is
/// chosen by a canonical order, so the result is exactly symmetric.
pub fn box_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    for i in 0..3 {
        if amax[i] < bmin[i] || bmax[i] < amin[i] {
            return 0.0;
        }
    }
    let (va, vb) = (a.volume(), b.volume());
    let (lattice, other) = match va.total_cmp(&vb) {
        std::cmp::Ordering::Less => (a, b),
        std::cmp::Ordering::Greater => (b, a),
        std::cmp::Ordering::Equal => {
            if a.order_key() <= b.order_key() {
                (a, b)
            } else {
                (b, a)
            }
        }
    };

    // Express the lattice in the other box's local frame once.
    let rel_rot = other.orientation.transpose() * lattice.orientation;
    let rel_origin = other.orientation.transpose() * (lattice.centroid - other.centroid);
    let n = IOU_LATTICE;
    let step = lattice.extents * (2.0 / n as f64);
    let coord = |axis: usize, i: usize| -lattice.extents[axis] + (i as f64 + 0.5) * step[axis];
    let e = other.extents;
    let mut inside = 0usize;
    for i in 0..n {
        let px = rel_origin + rel_rot.column(0) * coord(0, i);
        for j in 0..n {
            let pxy = px + rel_rot.column(1) * coord(1, j);
            for k in 0..n {
                let p = pxy + rel_rot.column(2) * coord(2, k);
                if p.x.abs() <= e.x && p.y.abs() <= e.y && p.z.abs() <= e.z {
                    inside += 1;
                }
            }
        }
    }
    let inter = lattice.volume() * inside as f64 / (n * n * n) as f64;
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// A normally distributed centroid estimated from retained observations.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCentroid {
    pub mean: Vec3,
    pub covariance: Mat3,
    /// Equals `samples.len()` whenever samples are retained.
    pub sample_count: usize,
    pub samples: Vec<Vec3>,
}

impl GaussianCentroid {
    /// A centroid with an explicit mean and covariance and no samples.
    pub fn with_covariance(mean: Vec3, covariance: Mat3) -> Self {
        GaussianCentroid {
            mean,
            covariance: regularize_covariance(&covariance),
            sample_count: 0,
            samples: Vec::new(),
        }
    }
}

/// Symmetrizes `c` and raises every eigenvalue to at least [`COVARIANCE_FLOOR`].
pub fn regularize_covariance(c: &Mat3) -> Mat3 {
    let sym = (c + c.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().all(|l| *l >= COVARIANCE_FLOOR) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(COVARIANCE_FLOOR));
    let q = eig.eigenvectors;
    let out = q * Mat3::from_diagonal(&clamped) * q.transpose();
    (out + out.transpose()) * 0.5
}

/// `(x - mean)^T cov^-1 (x - mean)`.
pub fn mahalanobis_sq(x: &Vec3, g: &GaussianCentroid) -> f64 {
    mahalanobis_sq_raw(&(x - g.mean), &g.covariance)
}

pub(crate) fn mahalanobis_sq_raw(d: &Vec3, cov: &Mat3) -> f64 {
    match cov.cholesky() {
        Some(ch) => d.dot(&ch.solve(d)).max(0.0),
        None => {
            let inv = regularize_covariance(cov).try_inverse().unwrap_or_else(Mat3::identity);
            d.dot(&(inv * d)).max(0.0)
        }
    }
}

/// Chordal L2 mean of rotations.
pub fn rotation_mean(rotations: &[Mat3]) -> Result<Mat3> {
    if rotations.is_empty() {
        return Err(Error::InvalidInput("rotation_mean of an empty list".into()));
    }
    if rotations.len() == 1 {
        return Ok(rotations[0]);
    }
    let sum: Mat3 = rotations.iter().sum();
    let mean = sum / rotations.len() as f64;
    if is_rotation(&mean, 1e-12) {
        return Ok(mean);
    }
    nearest_rotation(&mean).ok_or(Error::DegenerateRotationMean)
}
