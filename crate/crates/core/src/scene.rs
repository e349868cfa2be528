//! Synthetic desktop scenes, camera trajectories and depth rendering.
//!
//! Objects are boxes and upright cylinders resting on a finite ground
//! plane. Cameras use the usual pinhole convention: x right, y down,
//! z forward. Poses are world-from-camera.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::category::{Category, Shape};
use crate::error::{Error, Result};
use crate::geom::{Mat3, OrientedBox, RigidTransform, Vec3};
use crate::registration::SurfaceModel;
use crate::rng;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// `None` marks clutter of unknown category that the detector never reports.
    pub label: Option<Category>,
    pub pose: RigidTransform,
    /// Half-lengths; for cylinders `x` is the radius and `z` the half-height.
    pub extents: Vec3,
    pub shape: Shape,
}

impl SceneObject {
    pub fn bounding_box(&self) -> OrientedBox {
        OrientedBox::new_unchecked(self.pose.translation, self.pose.rotation, self.extents)
    }

    fn footprint_radius(&self) -> f64 {
        match self.shape {
            Shape::Box => self.extents.x.hypot(self.extents.y),
            Shape::Cylinder => self.extents.x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub height: f64,
    /// Half side length of the square table top; infinite is allowed.
    pub half_extent: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        GroundPlane {
            height: 0.0,
            half_extent: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub ground_plane: GroundPlane,
}

impl Scene {
    /// Objects with a known category, in scene order.
    pub fn labelled(&self) -> impl Iterator<Item = (usize, &SceneObject)> {
        self.objects.iter().enumerate().filter(|(_, o)| o.label.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtentRange {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterSpec {
    pub count: usize,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        ClutterSpec {
            count: 0,
            min_height: 0.12,
            max_height: 0.18,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub object_count: usize,
    /// Categories drawn in shuffled round-robin order.
    pub label_mix: Vec<Category>,
    /// Per-category overrides of the default extent ranges.
    pub extents: BTreeMap<Category, ExtentRange>,
    pub plane: GroundPlane,
    pub clutter: ClutterSpec,
    /// Objects are placed inside this radius around the origin.
    pub placement_radius: f64,
    /// Extra horizontal gap between object footprints.
    pub min_gap: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            object_count: 5,
            label_mix: Category::ALL.to_vec(),
            extents: BTreeMap::new(),
            plane: GroundPlane::default(),
            clutter: ClutterSpec::default(),
            placement_radius: 0.4,
            min_gap: 0.03,
        }
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.label_mix.is_empty() && spec.object_count > 0 {
        return Err(Error::InvalidInput("label_mix is empty".into()));
    }
    let mut rng = rng::keyed(spec.seed, 0x5ce_e000);
    let mut labels: Vec<Category> = Vec::with_capacity(spec.object_count);
    while labels.len() < spec.object_count {
        let mut round = spec.label_mix.clone();
        for i in (1..round.len()).rev() {
            round.swap(i, rng.random_range(0..=i));
        }
        labels.extend(round);
    }
    labels.truncate(spec.object_count);

    let mut objects: Vec<SceneObject> = Vec::new();
    let plane_z = spec.plane.height;
    let total = spec.object_count + spec.clutter.count;
    for index in 0..total {
        let (label, shape, extents) = if let Some(&label) = labels.get(index) {
            let (lo, hi) = match spec.extents.get(&label) {
                Some(r) => (Vec3::from(r.min), Vec3::from(r.max)),
                None => label.default_extents(),
            };
            let mut e = Vec3::from_fn(|i, _| uniform(&mut rng, lo[i], hi[i]));
            if label.shape() == Shape::Cylinder {
                e.y = e.x;
            }
            (Some(label), label.shape(), e)
        } else {
            let c = &spec.clutter;
            let e = Vec3::new(
                uniform(&mut rng, 0.03, 0.05),
                uniform(&mut rng, 0.03, 0.05),
                uniform(&mut rng, c.min_height, c.max_height),
            );
            (None, Shape::Box, e)
        };
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let r = spec.placement_radius * rng.random::<f64>().sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let yaw = rng.random::<f64>() * 360.0;
            let centre = Vec3::new(r * phi.cos(), r * phi.sin(), plane_z + extents.z);
            let candidate = SceneObject {
                label,
                pose: RigidTransform::new(crate::geom::rot_z(yaw), centre),
                extents,
                shape,
            };
            let clear = objects.iter().all(|o| {
                let d = (o.pose.translation - centre).xy().norm();
                d >= o.footprint_radius() + candidate.footprint_radius() + spec.min_gap
            });
            if clear {
                objects.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailure {
                index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(Scene {
        objects,
        ground_plane: spec.plane,
    })
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    OrbitHorizontal,
    ArcVertical,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub radius: f64,
    /// Camera height for orbits (absolute, metres).
    pub height: f64,
    /// Swept angle in degrees; frames are spaced `angle_range / frame_count` apart.
    pub angle_range: f64,
    pub frame_count: usize,
    pub lookat: [f64; 3],
    /// First azimuth (orbit) or elevation (arc), degrees.
    pub start_angle: f64,
    /// Fixed azimuth of a vertical arc, degrees.
    pub azimuth: f64,
    /// Explicit poses for `replay`.
    pub poses: Vec<RigidTransform>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::OrbitHorizontal,
            radius: 1.0,
            height: 0.8,
            angle_range: 90.0,
            frame_count: 200,
            lookat: [0.0, 0.0, 0.05],
            start_angle: 0.0,
            azimuth: 0.0,
            poses: Vec::new(),
        }
    }
}

/// World-from-camera pose at `eye` looking at `target`, with world +z as up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> RigidTransform {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&Vec3::z());
    if right.norm() < 1e-9 {
        right = forward.cross(&Vec3::y());
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    RigidTransform::new(Mat3::from_columns(&[right, down, forward]), *eye)
}

pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<RigidTransform>> {
    if spec.kind == TrajectoryKind::Replay {
        return Ok(spec.poses.clone());
    }
    if spec.frame_count == 0 {
        return Err(Error::InvalidInput("trajectory frame_count must be >= 1".into()));
    }
    if !(spec.radius > 0.0) {
        return Err(Error::InvalidInput("trajectory radius must be positive".into()));
    }
    let target = Vec3::from(spec.lookat);
    let step = spec.angle_range / spec.frame_count as f64;
    let poses = (0..spec.frame_count)
        .map(|i| {
            let angle = (spec.start_angle + step * i as f64).to_radians();
            let eye = match spec.kind {
                TrajectoryKind::OrbitHorizontal => Vec3::new(
                    target.x + spec.radius * angle.cos(),
                    target.y + spec.radius * angle.sin(),
                    spec.height,
                ),
                _ => {
                    let az = spec.azimuth.to_radians();
                    target
                        + spec.radius * Vec3::new(angle.cos() * az.cos(), angle.cos() * az.sin(), angle.sin())
                }
            };
            look_at(&eye, &target)
        })
        .collect();
    Ok(poses)
}

/// Pinhole sensor; `fov_deg` is horizontal, pixels are square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensor {
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor {
            fov_deg: 90.0,
            width: 160,
            height: 120,
            max_range: 5.0,
        }
    }
}

impl Sensor {
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let f = self.focal();
        Some((
            f * p.x / p.z + 0.5 * self.width as f64,
            f * p.y / p.z + 0.5 * self.height as f64,
        ))
    }

    /// True when a camera-frame point projects inside the image and lies within range.
    pub fn in_frustum(&self, p: &Vec3) -> bool {
        match self.project(p) {
            Some((u, v)) => {
                u >= 0.0
                    && v >= 0.0
                    && u < self.width as f64
                    && v < self.height as f64
                    && p.norm() <= self.max_range
            }
            None => false,
        }
    }

    /// Camera-frame ray direction (z = 1) through the centre of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> Vec3 {
        let f = self.focal();
        Vec3::new(
            (u as f64 + 0.5 - 0.5 * self.width as f64) / f,
            (v as f64 + 0.5 - 0.5 * self.height as f64) / f,
            1.0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    #[serde(flatten)]
    pub sensor: Sensor,
    pub sigma_depth: f64,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            sensor: Sensor::default(),
            sigma_depth: 0.005,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Plane,
    Object(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    /// Camera-frame point on the primitive (noise free).
    pub point: Vec3,
    /// Unit ray direction in the camera frame.
    pub direction: Vec3,
    /// World-frame unit normal facing the camera.
    pub normal: Vec3,
    pub primitive: Primitive,
}

struct LocalRay {
    origin: Vec3,
    dir: Vec3,
}

fn intersect_box(ray: &LocalRay, e: &Vec3) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis_near = 0;
    for a in 0..3 {
        if ray.dir[a].abs() < 1e-300 {
            if ray.origin[a].abs() > e[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / ray.dir[a];
        let mut t0 = (-e[a] - ray.origin[a]) * inv;
        let mut t1 = (e[a] - ray.origin[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis_near = a;
        }
        t_far = t_far.min(t1);
    }
    if t_near > t_far || t_near <= HIT_EPS {
        return None;
    }
    let mut n = Vec3::zeros();
    n[axis_near] = -ray.dir[axis_near].signum();
    Some((t_near, n))
}

fn intersect_cylinder(ray: &LocalRay, e: &Vec3) -> Option<(f64, Vec3)> {
    let (r, h) = (e.x, e.z);
    let mut best: Option<(f64, Vec3)> = None;
    let mut take = |t: f64, n: Vec3| {
        if t > HIT_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let (o, d) = (&ray.origin, &ray.dir);
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-300 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let z = o.z + t * d.z;
                if z.abs() <= h {
                    let p = o + d * t;
                    take(t, Vec3::new(p.x, p.y, 0.0) / r);
                }
            }
        }
    }
    if d.z.abs() > 1e-300 {
        for cap in [h, -h] {
            let t = (cap - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                take(t, Vec3::new(0.0, 0.0, cap.signum()));
            }
        }
    }
    best
}

/// Casts one ray per pixel and returns the nearest hit within range.
pub fn cast_rays(scene: &Scene, pose: &RigidTransform, sensor: &Sensor) -> Vec<Hit> {
    let prepared: Vec<(Mat3, Vec3, &SceneObject)> = scene
        .objects
        .iter()
        .map(|o| (o.pose.rotation.transpose(), o.pose.translation, o))
        .collect();
    let origin = pose.translation;
    let plane = scene.ground_plane;
    let mut hits = Vec::new();
    for v in 0..sensor.height {
        for u in 0..sensor.width {
            let d_cam = sensor.ray(u, v);
            let d_world = pose.rotation * d_cam;
            // ray parameter t scales d_cam, so the camera-frame point is t * d_cam
            let mut best: Option<(f64, Vec3, Primitive)> = None;
            if d_world.z.abs() > 0.0 {
                let t = (plane.height - origin.z) / d_world.z;
                if t > HIT_EPS {
                    let p = origin + d_world * t;
                    if p.x.abs() <= plane.half_extent && p.y.abs() <= plane.half_extent {
                        let n = Vec3::new(0.0, 0.0, if origin.z >= plane.height { 1.0 } else { -1.0 });
                        best = Some((t, n, Primitive::Plane));
                    }
                }
            }
            for (i, (rt, c, obj)) in prepared.iter().enumerate() {
                let local = LocalRay {
                    origin: rt * (origin - c),
                    dir: rt * d_world,
                };
                let hit = match obj.shape {
                    Shape::Box => intersect_box(&local, &obj.extents),
                    Shape::Cylinder => intersect_cylinder(&local, &obj.extents),
                };
                if let Some((t, n_local)) = hit {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, obj.pose.rotation * n_local, Primitive::Object(i)));
                    }
                }
            }
            if let Some((t, normal, primitive)) = best {
                let point = d_cam * t;
                if point.norm() <= sensor.max_range {
                    hits.push(Hit {
                        point,
                        direction: d_cam.normalize(),
                        normal,
                        primitive,
                    });
                }
            }
        }
    }
    hits
}

/// Rendered depth points in the camera frame, perturbed along each ray.
pub fn render_depth_points(scene: &Scene, pose: &RigidTransform, params: &RenderParams) -> Vec<Vec3> {
    let hits = cast_rays(scene, pose, &params.sensor);
    perturb(&hits, params.sigma_depth, params.seed, rng::pose_key(pose))
}

pub(crate) fn perturb(hits: &[Hit], sigma: f64, seed: u64, stream: u64) -> Vec<Vec3> {
    if sigma <= 0.0 {
        return hits.iter().map(|h| h.point).collect();
    }
    let mut rng = rng::keyed(seed, stream);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    hits.iter().map(|h| h.point + h.direction * normal.sample(&mut rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceParams {
    #[serde(flatten)]
    pub render: RenderParams,
    pub voxel_size: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            render: RenderParams {
                sigma_depth: 0.0,
                ..RenderParams::default()
            },
            voxel_size: 0.01,
        }
    }
}

/// Accumulates renders from `poses` into a voxel-downsampled world model
/// with analytic normals. The first point to land in a voxel is kept.
pub fn build_surface_model(scene: &Scene, poses: &[RigidTransform], params: &SurfaceParams) -> Result<SurfaceModel> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("surface model needs at least one pose".into()));
    }
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for pose in poses {
        let hits = cast_rays(scene, pose, &params.render.sensor);
        let noisy = perturb(&hits, params.render.sigma_depth, params.render.seed, rng::pose_key(pose));
        for (hit, p_cam) in hits.iter().zip(noisy) {
            let p = pose.transform_point(&p_cam);
            let key = voxel_key(&p, params.voxel_size);
            if seen.insert(key) {
                points.push(p);
                normals.push(hit.normal);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyModel);
    }
    SurfaceModel::new(points, normals)
}

pub fn voxel_key(p: &Vec3, size: f64) -> [i64; 3] {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// Distance from a world point to the nearest primitive surface.
pub fn distance_to_scene(scene: &Scene, p: &Vec3) -> f64 {
    let gp = &scene.ground_plane;
    let mut best = {
        let dz = (p.z - gp.height).abs();
        let ox = (p.x.abs() - gp.half_extent).max(0.0);
        let oy = (p.y.abs() - gp.half_extent).max(0.0);
        (dz * dz + ox * ox + oy * oy).sqrt()
    };
    for o in &scene.objects {
        let l = o.pose.rotation.transpose() * (p - o.pose.translation);
        let d = match o.shape {
            Shape::Box => box_surface_distance(&l, &o.extents),
            Shape::Cylinder => {
                let radial = l.xy().norm() - o.extents.x;
                let axial = l.z.abs() - o.extents.z;
                if radial <= 0.0 && axial <= 0.0 {
                    -radial.max(axial)
                } else {
                    radial.max(0.0).hypot(axial.max(0.0))
                }
            }
        };
        best = best.min(d);
    }
    best
}

fn box_surface_distance(l: &Vec3, e: &Vec3) -> f64 {
    let q = l.abs() - e;
    let outside = q.map(|x| x.max(0.0)).norm();
    let inside = q.max().min(0.0);
    if outside > 0.0 {
        outside
    } else {
        -inside
    }
}
