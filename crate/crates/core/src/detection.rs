//! Per-frame object detections, the simulated detector and the detection
//! file format.
//!
//! A detection file is UTF-8 JSON lines, one frame per line:
//!
//! ```text
//! {"frame_id":3,"camera_pose_gt":{"r":[..9..],"t":[..3..]},
//!  "objects":[{"label":"mug","centroid":[..],"rotation":[..9..],"extents":[..]}],
//!  "depth_points":[[x,y,z],...]}
//! ```
//!
//! `camera_pose_gt` may be `null`. Unknown fields are ignored on read.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::geom::{exp_so3, mat3_from_row_major, mat3_to_row_major, rot_x, Mat3, OrientedBox, RigidTransform, Vec3};
use crate::rng;
use crate::scene::{self, RenderParams, Scene, Sensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectedObject {
    pub label: Category,
    /// Box in the camera frame.
    pub bbox: OrientedBox,
    /// Detector score. Carried through files, not used by the pipeline.
    pub confidence: f64,
}

impl DetectedObject {
    pub fn centroid(&self) -> Vec3 {
        self.bbox.centroid
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub frame_id: i64,
    /// World-from-camera; evaluation only.
    pub camera_pose_gt: Option<RigidTransform>,
    pub objects: Vec<DetectedObject>,
    /// Depth points in the camera frame.
    pub depth_points: Vec<Vec3>,
}

/// A frame with its ground truth removed, as handed to relocalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct LostFrame {
    pub frame_id: i64,
    pub objects: Vec<DetectedObject>,
    pub depth_points: Vec<Vec3>,
}

impl FrameDetections {
    /// Splits off the ground-truth pose.
    pub fn into_lost(self) -> (LostFrame, Option<RigidTransform>) {
        (
            LostFrame {
                frame_id: self.frame_id,
                objects: self.objects,
                depth_points: self.depth_points,
            },
            self.camera_pose_gt,
        )
    }

    pub fn to_lost(&self) -> LostFrame {
        self.clone().into_lost().0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Centroid noise, metres.
    pub sigma_centroid: f64,
    /// Relative std of the multiplicative extent noise.
    pub sigma_scale: f64,
    /// Orientation jitter, degrees.
    pub sigma_rot: f64,
    pub p_flip: f64,
    /// Centroid displacement of the flipped mode, metres.
    pub flip_offset: f64,
    pub p_false_negative: f64,
    /// Expected spurious detections per frame.
    pub false_positive_rate: f64,
    pub p_label_confusion: f64,
    /// Per-point depth noise along the ray, metres.
    pub sigma_depth: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_centroid: 0.01,
            sigma_scale: 0.05,
            sigma_rot: 5.0,
            p_flip: 0.15,
            flip_offset: 0.05,
            p_false_negative: 0.1,
            false_positive_rate: 0.2,
            p_label_confusion: 0.05,
            sigma_depth: 0.005,
            seed: 0,
        }
    }
}

impl NoiseParams {
    /// Every noise source switched off.
    pub fn zero() -> Self {
        NoiseParams {
            sigma_centroid: 0.0,
            sigma_scale: 0.0,
            sigma_rot: 0.0,
            p_flip: 0.0,
            flip_offset: 0.0,
            p_false_negative: 0.0,
            false_positive_rate: 0.0,
            p_label_confusion: 0.0,
            sigma_depth: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_flip", self.p_flip),
            ("p_false_negative", self.p_false_negative),
            ("p_label_confusion", self.p_label_confusion),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let nonneg = [
            ("sigma_centroid", self.sigma_centroid),
            ("sigma_scale", self.sigma_scale),
            ("sigma_rot", self.sigma_rot),
            ("flip_offset", self.flip_offset),
            ("false_positive_rate", self.false_positive_rate),
            ("sigma_depth", self.sigma_depth),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

// The per-frame stream is split in two so the depth noise never shifts the
// object draws.
const OBJECT_STREAM: u64 = 0x0b1e_c700;
const DEPTH_STREAM: u64 = 0xde97_4000;

/// Simulates detector output for one frame.
///
/// All randomness comes from streams keyed by `(params.seed, frame_id)`.
pub fn simulate_detections(
    scene: &Scene,
    camera_pose: &RigidTransform,
    params: &NoiseParams,
    sensor: &Sensor,
    frame_id: i64,
) -> FrameDetections {
    let mut r = rng::keyed(params.seed, rng::combine(OBJECT_STREAM, frame_id as u64));
    let cam_from_world = camera_pose.inverse();
    let mut objects = Vec::new();

    for obj in &scene.objects {
        let Some(label) = obj.label else { continue };
        let centre_cam = cam_from_world.transform_point(&obj.pose.translation);
        if !sensor.in_frustum(&centre_cam) {
            continue;
        }
        // Draw every variate unconditionally so each object consumes a fixed
        // amount of the stream.
        let drop = r.random::<f64>() < params.p_false_negative;
        let flip = r.random::<f64>() < params.p_flip;
        let confuse = r.random::<f64>() < params.p_label_confusion;
        let other_label = r.random_range(0..5usize);
        let centre_noise = gaussian_vec(&mut r, params.sigma_centroid);
        let axis = random_unit(&mut r);
        let angle = params.sigma_rot * r.sample::<f64, _>(StandardNormal);
        let scale_noise = params.sigma_scale * r.sample::<f64, _>(StandardNormal);
        if drop {
            continue;
        }

        let mut rotation = obj.pose.rotation;
        let mut centroid = obj.pose.translation;
        if flip {
            let x_axis = rotation.column(0).into_owned();
            rotation *= rot_x(180.0);
            centroid += x_axis * params.flip_offset;
        }
        centroid += centre_noise;
        if angle != 0.0 {
            rotation = exp_so3(&(axis * angle.abs().to_radians())) * rotation;
        }
        let extents = obj.extents * (1.0 + scale_noise).max(0.1);
        let label = if confuse {
            let others: Vec<Category> = Category::ALL.iter().copied().filter(|c| *c != label).collect();
            others[other_label]
        } else {
            label
        };
        let world_box = OrientedBox::new_unchecked(centroid, rotation, extents);
        objects.push(DetectedObject {
            label,
            bbox: world_box.transformed(&cam_from_world),
            confidence: 1.0,
        });
    }

    if params.false_positive_rate > 0.0 {
        let n = Poisson::new(params.false_positive_rate)
            .map(|p| p.sample(&mut r) as usize)
            .unwrap_or(0);
        for _ in 0..n {
            objects.push(spurious_detection(&mut r, sensor));
        }
    }

    let render = RenderParams {
        sensor: *sensor,
        sigma_depth: params.sigma_depth,
        seed: params.seed,
    };
    let hits = scene::cast_rays(scene, camera_pose, sensor);
    let depth_points = scene::perturb(
        &hits,
        render.sigma_depth,
        render.seed,
        rng::combine(DEPTH_STREAM, frame_id as u64),
    );

    FrameDetections {
        frame_id,
        camera_pose_gt: Some(*camera_pose),
        objects,
        depth_points,
    }
}

fn gaussian_vec(r: &mut impl Rng, sigma: f64) -> Vec3 {
    let v = Vec3::new(
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
    );
    v * sigma
}

fn random_unit(r: &mut impl Rng) -> Vec3 {
    loop {
        let v = gaussian_vec(r, 1.0);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_rotation(r: &mut impl Rng) -> Mat3 {
    let q = nalgebra::Quaternion::new(
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn spurious_detection(r: &mut impl Rng, sensor: &Sensor) -> DetectedObject {
    let label = Category::ALL[r.random_range(0..Category::ALL.len())];
    let u = r.random_range(0.0..sensor.width as f64);
    let v = r.random_range(0.0..sensor.height as f64);
    let f = sensor.focal();
    let dir = Vec3::new(
        (u - 0.5 * sensor.width as f64) / f,
        (v - 0.5 * sensor.height as f64) / f,
        1.0,
    );
    let max_depth = (sensor.max_range / dir.norm()).min(3.0);
    let depth = r.random_range(0.3..max_depth.max(0.31));
    let extents = Vec3::new(
        r.random_range(0.02..0.08),
        r.random_range(0.02..0.08),
        r.random_range(0.02..0.08),
    );
    let rotation = random_rotation(r);
    DetectedObject {
        label,
        bbox: OrientedBox::new_unchecked(dir * depth, rotation, extents),
        confidence: r.random_range(0.3..0.9),
    }
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    label: String,
    centroid: [f64; 3],
    rotation: [f64; 9],
    extents: [f64; 3],
    #[serde(default = "one", skip_serializing_if = "is_one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame_id: i64,
    camera_pose_gt: Option<RigidTransform>,
    objects: Vec<ObjectRecord>,
    depth_points: Vec<[f64; 3]>,
}

impl From<&FrameDetections> for FrameRecord {
    fn from(f: &FrameDetections) -> Self {
        FrameRecord {
            frame_id: f.frame_id,
            camera_pose_gt: f.camera_pose_gt,
            objects: f
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    label: o.label.name().to_string(),
                    centroid: o.bbox.centroid.into(),
                    rotation: mat3_to_row_major(&o.bbox.orientation),
                    extents: o.bbox.extents.into(),
                    confidence: o.confidence,
                })
                .collect(),
            depth_points: f.depth_points.iter().map(|p| (*p).into()).collect(),
        }
    }
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> std::result::Result<(), String> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(format!("non-finite number in {what}"))
    }
}

impl TryFrom<FrameRecord> for FrameDetections {
    type Error = String;

    fn try_from(rec: FrameRecord) -> std::result::Result<Self, String> {
        if let Some(p) = &rec.camera_pose_gt {
            check_finite(p.rotation.iter().chain(p.translation.iter()).copied(), "camera_pose_gt")?;
        }
        let mut objects = Vec::with_capacity(rec.objects.len());
        for (i, o) in rec.objects.into_iter().enumerate() {
            let label: Category = o.label.parse()?;
            check_finite(
                o.centroid.iter().chain(&o.rotation).chain(&o.extents).copied(),
                &format!("object {i}"),
            )?;
            let bbox = OrientedBox::new(
                Vec3::from(o.centroid),
                mat3_from_row_major(&o.rotation),
                Vec3::from(o.extents),
            )
            .map_err(|e| format!("object {i}: {e}"))?;
            objects.push(DetectedObject {
                label,
                bbox,
                confidence: o.confidence,
            });
        }
        check_finite(rec.depth_points.iter().flatten().copied(), "depth_points")?;
        Ok(FrameDetections {
            frame_id: rec.frame_id,
            camera_pose_gt: rec.camera_pose_gt,
            objects,
            depth_points: rec.depth_points.into_iter().map(Vec3::from).collect(),
        })
    }
}

/// Serializes one frame as a single JSON line (no trailing newline).
pub fn frame_to_json_line(frame: &FrameDetections) -> String {
    serde_json::to_string(&FrameRecord::from(frame)).expect("frame records always serialize")
}

pub fn frame_from_json_line(line: &str) -> std::result::Result<FrameDetections, String> {
    let rec: FrameRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    FrameDetections::try_from(rec)
}

pub fn save_detections(frames: &[FrameDetections], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        writeln!(w, "{}", frame_to_json_line(f)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: &Path) -> Result<Vec<FrameDetections>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = frame_from_json_line(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::Shape;
    use crate::scene::{GroundPlane, SceneObject};

    fn one_object_scene(label: Category) -> Scene {
        Scene {
            objects: vec![SceneObject {
                label: Some(label),
                pose: RigidTransform::new(crate::geom::rot_z(30.0), Vec3::new(0.0, 0.0, 0.02)),
                extents: Vec3::new(0.16, 0.12, 0.012),
                shape: Shape::Box,
            }],
            ground_plane: GroundPlane::default(),
        }
    }

    fn camera() -> RigidTransform {
        scene::look_at(&Vec3::new(0.8, 0.0, 0.6), &Vec3::zeros())
    }

    #[test]
    fn zero_noise_gives_ground_truth_box() {
        let scene = one_object_scene(Category::Laptop);
        let params = NoiseParams::zero();
        let f = simulate_detections(&scene, &camera(), &params, &Sensor::default(), 0);
        assert_eq!(f.objects.len(), 1);
        let o = &f.objects[0];
        assert_eq!(o.label, Category::Laptop);
        let world = o.bbox.transformed(&camera());
        assert!((world.centroid - scene.objects[0].pose.translation).norm() < 1e-9);
        assert!((world.orientation - scene.objects[0].pose.rotation).norm() < 1e-9);
        assert_eq!(o.bbox.extents, scene.objects[0].extents);
    }

    #[test]
    fn total_dropout_leaves_only_false_positives() {
        let scene = one_object_scene(Category::Mug);
        let params = NoiseParams {
            p_false_negative: 1.0,
            false_positive_rate: 2.0,
            ..NoiseParams::zero()
        };
        let mut total = 0;
        for id in 0..200 {
            let f = simulate_detections(&scene, &camera(), &params, &Sensor::default(), id);
            for o in &f.objects {
                // spurious boxes are small and never at the true centroid
                assert!(o.bbox.extents.max() < 0.08 + 1e-12);
            }
            total += f.objects.len();
        }
        assert!(total > 0);
    }

    #[test]
    fn flip_frequency_matches_probability() {
        let scene = one_object_scene(Category::Laptop);
        let params = NoiseParams {
            sigma_centroid: 0.01,
            p_flip: 0.15,
            flip_offset: 0.12,
            seed: 21,
            ..NoiseParams::zero()
        };
        let sensor = Sensor {
            width: 4,
            height: 3,
            ..Sensor::default()
        };
        let truth = scene.objects[0].pose;
        let n = 10_000;
        let mut flips = 0;
        for id in 0..n {
            let f = simulate_detections(&scene, &camera(), &params, &sensor, id);
            let w = f.objects[0].bbox.transformed(&camera());
            // flipped boxes have their z axis reversed
            if w.orientation.column(2).dot(&truth.rotation.column(2)) < 0.0 {
                flips += 1;
            }
        }
        let frac = flips as f64 / n as f64;
        assert!((frac - 0.15).abs() <= 0.01, "flip fraction {frac}");
    }

    #[test]
    fn frames_are_reproducible_in_any_order() {
        let scene = one_object_scene(Category::Camera);
        let params = NoiseParams {
            seed: 5,
            ..NoiseParams::default()
        };
        let s = Sensor::default();
        let a = simulate_detections(&scene, &camera(), &params, &s, 7);
        let _ = simulate_detections(&scene, &camera(), &params, &s, 6);
        let b = simulate_detections(&scene, &camera(), &params, &s, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn serialized_line_for_empty_frame() {
        let f = FrameDetections {
            frame_id: 4,
            camera_pose_gt: None,
            objects: vec![],
            depth_points: vec![Vec3::new(0.0, 0.5, 1.0), Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.25, 0.0, 2.5)],
        };
        let line = frame_to_json_line(&f);
        assert_eq!(
            line,
            r#"{"frame_id":4,"camera_pose_gt":null,"objects":[],"depth_points":[[0.0,0.5,1.0],[1.0,2.0,3.0],[-0.25,0.0,2.5]]}"#
        );
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_detections(&[], &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap().len(), 0);
        assert!(load_detections(&p).unwrap().is_empty());
    }

    #[test]
    fn hand_written_record_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            concat!(
                r#"{"frame_id":12,"camera_pose_gt":{"r":[1,0,0,0,1,0,0,0,1],"t":[0.5,0,0]},"#,
                r#""objects":[{"label":"bowl","centroid":[0.1,0.2,1.5],"rotation":[1,0,0,0,1,0,0,0,1],"extents":[0.08,0.08,0.03]}],"#,
                r#""depth_points":[],"future_field":true}"#,
                "\n"
            ),
        )
        .unwrap();
        let frames = load_detections(&p).unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.frame_id, 12);
        assert_eq!(f.camera_pose_gt.unwrap().translation, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(f.objects.len(), 1);
        assert_eq!(f.objects[0].label, Category::Bowl);
        assert_eq!(f.objects[0].bbox.centroid, Vec3::new(0.1, 0.2, 1.5));
        assert!((f.objects[0].bbox.scale - (8.0f64 * 0.08 * 0.08 * 0.03).cbrt()).abs() < 1e-15);
    }

    #[test]
    fn bad_label_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let good = frame_to_json_line(&FrameDetections {
            frame_id: 0,
            camera_pose_gt: None,
            objects: vec![],
            depth_points: vec![],
        });
        let bad = r#"{"frame_id":1,"camera_pose_gt":null,"objects":[{"label":"chair","centroid":[0,0,1],"rotation":[1,0,0,0,1,0,0,0,1],"extents":[0.1,0.1,0.1]}],"depth_points":[]}"#;
        std::fs::write(&p, format!("{good}\n{bad}\n")).unwrap();
        let err = load_detections(&p).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("chair"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_finite_numbers_are_rejected() {
        let line = r#"{"frame_id":1,"camera_pose_gt":null,"objects":[],"depth_points":[[0,0,null]]}"#;
        assert!(frame_from_json_line(line).is_err());
        let line = r#"{"frame_id":1,"camera_pose_gt":null,"objects":[],"depth_points":[[0,0,1e400]]}"#;
        assert!(frame_from_json_line(line).is_err());
    }
}
