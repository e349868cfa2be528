//! Sparse object map built by sequential fusion of key-frame detections.
//!
//! Each map object keeps one or more box configurations. A detection is
//! associated to a map object by category and box overlap, then routed to a
//! configuration by a chi-squared gate on the Mahalanobis distance of its
//! centroid: no configuration passing starts a new one, exactly one passing
//! updates it, several passing are merged. Objects that are not updated
//! often enough relative to how often they should have been visible are
//! dropped when the map is finalized.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::detection::FrameDetections;
use crate::error::{Error, Result};
use crate::geom::{
    box_iou, mahalanobis_sq, mat3_from_row_major, mat3_to_row_major, regularize_covariance, rotation_mean, GaussianCentroid,
    Mat3, OrientedBox, RigidTransform, Vec3,
};
use crate::scene::Sensor;
use crate::stats::chi2_critical;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// IoU needed to associate a detection with a map configuration.
    pub tau: f64,
    /// Gate on the squared Mahalanobis distance.
    pub chi2_gate: f64,
    /// Fraction of relevant key frames an object must be updated in.
    pub min_update_fraction: f64,
    /// Absolute minimum number of updating key frames.
    pub min_updates: usize,
    /// Std of the isotropic prior covariance used for young configurations (m).
    pub prior_sigma: f64,
    /// Pseudo-count of the prior once the sample covariance takes over.
    pub prior_strength: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            tau: 0.3,
            chi2_gate: chi2_critical(3, 0.001),
            min_update_fraction: 0.25,
            min_updates: 3,
            prior_sigma: 0.02,
            prior_strength: 3.0,
        }
    }
}

impl FusionParams {
    pub fn with_alpha(alpha: f64) -> Self {
        FusionParams {
            chi2_gate: chi2_critical(3, alpha),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if !(self.chi2_gate > 0.0) {
            return Err(Error::InvalidInput("chi2_gate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_update_fraction) {
            return Err(Error::InvalidInput("min_update_fraction must be in [0, 1]".into()));
        }
        if !(self.prior_sigma > 0.0) || !(self.prior_strength >= 0.0) {
            return Err(Error::InvalidInput("prior_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// One box observation assigned to a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSample {
    pub centroid: Vec3,
    pub rotation: Mat3,
    pub extents: Vec3,
}

impl BoxSample {
    pub fn from_box(b: &OrientedBox) -> Self {
        BoxSample {
            centroid: b.centroid,
            rotation: b.orientation,
            extents: b.extents,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    /// Mean box; its centroid is the Gaussian mean.
    pub bbox: OrientedBox,
    pub centroid: GaussianCentroid,
    /// Retained box observations, parallel to `centroid.samples`.
    pub box_samples: Vec<BoxSample>,
}

impl Configuration {
    /// Rebuilds the mean box and Gaussian from `samples`.
    ///
    /// `fallback_rotation` is used when the orientations cancel out (for
    /// example two flipped modes pooled together).
    pub fn from_samples(samples: Vec<BoxSample>, params: &FusionParams, fallback_rotation: Option<Mat3>) -> Self {
        assert!(!samples.is_empty(), "configuration needs at least one sample");
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.centroid).sum::<Vec3>() / n;
        let covariance = if samples.len() < 3 {
            Mat3::identity() * params.prior_sigma.powi(2)
        } else {
            let scatter: Mat3 = samples
                .iter()
                .map(|s| {
                    let d = s.centroid - mean;
                    d * d.transpose()
                })
                .sum();
            let k = params.prior_strength;
            (scatter + Mat3::identity() * (k * params.prior_sigma.powi(2))) / (n - 1.0 + k)
        };
        let rotations: Vec<Mat3> = samples.iter().map(|s| s.rotation).collect();
        let rotation = rotation_mean(&rotations).unwrap_or_else(|_| fallback_rotation.unwrap_or(rotations[0]));
        let extents = samples.iter().map(|s| s.extents).sum::<Vec3>() / n;
        let centroid = GaussianCentroid {
            mean,
            covariance: regularize_covariance(&covariance),
            sample_count: samples.len(),
            samples: samples.iter().map(|s| s.centroid).collect(),
        };
        Configuration {
            bbox: OrientedBox::new_unchecked(mean, rotation, extents),
            centroid,
            box_samples: samples,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.centroid.sample_count
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapObject {
    pub label: Category,
    pub configurations: Vec<Configuration>,
    /// Key-frame index at which the object was created.
    pub created_at: usize,
    /// Number of key frames that updated this object.
    pub update_count: usize,
    /// Number of key frames whose frustum contained the object.
    pub expected_view_count: usize,
}

impl MapObject {
    /// The configuration with the most samples (lowest index on ties).
    pub fn dominant(&self) -> &Configuration {
        let mut best = 0;
        for (k, c) in self.configurations.iter().enumerate() {
            if c.sample_count() > self.configurations[best].sample_count() {
                best = k;
            }
        }
        &self.configurations[best]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    New,
    Update(usize),
    Merge(Vec<usize>),
}

/// Routes a centroid to the configurations of `obj` whose squared
/// Mahalanobis distance is strictly below `chi2_gate`.
pub fn select_or_merge_configurations(obj: &MapObject, centroid: &Vec3, chi2_gate: f64) -> Decision {
    let passing: Vec<usize> = obj
        .configurations
        .iter()
        .enumerate()
        .filter(|(_, c)| mahalanobis_sq(centroid, &c.centroid) < chi2_gate)
        .map(|(k, _)| k)
        .collect();
    match passing.len() {
        0 => Decision::New,
        1 => Decision::Update(passing[0]),
        _ => Decision::Merge(passing),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMap {
    pub objects: Vec<MapObject>,
    pub fusion_params: FusionParams,
    /// Sensor used to decide whether an object should have been visible.
    pub sensor: Sensor,
    /// World-from-camera pose of every integrated key frame.
    pub keyframe_poses: Vec<RigidTransform>,
}

impl ObjectMap {
    pub fn new(fusion_params: FusionParams, sensor: Sensor) -> Self {
        ObjectMap {
            objects: Vec::new(),
            fusion_params,
            sensor,
            keyframe_poses: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Best `(object, configuration)` for a world-frame box of category `label`.
    pub fn associate_detection(&self, label: Category, world_box: &OrientedBox) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (j, obj) in self.objects.iter().enumerate() {
            if obj.label != label {
                continue;
            }
            for (k, cfg) in obj.configurations.iter().enumerate() {
                let iou = box_iou(world_box, &cfg.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some(((j, k), iou));
                }
            }
        }
        best.filter(|(_, iou)| *iou > self.fusion_params.tau).map(|(jk, _)| jk)
    }

    fn new_object(&self, label: Category, sample: BoxSample, keyframe: usize) -> MapObject {
        MapObject {
            label,
            configurations: vec![Configuration::from_samples(vec![sample], &self.fusion_params, None)],
            created_at: keyframe,
            update_count: 1,
            expected_view_count: 0,
        }
    }

    /// Fuses one key frame; `pose` is world-from-camera.
    pub fn integrate_keyframe(&mut self, frame: &FrameDetections, pose: &RigidTransform) {
        let keyframe = self.keyframe_poses.len();
        self.keyframe_poses.push(*pose);
        let initializing = keyframe == 0 && self.objects.is_empty();
        let mut updated: BTreeSet<usize> = BTreeSet::new();

        for det in &frame.objects {
            let world_box = det.bbox.transformed(pose);
            let sample = BoxSample::from_box(&world_box);
            let matched = if initializing {
                None
            } else {
                self.associate_detection(det.label, &world_box)
            };
            let Some((j, _)) = matched else {
                let obj = self.new_object(det.label, sample, keyframe);
                updated.insert(self.objects.len());
                self.objects.push(obj);
                continue;
            };
            updated.insert(j);
            let gate = self.fusion_params.chi2_gate;
            let decision = select_or_merge_configurations(&self.objects[j], &sample.centroid, gate);
            let params = self.fusion_params.clone();
            let obj = &mut self.objects[j];
            match decision {
                Decision::New => {
                    obj.configurations
                        .push(Configuration::from_samples(vec![sample], &params, None));
                }
                Decision::Update(k) => {
                    let cfg = &obj.configurations[k];
                    let mut samples = cfg.box_samples.clone();
                    samples.push(sample);
                    let fallback = Some(cfg.bbox.orientation);
                    obj.configurations[k] = Configuration::from_samples(samples, &params, fallback);
                }
                Decision::Merge(ks) => {
                    let fallback = ks
                        .iter()
                        .map(|&k| &obj.configurations[k])
                        .max_by_key(|c| c.sample_count())
                        .map(|c| c.bbox.orientation);
                    let mut pooled = Vec::new();
                    for &k in &ks {
                        pooled.extend(obj.configurations[k].box_samples.iter().cloned());
                    }
                    pooled.push(sample);
                    let merged = Configuration::from_samples(pooled, &params, fallback);
                    let keep = ks[0];
                    for &k in ks.iter().rev() {
                        if k != keep {
                            obj.configurations.remove(k);
                        }
                    }
                    obj.configurations[keep] = merged;
                }
            }
        }

        for &j in &updated {
            self.objects[j].update_count += 1;
        }
        // objects created in this frame already counted their creating update
        for obj in self.objects.iter_mut().filter(|o| o.created_at == keyframe) {
            obj.update_count = 1;
        }
        let cam_from_world = pose.inverse();
        for obj in &mut self.objects {
            let mean = obj.dominant().centroid.mean;
            if self.sensor.in_frustum(&cam_from_world.transform_point(&mean)) {
                obj.expected_view_count += 1;
            }
        }
    }

    /// Applies the persistence filter.
    ///
    /// When the key-frame poses are known the number of relevant key frames
    /// is recounted over all of them with the final mean centroid, so objects
    /// created late are judged over the whole sequence.
    pub fn finalize_map(&self, total_keyframes: usize) -> ObjectMap {
        let mut out = self.clone();
        let recount = !self.keyframe_poses.is_empty();
        let poses: Vec<RigidTransform> = self.keyframe_poses.iter().map(|p| p.inverse()).collect();
        let p = &self.fusion_params;
        out.objects.retain_mut(|obj| {
            if recount {
                let mean = obj.dominant().centroid.mean;
                obj.expected_view_count = poses
                    .iter()
                    .filter(|cfw| self.sensor.in_frustum(&cfw.transform_point(&mean)))
                    .count();
            }
            let relevant = obj.expected_view_count.min(total_keyframes.max(obj.update_count));
            obj.update_count >= p.min_updates && obj.update_count as f64 >= p.min_update_fraction * relevant as f64
        });
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        })
    }

    pub fn to_json(&self) -> String {
        let file = MapFile::from(self);
        let mut s = serde_json::to_string_pretty(&file).expect("map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: MapFile = serde_path_to_error::deserialize(de).map_err(|e| e.to_string())?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    centroid: [f64; 3],
    rotation: [f64; 9],
    extents: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ConfigurationRecord {
    rotation: [f64; 9],
    extents: [f64; 3],
    mean: [f64; 3],
    covariance: [f64; 9],
    sample_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    samples: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    label: Category,
    configurations: Vec<ConfigurationRecord>,
    #[serde(default)]
    created_at: usize,
    #[serde(default)]
    update_count: usize,
    #[serde(default)]
    expected_view_count: usize,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    fusion_params: FusionParams,
    #[serde(default)]
    sensor: Sensor,
    objects: Vec<ObjectRecord>,
}

impl From<&ObjectMap> for MapFile {
    fn from(m: &ObjectMap) -> Self {
        MapFile {
            fusion_params: m.fusion_params.clone(),
            sensor: m.sensor,
            objects: m
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    label: o.label,
                    configurations: o
                        .configurations
                        .iter()
                        .map(|c| ConfigurationRecord {
                            rotation: mat3_to_row_major(&c.bbox.orientation),
                            extents: c.bbox.extents.into(),
                            mean: c.centroid.mean.into(),
                            covariance: mat3_to_row_major(&c.centroid.covariance),
                            sample_count: c.sample_count(),
                            samples: c
                                .box_samples
                                .iter()
                                .map(|s| SampleRecord {
                                    centroid: s.centroid.into(),
                                    rotation: mat3_to_row_major(&s.rotation),
                                    extents: s.extents.into(),
                                })
                                .collect(),
                        })
                        .collect(),
                    created_at: o.created_at,
                    update_count: o.update_count,
                    expected_view_count: o.expected_view_count,
                })
                .collect(),
        }
    }
}

impl TryFrom<MapFile> for ObjectMap {
    type Error = String;

    fn try_from(f: MapFile) -> std::result::Result<Self, String> {
        f.fusion_params.validate().map_err(|e| e.to_string())?;
        let mut objects = Vec::with_capacity(f.objects.len());
        for (j, o) in f.objects.into_iter().enumerate() {
            if o.configurations.is_empty() {
                return Err(format!("object {j} has no configurations"));
            }
            let mut configurations = Vec::new();
            for (k, c) in o.configurations.into_iter().enumerate() {
                let mean = Vec3::from(c.mean);
                let bbox = OrientedBox::new(mean, mat3_from_row_major(&c.rotation), Vec3::from(c.extents))
                    .map_err(|e| format!("object {j} configuration {k}: {e}"))?;
                let covariance = mat3_from_row_major(&c.covariance);
                if covariance.cholesky().is_none() {
                    return Err(format!("object {j} configuration {k}: covariance is not positive definite"));
                }
                if !c.samples.is_empty() && c.samples.len() != c.sample_count {
                    return Err(format!("object {j} configuration {k}: sample_count does not match samples"));
                }
                let box_samples: Vec<BoxSample> = c
                    .samples
                    .iter()
                    .map(|s| BoxSample {
                        centroid: Vec3::from(s.centroid),
                        rotation: mat3_from_row_major(&s.rotation),
                        extents: Vec3::from(s.extents),
                    })
                    .collect();
                configurations.push(Configuration {
                    bbox,
                    centroid: GaussianCentroid {
                        mean,
                        covariance,
                        sample_count: c.sample_count,
                        samples: box_samples.iter().map(|s| s.centroid).collect(),
                    },
                    box_samples,
                });
            }
            objects.push(MapObject {
                label: o.label,
                configurations,
                created_at: o.created_at,
                update_count: o.update_count,
                expected_view_count: o.expected_view_count,
            });
        }
        Ok(ObjectMap {
            objects,
            fusion_params: f.fusion_params,
            sensor: f.sensor,
            keyframe_poses: Vec::new(),
        })
    }
}
