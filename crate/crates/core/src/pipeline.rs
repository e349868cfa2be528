//! End-to-end orchestration: map construction from key frames, single-frame
//! relocalisation, evaluation against ground truth and the benchmark driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{match_objects, MatchOutcome};
use crate::detection::{simulate_detections, FrameDetections, LostFrame, NoiseParams};
use crate::error::{Error, Result};
use crate::geom::{rotation_angle_between, RigidTransform};
use crate::object_map::{FusionParams, ObjectMap};
use crate::registration::{depth_centroid_icp, ransac_ao, IcpParams, RansacParams, SurfaceModel};
use crate::rng;
use crate::scene::{
    build_surface_model, generate_scene, generate_trajectory, RenderParams, Scene, SceneSpec, Sensor, SurfaceParams,
    TrajectoryKind, TrajectorySpec,
};
use crate::stats::chi2_critical;

/// Fewest matched objects that determine a pose.
pub const MIN_OBJECTS: usize = 3;

/// Success thresholds reported for every benchmark.
pub const REPORT_THRESHOLDS: [Threshold; 3] = [
    Threshold { trans_m: 0.05, rot_deg: 5.0 },
    Threshold { trans_m: 0.10, rot_deg: 10.0 },
    Threshold { trans_m: 0.15, rot_deg: 15.0 },
];

/// Frame ids of relocalisation segment `s` start at `RS_ID_BASE * (s + 1)`.
pub const RS_ID_BASE: i64 = 100_000;

// ---------------------------------------------------------------------------
// Map construction

/// Fuses key frames into an object map and renders the matching dense
/// surface from the same poses.
///
/// Every frame must carry its pose; the map is finalized before returning.
pub fn build_map(
    keyframes: &[FrameDetections],
    scene: &Scene,
    fusion: &FusionParams,
    sensor: &Sensor,
    voxel_size: f64,
) -> Result<(ObjectMap, SurfaceModel)> {
    fusion.validate()?;
    let mut map = ObjectMap::new(fusion.clone(), *sensor);
    let mut poses = Vec::with_capacity(keyframes.len());
    for frame in keyframes {
        let pose = frame.camera_pose_gt.ok_or(Error::MissingGroundTruth(frame.frame_id))?;
        map.integrate_keyframe(frame, &pose);
        poses.push(pose);
    }
    let map = map.finalize_map(keyframes.len());
    let params = SurfaceParams {
        render: RenderParams {
            sensor: *sensor,
            sigma_depth: 0.0,
            seed: 0,
        },
        voxel_size,
    };
    let surface = build_surface_model(scene, &poses, &params)?;
    Ok((map, surface))
}

// ---------------------------------------------------------------------------
// Relocalisation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelocParams {
    /// Length scale of the pairwise distance term in the matcher, metres.
    pub decay: f64,
    pub ransac: RansacParams,
    pub icp: IcpParams,
    /// Skip ICP and report the AO pose as final.
    pub ablate_icp: bool,
}

impl Default for RelocParams {
    fn default() -> Self {
        RelocParams {
            decay: 1.0,
            ransac: RansacParams::default(),
            icp: IcpParams::default(),
            ablate_icp: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    TooFewObjects,
    NoConsensus,
    NoCorrespondences,
    CollinearPoints,
    NonDecreasingCost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelocStatus {
    Success,
    Failed(FailureReason),
}

impl RelocStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, RelocStatus::Success)
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub detect_ms: f64,
    pub match_ms: f64,
    pub ao_ms: f64,
    pub icp_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelocResult {
    pub frame_id: i64,
    pub status: RelocStatus,
    pub pose_ao: Option<RigidTransform>,
    pub pose_final: Option<RigidTransform>,
    pub correspondences_used: usize,
    pub inlier_count: usize,
    /// ICP raised its cost; the AO pose was kept.
    pub icp_diverged: bool,
    pub timing: StageTiming,
}

fn failure(err: &Error) -> Result<FailureReason> {
    Ok(match err {
        Error::TooFewPairs(_) => FailureReason::TooFewObjects,
        Error::NoConsensus => FailureReason::NoConsensus,
        Error::NoCorrespondences(_) => FailureReason::NoCorrespondences,
        Error::CollinearPoints => FailureReason::CollinearPoints,
        Error::NonDecreasingCost => FailureReason::NonDecreasingCost,
        other => return Err(Error::Invariant(format!("unexpected relocalisation error: {other}"))),
    })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Relocalises one lost frame against a finalized map.
///
/// A frame that cannot be relocalised is a `Failed` result, not an error;
/// errors signal bad parameters or broken invariants.
pub fn relocalise(frame: &LostFrame, map: &ObjectMap, surface: &SurfaceModel, params: &RelocParams) -> Result<RelocResult> {
    relocalise_traced(frame, map, surface, params).map(|(r, _)| r)
}

/// As [`relocalise`], also returning the matcher internals.
pub fn relocalise_traced(
    frame: &LostFrame,
    map: &ObjectMap,
    surface: &SurfaceModel,
    params: &RelocParams,
) -> Result<(RelocResult, MatchOutcome)> {
    let mut result = RelocResult {
        frame_id: frame.frame_id,
        status: RelocStatus::Failed(FailureReason::TooFewObjects),
        pose_ao: None,
        pose_final: None,
        correspondences_used: 0,
        inlier_count: 0,
        icp_diverged: false,
        timing: StageTiming::default(),
    };

    let t = Instant::now();
    let matched = match_objects(&frame.objects, map, params.decay);
    result.timing.match_ms = ms(t);
    result.correspondences_used = matched.selected.len();
    if matched.selected.len() < MIN_OBJECTS {
        return Ok((result, matched));
    }

    let t = Instant::now();
    let pairs = matched.selected.weighted_pairs();
    let mut ransac = params.ransac.clone();
    ransac.seed = rng::combine(ransac.seed, frame.frame_id as u64);
    let ao = ransac_ao(&pairs, &ransac);
    result.timing.ao_ms = ms(t);
    let ao = match ao {
        Ok(r) => r,
        Err(e) => {
            result.status = RelocStatus::Failed(failure(&e)?);
            return Ok((result, matched));
        }
    };
    result.inlier_count = ao.inliers.len();
    result.pose_ao = Some(ao.pose);

    if params.ablate_icp {
        result.pose_final = Some(ao.pose);
        result.status = RelocStatus::Success;
        return Ok((result, matched));
    }

    let t = Instant::now();
    let inlier_pairs: Vec<_> = ao.inliers.iter().map(|&i| pairs[i]).collect();
    let icp = depth_centroid_icp(&frame.depth_points, surface, &inlier_pairs, &ao.pose, &params.icp);
    result.timing.icp_ms = ms(t);
    match icp {
        Ok(r) if r.diverged => {
            result.icp_diverged = true;
            result.pose_final = Some(ao.pose);
            result.status = RelocStatus::Success;
        }
        Ok(r) => {
            result.pose_final = Some(r.pose);
            result.status = RelocStatus::Success;
        }
        Err(e) => result.status = RelocStatus::Failed(failure(&e)?),
    }
    Ok((result, matched))
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub trans_m: f64,
    pub rot_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub trans_m: f64,
    pub rot_deg: f64,
    pub rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseChoice {
    Final,
    Ao,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame_id: i64,
    pub status: RelocStatus,
    pub trans_error_m: Option<f64>,
    pub rot_error_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_frame: Vec<FrameError>,
    pub success_rate_at: Vec<Rate>,
}

/// `(translation error, rotation error in degrees)` of `est` against `gt`.
pub fn pose_error(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    (
        (est.translation - gt.translation).norm(),
        rotation_angle_between(&est.rotation, &gt.rotation),
    )
}

/// A frame succeeds at a threshold when it relocalised and both errors are
/// strictly below it.
pub fn evaluate(
    results: &[RelocResult],
    gt: &BTreeMap<i64, RigidTransform>,
    thresholds: &[Threshold],
    choice: PoseChoice,
) -> Result<Evaluation> {
    let mut per_frame = Vec::with_capacity(results.len());
    for r in results {
        let truth = gt.get(&r.frame_id).ok_or(Error::MissingGroundTruth(r.frame_id))?;
        let pose = match choice {
            PoseChoice::Final => r.pose_final,
            PoseChoice::Ao => r.pose_ao,
        };
        let err = pose.map(|p| pose_error(&p, truth));
        per_frame.push(FrameError {
            frame_id: r.frame_id,
            status: r.status,
            trans_error_m: err.map(|e| e.0),
            rot_error_deg: err.map(|e| e.1),
        });
    }
    let success_rate_at = rates(&per_frame, thresholds);
    Ok(Evaluation {
        per_frame,
        success_rate_at,
    })
}

fn rates(frames: &[FrameError], thresholds: &[Threshold]) -> Vec<Rate> {
    thresholds
        .iter()
        .map(|th| {
            let hits = frames
                .iter()
                .filter(|f| {
                    f.status.is_success()
                        && matches!((f.trans_error_m, f.rot_error_deg), (Some(t), Some(r)) if t < th.trans_m && r < th.rot_deg)
                })
                .count();
            Rate {
                trans_m: th.trans_m,
                rot_deg: th.rot_deg,
                rate: if frames.is_empty() { 0.0 } else { hits as f64 / frames.len() as f64 },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Benchmark configuration

/// A relocalisation segment: a short horizontal arc whose centre is
/// `view_change_deg` of azimuth away from the centre of the map
/// construction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsSegment {
    pub view_change_deg: f64,
    pub frame_count: usize,
    /// Azimuth spanned by the segment, degrees.
    pub arc_deg: f64,
    /// Defaults to the map construction radius and height.
    pub radius: Option<f64>,
    pub height: Option<f64>,
    /// Explicit trajectory; overrides every field above except `frame_count`
    /// when it is `replay`, and all of them otherwise.
    pub trajectory: Option<TrajectorySpec>,
}

impl Default for RsSegment {
    fn default() -> Self {
        RsSegment {
            view_change_deg: 30.0,
            frame_count: 34,
            arc_deg: 10.0,
            radius: None,
            height: None,
            trajectory: None,
        }
    }
}

impl RsSegment {
    pub fn trajectory(&self, mcs: &TrajectorySpec) -> TrajectorySpec {
        if let Some(t) = &self.trajectory {
            return t.clone();
        }
        let centre = mcs.start_angle + 0.5 * mcs.angle_range + self.view_change_deg;
        TrajectorySpec {
            kind: TrajectoryKind::OrbitHorizontal,
            radius: self.radius.unwrap_or(mcs.radius),
            height: self.height.unwrap_or(mcs.height),
            angle_range: self.arc_deg,
            frame_count: self.frame_count,
            lookat: mcs.lookat,
            start_angle: centre - 0.5 * self.arc_deg,
            azimuth: 0.0,
            poses: Vec::new(),
        }
    }
}

fn default_segments() -> Vec<RsSegment> {
    [(30.0, 34), (120.0, 33), (180.0, 33)]
        .into_iter()
        .map(|(view_change_deg, frame_count)| RsSegment {
            view_change_deg,
            frame_count,
            ..RsSegment::default()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub name: String,
    /// Base seed; run `r` uses `seed + r` for its scene, noise and RANSAC.
    pub seed: u64,
    pub runs: usize,
    /// `seed` inside is replaced per run.
    pub scene: SceneSpec,
    /// `seed` inside is replaced per run.
    pub noise: NoiseParams,
    pub sensor: Sensor,
    /// Map construction segment.
    pub mcs: TrajectorySpec,
    pub keyframe_every: usize,
    pub rs: Vec<RsSegment>,
    pub fusion: FusionParams,
    /// When set, replaces `fusion.chi2_gate` by the 3-dof critical value.
    pub chi2_alpha: Option<f64>,
    pub reloc: RelocParams,
    pub voxel_size: f64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            name: "default".into(),
            seed: 0,
            runs: 1,
            scene: SceneSpec::default(),
            noise: NoiseParams::default(),
            sensor: Sensor::default(),
            mcs: TrajectorySpec::default(),
            keyframe_every: 5,
            rs: default_segments(),
            fusion: FusionParams::default(),
            chi2_alpha: None,
            reloc: RelocParams::default(),
            voxel_size: 0.01,
            threads: 0,
        }
    }
}

fn config_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        message: e.to_string(),
    }
}

impl BenchConfig {
    /// Parses JSON, reporting the field path of the first bad value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: BenchConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Folds derived settings into their targets so the echo is explicit.
    pub fn resolve(&mut self) {
        if let Some(alpha) = self.chi2_alpha {
            if alpha > 0.0 && alpha < 1.0 {
                self.fusion.chi2_gate = chi2_critical(3, alpha);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(config_err("runs", "must be >= 1"));
        }
        if self.keyframe_every == 0 {
            return Err(config_err("keyframe_every", "must be >= 1"));
        }
        if let Some(alpha) = self.chi2_alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(config_err("chi2_alpha", format!("must be in (0, 1), got {alpha}")));
            }
        }
        if !(self.voxel_size > 0.0) {
            return Err(config_err("voxel_size", "must be positive"));
        }
        if !(self.sensor.fov_deg > 0.0 && self.sensor.fov_deg < 180.0)
            || self.sensor.width == 0
            || self.sensor.height == 0
            || !(self.sensor.max_range > 0.0)
        {
            return Err(config_err("sensor", "fov must be in (0, 180), image non-empty, range positive"));
        }
        if self.mcs.frame_count == 0 && self.mcs.kind != TrajectoryKind::Replay {
            return Err(config_err("mcs.frame_count", "must be >= 1"));
        }
        if !(self.mcs.radius > 0.0) {
            return Err(config_err("mcs.radius", "must be positive"));
        }
        for (i, seg) in self.rs.iter().enumerate() {
            if seg.frame_count == 0 && seg.trajectory.is_none() {
                return Err(config_err(&format!("rs[{i}].frame_count"), "must be >= 1"));
            }
        }
        self.noise.validate().map_err(|e| config_err("noise", e))?;
        self.fusion.validate().map_err(|e| config_err("fusion", e))?;
        self.reloc.icp.validate().map_err(|e| config_err("reloc.icp", e))?;
        if !(self.reloc.ransac.inlier_threshold > 0.0) {
            return Err(config_err("reloc.ransac.inlier_threshold", "must be positive"));
        }
        if !(self.reloc.decay > 0.0) {
            return Err(config_err("reloc.decay", "must be positive"));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

// ---------------------------------------------------------------------------
// Simulation of one run

/// Synthetic inputs of one benchmark run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub seed: u64,
    pub scene: Scene,
    /// Key frames of the map construction segment, with poses.
    pub keyframes: Vec<FrameDetections>,
    /// Relocalisation frames with their segment index.
    pub rs_frames: Vec<(usize, FrameDetections)>,
    /// Simulation time of each relocalisation frame, milliseconds.
    pub rs_detect_ms: Vec<f64>,
}

pub fn simulate_run(cfg: &BenchConfig, run: usize) -> Result<RunData> {
    let seed = cfg.run_seed(run);
    let scene = generate_scene(&SceneSpec {
        seed,
        ..cfg.scene.clone()
    })?;
    let noise = NoiseParams {
        seed,
        ..cfg.noise.clone()
    };

    let mcs = generate_trajectory(&cfg.mcs)?;
    let keyframes = mcs
        .iter()
        .enumerate()
        .filter(|(i, _)| i % cfg.keyframe_every == 0)
        .map(|(i, pose)| simulate_detections(&scene, pose, &noise, &cfg.sensor, i as i64))
        .collect();

    let mut rs_frames = Vec::new();
    let mut rs_detect_ms = Vec::new();
    for (s, seg) in cfg.rs.iter().enumerate() {
        let poses = generate_trajectory(&seg.trajectory(&cfg.mcs))?;
        for (i, pose) in poses.iter().enumerate() {
            let t = Instant::now();
            let id = RS_ID_BASE * (s as i64 + 1) + i as i64;
            rs_frames.push((s, simulate_detections(&scene, pose, &noise, &cfg.sensor, id)));
            rs_detect_ms.push(ms(t));
        }
    }
    Ok(RunData {
        seed,
        scene,
        keyframes,
        rs_frames,
        rs_detect_ms,
    })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub run: usize,
    pub segment: usize,
    pub frame_id: i64,
    pub status: RelocStatus,
    pub trans_error_m: Option<f64>,
    pub rot_error_deg: Option<f64>,
    pub ao_trans_error_m: Option<f64>,
    pub ao_rot_error_deg: Option<f64>,
    pub correspondences_used: usize,
    pub inlier_count: usize,
    pub icp_diverged: bool,
    pub timing: StageTiming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub map_objects: usize,
    pub map_configurations: usize,
    pub surface_points: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRates {
    pub segment: usize,
    pub view_change_deg: f64,
    pub frames: usize,
    pub success_rate_at: Vec<Rate>,
    pub ao_only_rate_at: Vec<Rate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_ms: f64,
    pub mean_match_ms: f64,
    pub mean_ao_ms: f64,
    pub mean_icp_ms: f64,
    pub max_match_plus_ao_ms: f64,
    pub max_icp_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_echo: BenchConfig,
    pub runs: Vec<RunSummary>,
    pub success_rate_at: Vec<Rate>,
    /// Rates of the AO pose alone, i.e. without ICP refinement.
    pub ao_only_rate_at: Vec<Rate>,
    pub segments: Vec<SegmentRates>,
    pub per_frame: Vec<FrameReport>,
    pub timing: TimingSummary,
}

fn frame_errors(frames: &[&FrameReport], ao: bool) -> Vec<FrameError> {
    frames
        .iter()
        .map(|f| FrameError {
            frame_id: f.frame_id,
            status: f.status,
            trans_error_m: if ao { f.ao_trans_error_m } else { f.trans_error_m },
            rot_error_deg: if ao { f.ao_rot_error_deg } else { f.rot_error_deg },
        })
        .collect()
}

impl BenchmarkReport {
    /// Full-pipeline rate at a reported threshold.
    pub fn rate(&self, trans_m: f64, rot_deg: f64) -> Option<f64> {
        find_rate(&self.success_rate_at, trans_m, rot_deg)
    }

    pub fn ao_rate(&self, trans_m: f64, rot_deg: f64) -> Option<f64> {
        find_rate(&self.ao_only_rate_at, trans_m, rot_deg)
    }

    /// JSON with every timing field removed, for determinism comparisons.
    pub fn to_json_without_timing(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        strip_timing(&mut v);
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text summary in the shape of the paper's tables.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let head: Vec<String> = self
            .success_rate_at
            .iter()
            .map(|r| format!("{:.0}cm/{:.0}deg", r.trans_m * 100.0, r.rot_deg))
            .collect();
        let _ = writeln!(s, "benchmark: {}  runs: {}  frames: {}", self.config_echo.name, self.runs.len(), self.per_frame.len());
        let _ = write!(s, "{:<22}", "");
        for h in &head {
            let _ = write!(s, "{h:>12}");
        }
        s.push('\n');
        let mut row = |label: &str, rates: &[Rate]| {
            let _ = write!(s, "{label:<22}");
            for r in rates {
                let _ = write!(s, "{:>11.2}%", r.rate * 100.0);
            }
            s.push('\n');
        };
        row("full pipeline", &self.success_rate_at);
        row("ao only (no icp)", &self.ao_only_rate_at);
        for seg in &self.segments {
            row(&format!("  {:.0}deg full", seg.view_change_deg), &seg.success_rate_at);
            row(&format!("  {:.0}deg ao only", seg.view_change_deg), &seg.ao_only_rate_at);
        }
        let t = &self.timing;
        let _ = writeln!(
            s,
            "mean ms: match {:.3}  ao {:.3}  icp {:.3}  (total {:.0})",
            t.mean_match_ms, t.mean_ao_ms, t.mean_icp_ms, t.total_ms
        );
        s
    }
}

fn find_rate(rates: &[Rate], trans_m: f64, rot_deg: f64) -> Option<f64> {
    rates
        .iter()
        .find(|r| (r.trans_m - trans_m).abs() < 1e-12 && (r.rot_deg - rot_deg).abs() < 1e-12)
        .map(|r| r.rate)
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("timing");
            for x in m.values_mut() {
                strip_timing(x);
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Relocalises every frame of one run against its map.
fn bench_run(cfg: &BenchConfig, run: usize) -> Result<(RunSummary, Vec<FrameReport>)> {
    let data = simulate_run(cfg, run)?;
    let (map, surface) = build_map(&data.keyframes, &data.scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size)?;
    let mut reloc = cfg.reloc.clone();
    reloc.ransac.seed = data.seed;

    let frames = data
        .rs_frames
        .par_iter()
        .zip(data.rs_detect_ms.par_iter())
        .map(|((segment, frame), detect_ms)| {
            let (lost, gt) = frame.clone().into_lost();
            let gt = gt.ok_or(Error::MissingGroundTruth(frame.frame_id))?;
            let mut r = relocalise(&lost, &map, &surface, &reloc)?;
            r.timing.detect_ms = *detect_ms;
            let fin = r.pose_final.map(|p| pose_error(&p, &gt));
            let ao = r.pose_ao.map(|p| pose_error(&p, &gt));
            Ok(FrameReport {
                run,
                segment: *segment,
                frame_id: r.frame_id,
                status: r.status,
                trans_error_m: fin.map(|e| e.0),
                rot_error_deg: fin.map(|e| e.1),
                ao_trans_error_m: ao.map(|e| e.0),
                ao_rot_error_deg: ao.map(|e| e.1),
                correspondences_used: r.correspondences_used,
                inlier_count: r.inlier_count,
                icp_diverged: r.icp_diverged,
                timing: r.timing,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = RunSummary {
        run,
        seed: data.seed,
        map_objects: map.len(),
        map_configurations: map.objects.iter().map(|o| o.configurations.len()).sum(),
        surface_points: surface.len(),
        frames: frames.len(),
    };
    Ok((summary, frames))
}

/// Runs the whole benchmark described by `cfg`.
///
/// Runs and frames are processed in parallel; the report is assembled in
/// run and frame order, so it does not depend on scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run| bench_run(&cfg, run))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut runs = Vec::new();
    let mut per_frame = Vec::new();
    for (summary, frames) in outcomes {
        runs.push(summary);
        per_frame.extend(frames);
    }

    let all: Vec<&FrameReport> = per_frame.iter().collect();
    let success_rate_at = rates(&frame_errors(&all, false), &REPORT_THRESHOLDS);
    let ao_only_rate_at = rates(&frame_errors(&all, true), &REPORT_THRESHOLDS);
    let segments = cfg
        .rs
        .iter()
        .enumerate()
        .map(|(s, seg)| {
            let frames: Vec<&FrameReport> = per_frame.iter().filter(|f| f.segment == s).collect();
            SegmentRates {
                segment: s,
                view_change_deg: seg.view_change_deg,
                frames: frames.len(),
                success_rate_at: rates(&frame_errors(&frames, false), &REPORT_THRESHOLDS),
                ao_only_rate_at: rates(&frame_errors(&frames, true), &REPORT_THRESHOLDS),
            }
        })
        .collect();

    let n = per_frame.len().max(1) as f64;
    let timing = TimingSummary {
        total_ms: ms(start),
        mean_match_ms: per_frame.iter().map(|f| f.timing.match_ms).sum::<f64>() / n,
        mean_ao_ms: per_frame.iter().map(|f| f.timing.ao_ms).sum::<f64>() / n,
        mean_icp_ms: per_frame.iter().map(|f| f.timing.icp_ms).sum::<f64>() / n,
        max_match_plus_ao_ms: per_frame
            .iter()
            .map(|f| f.timing.match_ms + f.timing.ao_ms)
            .fold(0.0, f64::max),
        max_icp_ms: per_frame.iter().map(|f| f.timing.icp_ms).fold(0.0, f64::max),
    };

    Ok(BenchmarkReport {
        config_echo: cfg,
        runs,
        success_rate_at,
        ao_only_rate_at,
        segments,
        per_frame,
        timing,
    })
}
