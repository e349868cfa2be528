use std::collections::BTreeMap;
use std::path::PathBuf;

use objreloc::detection::NoiseParams;
use objreloc::geom::{RigidTransform, Vec3};
use objreloc::object_map::ObjectMap;
use objreloc::pipeline::{
    build_map, evaluate, pose_error, relocalise, run_benchmark, simulate_run, BenchConfig, FailureReason, PoseChoice,
    RelocParams, RelocResult, RelocStatus, RsSegment, StageTiming, REPORT_THRESHOLDS,
};
use objreloc::scene::distance_to_scene;

fn config(name: &str) -> BenchConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    BenchConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn result(frame_id: i64, status: RelocStatus, pose: Option<RigidTransform>) -> RelocResult {
    RelocResult {
        frame_id,
        status,
        pose_ao: pose,
        pose_final: pose,
        correspondences_used: 4,
        inlier_count: 4,
        icp_diverged: false,
        timing: StageTiming::default(),
    }
}

fn zero_noise() -> BenchConfig {
    BenchConfig {
        seed: 11,
        noise: NoiseParams::zero(),
        rs: vec![RsSegment {
            view_change_deg: 120.0,
            frame_count: 5,
            ..RsSegment::default()
        }],
        ..BenchConfig::default()
    }
}

#[test]
fn exact_estimate_succeeds_everywhere() {
    let gt = BTreeMap::from([(1, RigidTransform::identity())]);
    let ev = evaluate(
        &[result(1, RelocStatus::Success, Some(RigidTransform::identity()))],
        &gt,
        &REPORT_THRESHOLDS,
        PoseChoice::Final,
    )
    .unwrap();
    assert_eq!(ev.per_frame[0].trans_error_m, Some(0.0));
    assert_eq!(ev.per_frame[0].rot_error_deg, Some(0.0));
    assert!(ev.success_rate_at.iter().all(|r| r.rate == 1.0));
}

#[test]
fn seven_centimetres_off_fails_only_the_tightest_threshold() {
    let gt = BTreeMap::from([(1, RigidTransform::identity())]);
    let est = RigidTransform::from_translation(Vec3::new(0.07, 0.0, 0.0));
    let ev = evaluate(
        &[result(1, RelocStatus::Success, Some(est))],
        &gt,
        &REPORT_THRESHOLDS,
        PoseChoice::Final,
    )
    .unwrap();
    let rates: Vec<f64> = ev.success_rate_at.iter().map(|r| r.rate).collect();
    assert_eq!(rates, vec![0.0, 1.0, 1.0]);
}

#[test]
fn failed_frames_score_zero_and_missing_truth_is_an_error() {
    let gt = BTreeMap::from([(1, RigidTransform::identity()), (2, RigidTransform::identity())]);
    let failed = RelocStatus::Failed(FailureReason::TooFewObjects);
    let results = [result(1, failed, None), result(2, failed, None)];
    let ev = evaluate(&results, &gt, &REPORT_THRESHOLDS, PoseChoice::Final).unwrap();
    assert!(ev.success_rate_at.iter().all(|r| r.rate == 0.0));
    assert!(ev.per_frame.iter().all(|f| f.trans_error_m.is_none()));
    assert!(evaluate(&[result(3, failed, None)], &gt, &REPORT_THRESHOLDS, PoseChoice::Final).is_err());
}

#[test]
fn noiseless_fusion_recovers_every_object() {
    let cfg = zero_noise();
    let data = simulate_run(&cfg, 0).unwrap();
    let (map, _) = build_map(&data.keyframes, &data.scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size).unwrap();
    assert_eq!(map.len(), 5);
    for obj in &map.objects {
        assert_eq!(obj.configurations.len(), 1);
        let truth = data
            .scene
            .labelled()
            .filter(|(_, s)| s.label == Some(obj.label))
            .map(|(_, s)| (s.pose.translation - obj.configurations[0].centroid.mean).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(truth < 1e-9, "{truth}");
    }
}

// Exactly one object per true object, each within 1 cm, holds in only
// about 40% of seeds: small objects split when a noisy box falls under the
// IoU gate, and flips 5 cm away pull the mean. What holds is coverage
// without spurious objects.
#[test]
fn nominal_fusion_over_seeds() {
    let mut good = 0;
    for seed in 0..50 {
        let cfg = BenchConfig {
            seed: 500 + seed,
            rs: Vec::new(),
            ..BenchConfig::default()
        };
        let data = simulate_run(&cfg, 0).unwrap();
        let mut map = ObjectMap::new(cfg.fusion.clone(), cfg.sensor);
        for f in &data.keyframes {
            map.integrate_keyframe(f, &f.camera_pose_gt.unwrap());
        }
        let map = map.finalize_map(data.keyframes.len());
        let near = |o: &objreloc::object_map::MapObject, s: &objreloc::scene::SceneObject, tol: f64| {
            s.label == Some(o.label) && (s.pose.translation - o.dominant().centroid.mean).norm() < tol
        };
        let covered = data
            .scene
            .labelled()
            .all(|(_, s)| map.objects.iter().any(|o| near(o, s, 0.02)));
        let no_spurious = map
            .objects
            .iter()
            .all(|o| data.scene.labelled().any(|(_, s)| near(o, s, 0.1)));
        good += (covered && no_spurious) as usize;
    }
    assert!(good >= 48, "{good}/50 seeds");
}

#[test]
fn two_objects_are_too_few() {
    let cfg = zero_noise();
    let data = simulate_run(&cfg, 0).unwrap();
    let (map, surface) = build_map(&data.keyframes, &data.scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size).unwrap();
    let mut frame = data.rs_frames[0].1.to_lost();
    frame.objects.truncate(2);
    let r = relocalise(&frame, &map, &surface, &RelocParams::default()).unwrap();
    assert_eq!(r.status, RelocStatus::Failed(FailureReason::TooFewObjects));
    assert!(r.pose_final.is_none());
}

#[test]
fn zero_noise_frame_relocalises() {
    let cfg = zero_noise();
    let data = simulate_run(&cfg, 0).unwrap();
    let (map, surface) = build_map(&data.keyframes, &data.scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size).unwrap();
    for (_, f) in &data.rs_frames {
        let gt = f.camera_pose_gt.unwrap();
        let r = relocalise(&f.to_lost(), &map, &surface, &RelocParams::default()).unwrap();
        assert_eq!(r.status, RelocStatus::Success);
        let (t, a) = pose_error(&r.pose_ao.unwrap(), &gt);
        assert!(t < 1e-6 && a < 1e-4, "ao {t} m {a} deg");
        // the surface is a 1 cm voxel sample, so ICP lands near but not on the truth
        let (t, a) = pose_error(&r.pose_final.unwrap(), &gt);
        assert!(t < 0.015 && a < 1.0, "final {t} m {a} deg");
    }
}

#[test]
fn icp_does_not_worsen_the_fit() {
    let cfg = config("easy.json");
    let data = simulate_run(&cfg, 0).unwrap();
    let (map, surface) = build_map(&data.keyframes, &data.scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size).unwrap();
    let fit = |pose: &RigidTransform, pts: &[Vec3]| {
        pts.iter().map(|p| distance_to_scene(&data.scene, &pose.transform_point(p))).sum::<f64>() / pts.len() as f64
    };
    let (mut ok, mut n) = (0, 0);
    for (_, f) in &data.rs_frames {
        let r = relocalise(&f.to_lost(), &map, &surface, &cfg.reloc).unwrap();
        if !r.status.is_success() {
            continue;
        }
        n += 1;
        ok += (fit(&r.pose_final.unwrap(), &f.depth_points) <= fit(&r.pose_ao.unwrap(), &f.depth_points)) as usize;
    }
    assert!(n > 0);
    assert!(ok as f64 >= 0.95 * n as f64, "{ok}/{n}");
}

#[test]
fn easy_config_and_its_ablation() {
    let cfg = config("easy.json");
    let full = run_benchmark(&cfg).unwrap();
    let rate = full.rate(0.05, 5.0).unwrap();
    assert!(rate >= 0.95, "{rate}");
    let ablated = run_benchmark(&BenchConfig {
        reloc: RelocParams {
            ablate_icp: true,
            ..cfg.reloc.clone()
        },
        ..cfg
    })
    .unwrap();
    let ao = ablated.rate(0.05, 5.0).unwrap();
    assert!(ao < rate, "ablated {ao} vs full {rate}");
    for report in [&full, &ablated] {
        let r: Vec<f64> = report.success_rate_at.iter().map(|r| r.rate).collect();
        assert!(r[0] <= r[1] && r[1] <= r[2], "{r:?}");
    }
}

#[test]
fn two_object_scene_never_relocalises() {
    let report = run_benchmark(&config("two_objects.json")).unwrap();
    assert!(!report.per_frame.is_empty());
    assert!(report
        .per_frame
        .iter()
        .all(|f| f.status == RelocStatus::Failed(FailureReason::TooFewObjects)));
    assert!(report.success_rate_at.iter().all(|r| r.rate == 0.0));
}

#[test]
fn reports_are_reproducible() {
    let mut cfg = config("easy.json");
    cfg.runs = 1;
    let a = run_benchmark(&cfg).unwrap();
    cfg.threads = 1;
    let b = run_benchmark(&cfg).unwrap();
    // the echo differs in `threads` and timings differ; nothing else may
    let key = |r: &objreloc::pipeline::BenchmarkReport| {
        let mut frames = r.per_frame.clone();
        frames.iter_mut().for_each(|f| f.timing = StageTiming::default());
        serde_json::to_string(&(frames, &r.success_rate_at, &r.runs)).unwrap()
    };
    assert_eq!(key(&a), key(&b));
}
