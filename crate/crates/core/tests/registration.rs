use nalgebra::SymmetricEigen;
use objreloc::detection::{simulate_detections, NoiseParams};
use objreloc::geom::{exp_so3, rot_z, rotation_angle_between, Mat3, RigidTransform, Vec3};
use objreloc::oracle::{coordinate_descent_ao, random_pose, random_rotation};
use objreloc::registration::{
    depth_centroid_icp, estimate_normals, horn_ao, icp_normal_equations, prob_ao_cost, probabilistic_ao, ransac_ao,
    IcpParams, RansacParams, SurfaceModel, WeightedPair,
};
use objreloc::scene::{
    build_surface_model, generate_scene, generate_trajectory, look_at, render_depth_points, GroundPlane, RenderParams,
    Scene, SceneSpec, Sensor, SurfaceParams, TrajectorySpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gap(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    (
        (a.translation - b.translation).norm(),
        rotation_angle_between(&a.rotation, &b.rotation),
    )
}

fn pairs_through(pose: &RigidTransform, frame: &[Vec3]) -> Vec<WeightedPair> {
    frame
        .iter()
        .map(|p| WeightedPair::isotropic(*p, pose.transform_point(p)))
        .collect()
}

#[test]
fn horn_aligned_pairs_give_identity() {
    let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.3)];
    let pose = horn_ao(&pairs_through(&RigidTransform::identity(), &pts)).unwrap();
    assert!((pose.rotation - Mat3::identity()).abs().max() < 1e-12);
    assert!(pose.translation.norm() < 1e-12);
}

#[test]
fn horn_pure_translation() {
    let map = [Vec3::new(0.2, 0.1, 0.0), Vec3::new(1.0, 0.0, 0.5), Vec3::new(0.0, 1.0, 0.3)];
    let pairs: Vec<_> = map
        .iter()
        .map(|m| WeightedPair::isotropic(m - Vec3::new(1.0, 0.0, 0.0), *m))
        .collect();
    let pose = horn_ao(&pairs).unwrap();
    assert!((pose.translation - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    assert!((pose.rotation - Mat3::identity()).abs().max() < 1e-12);
}

#[test]
fn horn_recovers_quarter_turn() {
    let truth = RigidTransform::new(rot_z(90.0), Vec3::new(0.3, -0.2, 0.1));
    let pts = [
        Vec3::new(0.1, 0.7, -0.3),
        Vec3::new(-0.5, 0.2, 0.4),
        Vec3::new(0.9, -0.1, 0.2),
        Vec3::new(0.3, 0.3, 1.1),
    ];
    let pose = horn_ao(&pairs_through(&truth, &pts)).unwrap();
    assert!((pose.rotation - truth.rotation).abs().max() < 1e-9);
    assert!((pose.translation - truth.translation).norm() < 1e-9);
}

#[test]
fn prob_ao_with_unit_covariances_matches_horn() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 0.01).unwrap();
    for _ in 0..20 {
        let truth = random_pose(&mut r, 1.0);
        let pairs: Vec<_> = (0..6)
            .map(|_| {
                let p = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.5..1.5));
                let m = truth.transform_point(&p) + Vec3::from_fn(|_, _| noise.sample(&mut r));
                WeightedPair::isotropic(p, m)
            })
            .collect();
        let h = horn_ao(&pairs).unwrap();
        let p = probabilistic_ao(&pairs, &RigidTransform::identity()).unwrap();
        let (dt, dr) = gap(&h, &p.pose);
        assert!(dt < 1e-8 && dr < 1e-6, "{dt} {dr}");
    }
}

#[test]
fn prob_ao_exact_data_any_covariance() {
    let mut r = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let truth = random_pose(&mut r, 1.0);
        let pairs: Vec<_> = (0..5)
            .map(|_| {
                let p = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.5..1.5));
                let q = random_rotation(&mut r);
                let d = Mat3::from_diagonal(&Vec3::new(
                    r.random_range(1e-4..1e-2),
                    r.random_range(1e-4..1e-2),
                    r.random_range(1e-4..1e-2),
                ));
                WeightedPair::new(p, truth.transform_point(&p), q * d * q.transpose())
            })
            .collect();
        let res = probabilistic_ao(&pairs, &RigidTransform::identity()).unwrap();
        let (dt, dr) = gap(&res.pose, &truth);
        assert!(dt < 1e-8 && dr.to_radians() < 1e-8, "{dt} {dr}");
        assert!(res.final_cost < 1e-16, "{}", res.final_cost);
    }
}

#[test]
fn prob_ao_anisotropic_matches_derivative_free_search() {
    let mut r = ChaCha8Rng::seed_from_u64(23);
    let cov = Mat3::from_diagonal(&Vec3::new(1e-4, 1e-4, 1e-2));
    let sd = [1e-2, 1e-2, 1e-1];
    for _ in 0..10 {
        let truth = random_pose(&mut r, 1.0);
        let pairs: Vec<_> = (0..5)
            .map(|_| {
                let p = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.5..1.5));
                let n = Vec3::from_fn(|i, _| Normal::new(0.0, sd[i]).unwrap().sample(&mut r));
                WeightedPair::new(p, truth.transform_point(&p) + n, cov)
            })
            .collect();
        let horn = horn_ao(&pairs).unwrap();
        let res = probabilistic_ao(&pairs, &horn).unwrap();
        assert!(res.final_cost <= prob_ao_cost(&pairs, &horn) + 1e-15);
        // a 1e-6 step still stalls in the narrow valley of these covariances
        let oracle = coordinate_descent_ao(&pairs, &horn, 1e-9);
        assert!(res.final_cost <= prob_ao_cost(&pairs, &oracle) + 1e-12);
        let (dt, dr) = gap(&res.pose, &oracle);
        assert!(dt < 1e-4 && dr < 0.01, "{dt} m {dr} deg");
    }
}

#[test]
fn ransac_minimal_clean_set() {
    let truth = RigidTransform::new(rot_z(30.0), Vec3::new(0.1, 0.2, 0.3));
    let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.4, 0.0, 1.0), Vec3::new(0.0, 0.3, 1.2)];
    let res = ransac_ao(&pairs_through(&truth, &pts), &RansacParams::default()).unwrap();
    assert_eq!(res.inliers, vec![0, 1, 2]);
    let (dt, dr) = gap(&res.pose, &truth);
    assert!(dt < 1e-9 && dr < 1e-7);
}

#[test]
fn ransac_rejects_gross_outliers() {
    let truth = RigidTransform::new(rot_z(-40.0), Vec3::new(0.5, -0.1, 0.2));
    let frame = [
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.4, 0.1, 1.1),
        Vec3::new(-0.3, 0.3, 0.9),
        Vec3::new(0.2, -0.4, 1.3),
        Vec3::new(0.1, 0.2, 0.8),
        Vec3::new(-0.2, -0.2, 1.2),
    ];
    let mut pairs = pairs_through(&truth, &frame);
    pairs[1].map_mean += Vec3::new(1.0, 0.0, 0.0);
    pairs[4].map_mean += Vec3::new(0.0, -1.0, 0.0);
    let params = RansacParams {
        inlier_threshold: 0.1,
        ..RansacParams::default()
    };
    let res = ransac_ao(&pairs, &params).unwrap();
    assert_eq!(res.inliers, vec![0, 2, 3, 5]);

    // exhaustive enumeration finds no larger consensus
    let mut best = 0;
    for i in 0..6 {
        for j in i + 1..6 {
            for k in j + 1..6 {
                let Ok(h) = horn_ao(&[pairs[i], pairs[j], pairs[k]]) else { continue };
                let n = pairs.iter().filter(|p| p.residual(&h).norm() < 0.1).count();
                best = best.max(n);
            }
        }
    }
    assert_eq!(best, 4);
}

#[test]
fn ransac_noisy_pairs_over_seeds() {
    let noise = Normal::new(0.0, 0.005).unwrap();
    for seed in 0..100 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let truth = random_pose(&mut r, 1.0);
        let pairs: Vec<_> = (0..10)
            .map(|_| {
                let p = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.5..1.5));
                let m = truth.transform_point(&p) + Vec3::from_fn(|_, _| noise.sample(&mut r));
                WeightedPair::new(p, m, Mat3::identity() * 2.5e-5)
            })
            .collect();
        let res = ransac_ao(&pairs, &RansacParams { seed, ..RansacParams::default() }).unwrap();
        let (dt, dr) = gap(&res.pose, &truth);
        assert!(dt < 0.02 && dr < 2.0, "seed {seed}: {dt} m {dr} deg");
    }
}

fn desk() -> (Scene, SurfaceModel, Vec<RigidTransform>) {
    let scene = generate_scene(&SceneSpec {
        seed: 4,
        ..SceneSpec::default()
    })
    .unwrap();
    let poses = generate_trajectory(&TrajectorySpec {
        frame_count: 40,
        ..TrajectorySpec::default()
    })
    .unwrap();
    let surface = build_surface_model(&scene, &poses, &SurfaceParams::default()).unwrap();
    (scene, surface, poses)
}

fn centroid_pairs(scene: &Scene, cam: &RigidTransform, noise: &NoiseParams, id: i64) -> Vec<WeightedPair> {
    let det = simulate_detections(scene, cam, noise, &Sensor::default(), id);
    // pair each detection with the true centroid of its object, as a map would hold it
    det.objects
        .iter()
        .filter_map(|o| {
            let world = cam.transform_point(&o.centroid());
            let truth = scene
                .labelled()
                .map(|(_, s)| s.pose.translation)
                .min_by(|a, b| (a - world).norm().total_cmp(&(b - world).norm()))?;
            ((truth - world).norm() < 0.05).then(|| WeightedPair::new(o.centroid(), truth, Mat3::identity() * 1e-4))
        })
        .collect()
}

#[test]
fn icp_keeps_the_true_pose() {
    let (scene, surface, poses) = desk();
    let cam = poses[7];
    let render = RenderParams {
        sigma_depth: 0.0,
        ..RenderParams::default()
    };
    let points = render_depth_points(&scene, &cam, &render);
    let pairs = centroid_pairs(&scene, &cam, &NoiseParams::zero(), 7);
    let res = depth_centroid_icp(&points, &surface, &pairs, &cam, &IcpParams::default()).unwrap();
    let (dt, dr) = gap(&res.pose, &cam);
    assert!(dt < 1e-3 && dr < 0.05, "{dt} m {dr} deg");
    assert!(res.final_cost < 1e-3, "{}", res.final_cost);
}

#[test]
fn centroid_term_fixes_the_plane_null_space() {
    let scene = Scene {
        objects: Vec::new(),
        ground_plane: GroundPlane {
            height: 0.0,
            half_extent: f64::INFINITY,
        },
    };
    let cam = look_at(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.3, 0.0, 0.0));
    let surface = build_surface_model(&scene, &[cam], &SurfaceParams::default()).unwrap();
    let render = RenderParams {
        sigma_depth: 0.0,
        ..RenderParams::default()
    };
    let points = render_depth_points(&scene, &cam, &render);
    let normals = estimate_normals(&points, 16);
    let world = [Vec3::new(0.3, 0.1, 0.05), Vec3::new(0.5, -0.2, 0.05), Vec3::new(0.7, 0.3, 0.05)];
    let inv = cam.inverse();
    let pairs: Vec<_> = world
        .iter()
        .map(|w| WeightedPair::isotropic(inv.transform_point(w), *w))
        .collect();

    let small_eigs = |w2: f64| {
        let params = IcpParams { w2, ..IcpParams::default() };
        let sys = icp_normal_equations(&points, &normals, &surface, &pairs, &cam, 0.05, &params);
        let e = SymmetricEigen::new(sys.hessian).eigenvalues;
        let max = e.max();
        e.iter().filter(|&&l| l < 1e-9 * max).count()
    };
    // in-plane translation and yaw are free without centroids
    assert_eq!(small_eigs(0.0), 3);
    assert_eq!(small_eigs(1.0), 0);
}

#[test]
fn icp_refines_displaced_starts() {
    let (scene, surface, poses) = desk();
    let noise = NoiseParams::default();
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let (mut within, mut improved, trials) = (0, 0, 100);
    for t in 0..trials {
        let cam = poses[(t * 7) % poses.len()];
        let render = RenderParams {
            sigma_depth: 0.005,
            seed: t as u64,
            ..RenderParams::default()
        };
        let points = render_depth_points(&scene, &cam, &render);
        let pairs = centroid_pairs(&scene, &cam, &NoiseParams { seed: t as u64, ..noise.clone() }, t as i64);
        let axis = loop {
            let v = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                break v.normalize();
            }
        };
        let dir = loop {
            let v = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                break v.normalize();
            }
        };
        let delta = RigidTransform::new(exp_so3(&(axis * 8f64.to_radians())), dir * 0.08);
        let init = delta.compose(&cam);
        let (t0, r0) = gap(&init, &cam);
        let Ok(res) = depth_centroid_icp(&points, &surface, &pairs, &init, &IcpParams::default()) else { continue };
        let (t1, r1) = gap(&res.pose, &cam);
        if t1 < 0.05 && r1 < 5.0 {
            within += 1;
        }
        if t1 < t0 && r1 < r0 {
            improved += 1;
        }
    }
    assert!(within >= 95, "{within}/{trials} within 5cm/5deg");
    assert!(improved >= 99, "{improved}/{trials} improved");
}
