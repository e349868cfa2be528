//! Reference implementations used to check the production algorithms.
//!
//! Each oracle is deliberately naive (sampling, enumeration, derivative-free
//! search, finite differences) and computes its own costs instead of calling
//! the code it verifies. The suite runners back both the `oracle` CLI
//! subcommand and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::category::Category;
use crate::correspondence::{build_adjacency, greedy_select, principal_eigenvector, CandidateCorrespondence, MIN_SCORE};
use crate::detection::DetectedObject;
use crate::geom::{
    box_iou, exp_so3, rotation_angle_between, Mat3, OrientedBox, RigidTransform, Vec3, Vec6,
};
use crate::object_map::{BoxSample, Configuration, FusionParams, MapObject, ObjectMap};
use crate::registration::{
    centroid_jacobian, horn_ao, point_to_plane_jacobian, probabilistic_ao, residual_jacobian, WeightedPair,
};
use crate::scene::Sensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal3(r: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal))
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Mat3 {
    // uniform via a random unit quaternion
    let q = nalgebra::Quaternion::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal));
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn random_pose(r: &mut ChaCha8Rng, max_translation: f64) -> RigidTransform {
    let t = Vec3::new(
        r.random_range(-max_translation..max_translation),
        r.random_range(-max_translation..max_translation),
        r.random_range(-max_translation..max_translation),
    );
    RigidTransform::new(random_rotation(r), t)
}

// ---------------------------------------------------------------------------
// Oracles

/// IoU by uniform Monte-Carlo sampling of the union bounding box.
pub fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> f64 {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    let lo = amin.inf(&bmin);
    let hi = amax.sup(&bmax);
    let mut r = rng(seed);
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Vec3::new(
            r.random_range(lo.x..=hi.x),
            r.random_range(lo.y..=hi.y),
            r.random_range(lo.z..=hi.z),
        );
        let (ia, ib) = (inside(a, &p), inside(b, &p));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn inside(b: &OrientedBox, p: &Vec3) -> bool {
    let d = p - b.centroid;
    (0..3).all(|k| b.orientation.column(k).dot(&d).abs() <= b.extents[k])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceMatch {
    /// Candidate indices of the best one-to-one subset, ascending.
    pub best: Vec<usize>,
    pub best_sum: f64,
    /// Best sum over every other subset.
    pub runner_up_sum: f64,
}

/// Exhaustive maximum of summed scores over one-to-one candidate subsets,
/// considering only candidates scoring above the selection floor.
pub fn brute_force_matching(candidates: &[CandidateCorrespondence], scores: &[f64]) -> BruteForceMatch {
    assert!(candidates.len() <= 20, "brute force is exponential");
    let usable: Vec<usize> = (0..candidates.len()).filter(|&i| scores[i] > MIN_SCORE).collect();
    let mut best = (Vec::new(), 0.0);
    let mut runner_up = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << usable.len()) {
        let set: Vec<usize> = (0..usable.len()).filter(|b| mask >> b & 1 == 1).map(|b| usable[b]).collect();
        let valid = set.iter().enumerate().all(|(x, &i)| {
            set[x + 1..].iter().all(|&j| {
                candidates[i].frame_index != candidates[j].frame_index
                    && candidates[i].map_object_index != candidates[j].map_object_index
            })
        });
        if !valid {
            continue;
        }
        let sum: f64 = set.iter().map(|&i| scores[i]).sum();
        if mask == 0 || sum > best.1 {
            if mask != 0 {
                runner_up = runner_up.max(best.1);
            }
            best = (set, sum);
        } else {
            runner_up = runner_up.max(sum);
        }
    }
    BruteForceMatch {
        best: best.0,
        best_sum: best.1,
        runner_up_sum: runner_up,
    }
}

fn ao_cost(pairs: &[WeightedPair], pose: &RigidTransform) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let d = p.map_mean - (pose.rotation * p.frame_point + pose.translation);
            let w = p.map_cov.try_inverse().expect("covariance is invertible");
            (d.transpose() * w * d)[0]
        })
        .sum()
}

fn perturbed(init: &RigidTransform, x: &Vec6) -> RigidTransform {
    let dr = exp_so3(&Vec3::new(x[0], x[1], x[2]));
    RigidTransform::new(dr * init.rotation, dr * init.translation + Vec3::new(x[3], x[4], x[5]))
}

/// Derivative-free minimiser of the covariance-weighted centroid cost:
/// cyclic coordinate search over the six update parameters, halving the
/// step whenever no coordinate improves, until it falls below `tol`.
pub fn coordinate_descent_ao(pairs: &[WeightedPair], init: &RigidTransform, tol: f64) -> RigidTransform {
    let mut x = Vec6::zeros();
    let mut f = ao_cost(pairs, init);
    let mut step = 0.05;
    while step >= tol {
        let mut improved = false;
        for k in 0..6 {
            for sign in [1.0, -1.0] {
                // keep stepping while it pays off
                loop {
                    let mut y = x;
                    y[k] += sign * step;
                    let fy = ao_cost(pairs, &perturbed(init, &y));
                    if fy < f {
                        x = y;
                        f = fy;
                        improved = true;
                    } else {
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    perturbed(init, &x)
}

/// Central finite-difference Jacobian of `f` with respect to a left update.
pub fn numeric_jacobian<const M: usize>(
    f: impl Fn(&RigidTransform) -> nalgebra::SVector<f64, M>,
    pose: &RigidTransform,
    h: f64,
) -> nalgebra::SMatrix<f64, M, 6> {
    let mut j = nalgebra::SMatrix::<f64, M, 6>::zeros();
    for k in 0..6 {
        let mut e = Vec6::zeros();
        e[k] = h;
        let plus = f(&perturbed(pose, &e));
        let minus = f(&perturbed(pose, &(-e)));
        j.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    j
}

// ---------------------------------------------------------------------------
// Suites

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub passed: usize,
    /// Worst observed error in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.cases > 0 && self.passed == self.cases
    }
}

fn pose_gap(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    (
        (a.translation - b.translation).norm(),
        rotation_angle_between(&a.rotation, &b.rotation),
    )
}

/// Noiseless Horn instances: recovery to `1e-9` in translation and in
/// rotation-matrix entries.
pub fn horn_suite(cases: usize, seed: u64) -> SuiteResult {
    let tol = 1e-9;
    let mut r = rng(seed);
    let (mut passed, mut worst) = (0, 0.0f64);
    for _ in 0..cases {
        let gt = random_pose(&mut r, 2.0);
        let n = r.random_range(3..12);
        let pairs: Vec<WeightedPair> = (0..n)
            .map(|_| {
                let u = normal3(&mut r) * 0.5;
                WeightedPair::isotropic(u, gt.transform_point(&u))
            })
            .collect();
        let err = match horn_ao(&pairs) {
            Ok(t) => (t.translation - gt.translation)
                .amax()
                .max((t.rotation - gt.rotation).amax()),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
        passed += (err <= tol) as usize;
    }
    SuiteResult {
        name: "horn_ao exact recovery".into(),
        cases,
        passed,
        worst,
        tolerance: tol,
        detail: "max abs error of translation and rotation entries".into(),
    }
}

/// Anisotropic noisy instances: Gauss-Newton against coordinate descent.
/// `worst` is the translation gap in metres; rotation is checked too.
pub fn prob_ao_suite(cases: usize, seed: u64) -> SuiteResult {
    let (tol_t, tol_r) = (1e-4, 0.01);
    let mut r = rng(seed);
    let (mut passed, mut worst, mut worst_rot) = (0, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let gt = random_pose(&mut r, 1.0);
        let sig = Vec3::new(1e-4f64.sqrt(), 1e-4f64.sqrt(), 1e-2f64.sqrt());
        let pairs: Vec<WeightedPair> = (0..5)
            .map(|_| {
                let m = normal3(&mut r) * 0.4;
                // per-pair random principal axes
                let q = random_rotation(&mut r);
                let cov = q * Mat3::from_diagonal(&sig.component_mul(&sig)) * q.transpose();
                let noise = q * normal3(&mut r).component_mul(&sig);
                WeightedPair::new(gt.inverse().transform_point(&(m + noise)), m, cov)
            })
            .collect();
        let Ok(init) = horn_ao(&pairs) else { continue };
        let gn = match probabilistic_ao(&pairs, &init) {
            Ok(res) => res.pose,
            Err(_) => {
                worst = f64::INFINITY;
                continue;
            }
        };
        let cd = coordinate_descent_ao(&pairs, &init, 1e-9);
        let (dt, dr) = pose_gap(&gn, &cd);
        worst = worst.max(dt);
        worst_rot = worst_rot.max(dr);
        let cost_ok = ao_cost(&pairs, &gn) <= ao_cost(&pairs, &init) + 1e-12;
        passed += (dt <= tol_t && dr <= tol_r && cost_ok) as usize;
    }
    SuiteResult {
        name: "probabilistic_ao vs coordinate descent".into(),
        cases,
        passed,
        worst,
        tolerance: tol_t,
        detail: format!("worst rotation gap {worst_rot:.3e} deg (tolerance {tol_r})"),
    }
}

fn rel_err<const M: usize>(a: &nalgebra::SMatrix<f64, M, 6>, b: &nalgebra::SMatrix<f64, M, 6>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Analytic Jacobians of the centroid residual and the point-to-plane
/// residual against central differences with `h = 1e-6`.
pub fn jacobian_suite(cases: usize, seed: u64) -> SuiteResult {
    let tol = 1e-5;
    let h = 1e-6;
    let mut r = rng(seed);
    let (mut passed, mut worst) = (0, 0.0f64);
    for _ in 0..cases {
        let pose = random_pose(&mut r, 1.5);
        let u = normal3(&mut r);
        let m = normal3(&mut r);
        let pair = WeightedPair::isotropic(u, m);

        // centroid term
        let (_, ja) = residual_jacobian(&pair, &pose);
        let jn = numeric_jacobian(|t| m - t.transform_point(&u), &pose, h);
        let e1 = rel_err(&ja, &jn);
        let jc = centroid_jacobian(&pose.transform_point(&u));
        let e2 = rel_err(&jc, &jn);

        // point-to-plane term with a fixed match
        let p = normal3(&mut r);
        let pm = normal3(&mut r);
        let n = normal3(&mut r).normalize();
        let jp = point_to_plane_jacobian(&pose.transform_point(&p), &n);
        let jpn = numeric_jacobian(|t| nalgebra::SVector::<f64, 1>::new(n.dot(&(pm - t.transform_point(&p)))), &pose, h);
        let e3 = rel_err(&nalgebra::SMatrix::<f64, 1, 6>::from(jp), &jpn);

        let e = e1.max(e2).max(e3);
        worst = worst.max(e);
        passed += (e <= tol) as usize;
    }
    SuiteResult {
        name: "analytic vs finite-difference Jacobians".into(),
        cases,
        passed,
        worst,
        tolerance: tol,
        detail: "relative Frobenius error, centroid and point-to-plane terms".into(),
    }
}

/// A random matching problem: a small map and a rigidly moved, noisy view
/// of part of it, with optional spurious detections.
pub fn random_matching_instance(r: &mut ChaCha8Rng, max_candidates: usize) -> (Vec<DetectedObject>, ObjectMap) {
    let labels = [Category::Bottle, Category::Mug, Category::Can];
    let params = FusionParams::default();
    loop {
        let n_map = r.random_range(3..=6);
        let mut map = ObjectMap::new(params.clone(), Sensor::default());
        let mut truth = Vec::new();
        for i in 0..n_map {
            let label = labels[r.random_range(0..labels.len())];
            let c = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.0..0.15));
            let e = Vec3::new(r.random_range(0.02..0.08), r.random_range(0.02..0.08), r.random_range(0.03..0.12));
            let mut configurations = vec![Configuration::from_samples(
                vec![BoxSample {
                    centroid: c,
                    rotation: Mat3::identity(),
                    extents: e,
                }],
                &params,
                None,
            )];
            if r.random::<f64>() < 0.2 {
                configurations.push(Configuration::from_samples(
                    vec![BoxSample {
                        centroid: c + Vec3::new(0.05, 0.0, 0.0),
                        rotation: Mat3::identity(),
                        extents: e,
                    }],
                    &params,
                    None,
                ));
            }
            map.objects.push(MapObject {
                label,
                configurations,
                created_at: i,
                update_count: 10,
                expected_view_count: 10,
            });
            truth.push((label, c, e));
        }

        let world_from_cam = random_pose(r, 1.0);
        let cam_from_world = world_from_cam.inverse();
        let mut frame = Vec::new();
        for (label, c, e) in &truth {
            if r.random::<f64>() < 0.25 {
                continue;
            }
            let noisy = c + normal3(r) * 0.01;
            let scale = 1.0 + 0.05 * r.sample::<f64, _>(StandardNormal);
            let b = OrientedBox::new(noisy, Mat3::identity(), e * scale.max(0.5)).expect("valid box");
            frame.push(DetectedObject {
                label: *label,
                bbox: b.transformed(&cam_from_world),
                confidence: 1.0,
            });
        }
        if r.random::<f64>() < 0.3 {
            let c = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(0.0..0.15));
            let b = OrientedBox::new(c, Mat3::identity(), Vec3::repeat(0.04)).expect("valid box");
            frame.push(DetectedObject {
                label: labels[r.random_range(0..labels.len())],
                bbox: b.transformed(&cam_from_world),
                confidence: 0.5,
            });
        }
        let n = build_adjacency(&frame, &map, 1.0).candidates.len();
        if (1..=max_candidates).contains(&n) {
            return (frame, map);
        }
    }
}

/// Greedy selection against exhaustive search, plus invariance of the
/// selection under a rigid motion of the frame. Instances whose best and
/// runner-up sums are within `1e-6` are skipped as ties.
pub fn matcher_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut r = rng(seed);
    let (mut passed, mut tested, mut ties, mut mismatches, mut variant) = (0, 0, 0, 0, 0);
    while tested + ties < cases {
        let (frame, map) = random_matching_instance(&mut r, 10);
        let adj = build_adjacency(&frame, &map, 1.0);
        let eig = principal_eigenvector(&adj.matrix);
        let greedy = greedy_select(&adj.candidates, &eig.vector);
        let scores: Vec<f64> = eig.vector.iter().copied().collect();
        let bf = brute_force_matching(&adj.candidates, &scores);

        let g = random_pose(&mut r, 2.0);
        let moved: Vec<DetectedObject> = frame
            .iter()
            .map(|d| DetectedObject {
                bbox: d.bbox.transformed(&g),
                ..d.clone()
            })
            .collect();
        let adj2 = build_adjacency(&moved, &map, 1.0);
        let eig2 = principal_eigenvector(&adj2.matrix);
        let moved_sel = greedy_select(&adj2.candidates, &eig2.vector);
        let mut a = greedy.indices.clone();
        let mut b = moved_sel.indices.clone();
        a.sort_unstable();
        b.sort_unstable();
        let invariant = a == b;
        variant += (!invariant) as usize;

        if bf.best_sum - bf.runner_up_sum <= 1e-6 {
            ties += 1;
            continue;
        }
        tested += 1;
        let optimal = a == bf.best;
        mismatches += (!optimal) as usize;
        passed += (optimal && invariant) as usize;
    }
    SuiteResult {
        name: "greedy selection vs brute force".into(),
        cases: tested,
        passed,
        worst: mismatches as f64,
        tolerance: 0.0,
        detail: format!("{mismatches} non-optimal, {variant} not invariant under rigid motion, {ties} near-ties skipped"),
    }
}

/// Lattice IoU against a Monte-Carlo estimate on random overlapping boxes.
pub fn iou_suite(cases: usize, seed: u64) -> SuiteResult {
    let tol = 0.02;
    let mut r = rng(seed);
    let (mut passed, mut worst) = (0, 0.0f64);
    for i in 0..cases {
        let a = OrientedBox::new(
            Vec3::zeros(),
            random_rotation(&mut r),
            Vec3::new(r.random_range(0.05..0.2), r.random_range(0.05..0.2), r.random_range(0.05..0.2)),
        )
        .expect("valid box");
        let b = OrientedBox::new(
            normal3(&mut r) * 0.05,
            random_rotation(&mut r),
            Vec3::new(r.random_range(0.05..0.2), r.random_range(0.05..0.2), r.random_range(0.05..0.2)),
        )
        .expect("valid box");
        let err = (box_iou(&a, &b) - monte_carlo_iou(&a, &b, 200_000, seed ^ i as u64)).abs();
        worst = worst.max(err);
        passed += (err <= tol) as usize;
    }
    SuiteResult {
        name: "box_iou vs Monte-Carlo".into(),
        cases,
        passed,
        worst,
        tolerance: tol,
        detail: "absolute IoU difference, 2e5 samples".into(),
    }
}

/// Every suite at the sizes used by the acceptance tests.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![
        horn_suite(1000, seed),
        prob_ao_suite(100, seed.wrapping_add(1)),
        jacobian_suite(100, seed.wrapping_add(2)),
        matcher_suite(500, seed.wrapping_add(3)),
        iou_suite(50, seed.wrapping_add(4)),
    ]
}
