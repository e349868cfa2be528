use objreloc::geom::{
    box_iou, exp_so3, log_so3, mahalanobis_sq, rotation_angle_between, GaussianCentroid, Mat3, OrientedBox,
    RigidTransform, Vec3,
};
use objreloc::stats::{chi2_cdf, chi2_critical};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

// rotation vectors of length below pi, where log inverts exp
fn small_omega() -> impl Strategy<Value = Vec3> {
    vec3(1.7).prop_filter("angle below pi", |w| w.norm() < 3.0)
}

fn pose() -> impl Strategy<Value = RigidTransform> {
    (small_omega(), vec3(5.0)).prop_map(|(w, t)| RigidTransform::new(exp_so3(&w), t))
}

proptest! {
    #[test]
    fn exp_is_a_rotation_and_log_inverts_it(w in small_omega()) {
        let r = exp_so3(&w);
        prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((log_so3(&r) - w).norm() < 1e-9);
    }

    #[test]
    fn inverse_composes_to_identity(a in pose(), p in vec3(3.0)) {
        let back = a.compose(&a.inverse()).transform_point(&p);
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose(), p in vec3(3.0)) {
        let left = a.compose(&b).compose(&c).transform_point(&p);
        let right = a.compose(&b.compose(&c)).transform_point(&p);
        prop_assert!((left - right).norm() < 1e-9);
    }

    #[test]
    fn rigid_motion_preserves_distance(a in pose(), p in vec3(3.0), q in vec3(3.0)) {
        let d = (a.transform_point(&p) - a.transform_point(&q)).norm();
        prop_assert!((d - (p - q).norm()).abs() < 1e-9);
    }

    #[test]
    fn rotation_angle_is_a_metric(x in small_omega(), y in small_omega(), z in small_omega()) {
        let (a, b, c) = (exp_so3(&x), exp_so3(&y), exp_so3(&z));
        let ab = rotation_angle_between(&a, &b);
        prop_assert!((ab - rotation_angle_between(&b, &a)).abs() < 1e-9);
        prop_assert!(rotation_angle_between(&a, &a) < 1e-6);
        prop_assert!(ab <= rotation_angle_between(&a, &c) + rotation_angle_between(&c, &b) + 1e-6);
    }

    #[test]
    fn isotropic_mahalanobis_is_scaled_euclidean(m in vec3(2.0), x in vec3(2.0), s in 0.01f64..1.0) {
        let g = GaussianCentroid::with_covariance(m, Mat3::identity() * (s * s));
        let expect = (x - m).norm_squared() / (s * s);
        prop_assert!((mahalanobis_sq(&x, &g) - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn iou_is_symmetric_bounded_and_pose_invariant(
        c in vec3(0.3),
        e1 in vec3(0.2).prop_map(|e| e.abs().add_scalar(0.02)),
        e2 in vec3(0.2).prop_map(|e| e.abs().add_scalar(0.02)),
        w in small_omega(),
        t in pose(),
    ) {
        let a = OrientedBox::new(Vec3::zeros(), Mat3::identity(), e1).unwrap();
        let b = OrientedBox::new(c, exp_so3(&w), e2).unwrap();
        let iou = box_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert!((iou - box_iou(&b, &a)).abs() < 1e-9);
        prop_assert!((iou - box_iou(&a.transformed(&t), &b.transformed(&t))).abs() < 1e-9);
        prop_assert!((box_iou(&a, &a) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn chi2_matches_statrs() {
    for dof in 1..=6u32 {
        let reference = ChiSquared::new(dof as f64).unwrap();
        for x in [0.01, 0.5, 1.0, 3.0, 7.8, 15.0, 30.0] {
            assert!((chi2_cdf(x, dof) - reference.cdf(x)).abs() < 1e-10, "cdf({x}; {dof})");
        }
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.5] {
            let ours = chi2_critical(dof, alpha);
            let theirs = reference.inverse_cdf(1.0 - alpha);
            assert!((ours - theirs).abs() < 1e-6 * theirs, "critical({dof}, {alpha}) {ours} vs {theirs}");
        }
    }
    // the three-dimensional 5% gate
    assert!((chi2_critical(3, 0.05) - 7.814727903).abs() < 1e-8);
}
