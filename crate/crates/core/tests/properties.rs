use comag::estimator::{combined_estimate, correction_vector, working_point_estimate};
use comag::geometry::{AxisSet, FieldVector, OrientationBasis};
use comag::linalg::Mat3;
use proptest::prelude::*;

type V = FieldVector<f64>;

fn vec3(range: f64) -> impl Strategy<Value = V> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| V::new(x, y, z))
}

fn scale(s: V, b_rb: f64) -> f64 {
    1.0 + s.magnitude() + b_rb
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn corrected_reading_lies_on_scalar_sphere(b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6);
        let est = combined_estimate(b_nv, b_0, b_rb).unwrap();
        prop_assert!(((est.b_hat + b_0).magnitude() - b_rb).abs() <= 1e-10 * scale(s, b_rb));
    }

    #[test]
    fn correction_is_parallel_to_reading(b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6);
        let c = correction_vector(b_nv, b_0, b_rb).unwrap();
        prop_assert!(c.cross(s).magnitude() <= 1e-10 * scale(s, b_rb).powi(2));
        // Signed length is |s| − b_rb.
        let signed = c.dot(s) / s.magnitude();
        prop_assert!((signed - (s.magnitude() - b_rb)).abs() <= 1e-10 * scale(s, b_rb));
    }

    #[test]
    fn correction_is_no_longer_than_any_sphere_point(
        b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64, probe in vec3(1.0),
    ) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6 && probe.magnitude() > 1e-6);
        let c = correction_vector(b_nv, b_0, b_rb).unwrap();
        // Any other c' with |s − c'| = b_rb.
        let q = probe.normalized().unwrap() * b_rb;
        prop_assert!(c.magnitude() <= (s - q).magnitude() + 1e-12);
    }

    #[test]
    fn estimate_commutes_with_rotation(
        b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64, axis in vec3(1.0), angle in -3.1..3.1f64,
    ) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6 && axis.magnitude() > 1e-3);
        let r = Mat3::rotation(axis, angle);
        let plain = combined_estimate(b_nv, b_0, b_rb).unwrap();
        let rotated = combined_estimate(r.mul_vec(b_nv), r.mul_vec(b_0), b_rb).unwrap();
        prop_assert!(rotated.b_hat.max_abs_diff(r.mul_vec(plain.b_hat)) <= 1e-10 * scale(s, b_rb));
        prop_assert!((rotated.radial - plain.radial).abs() <= 1e-10 * scale(s, b_rb));
        prop_assert!((rotated.tangential - plain.tangential).abs() <= 1e-9 * scale(s, b_rb));
    }

    #[test]
    fn consistent_readings_are_left_unchanged(delta_b in vec3(2.0), b_0 in vec3(2.0)) {
        let s = delta_b + b_0;
        prop_assume!(s.magnitude() > 1e-6);
        let est = combined_estimate(delta_b, b_0, s.magnitude()).unwrap();
        prop_assert!(est.correction.magnitude() <= 1e-12 * scale(s, 0.0));
        prop_assert!(est.b_hat.max_abs_diff(delta_b) <= 1e-12 * scale(s, 0.0));
    }

    #[test]
    fn radial_and_tangential_decompose_correction(b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6 && b_nv.magnitude() > 1e-6);
        let est = combined_estimate(b_nv, b_0, b_rb).unwrap();
        let total = est.radial.hypot(est.tangential);
        prop_assert!((total - est.correction.magnitude()).abs() <= 1e-10 * scale(s, b_rb));
        prop_assert!(est.tangential >= 0.0);
        let o = est.orthogonality.unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&o));
    }

    #[test]
    fn working_point_without_extra_field_matches_plain_estimate(b_nv in vec3(3.0), b_0 in vec3(3.0), b_rb in 0.0..4.0f64) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-6);
        let plain = combined_estimate(b_nv, b_0, b_rb).unwrap();
        let wp = working_point_estimate(b_nv, b_0, b_rb, V::zeros()).unwrap();
        prop_assert!(wp.b_hat.max_abs_diff(plain.b_hat) <= 1e-12 * scale(s, b_rb));
    }

    #[test]
    fn every_three_axis_subset_recovers_the_field(b in vec3(5.0), drop in 0usize..4) {
        let basis = OrientationBasis::<f64>::tetrahedral();
        let sel = AxisSet::without(comag::Axis::ALL[drop]);
        let back = basis.recover_field(basis.project_field(b), sel).unwrap();
        prop_assert!(back.max_abs_diff(b) <= 1e-12 * (1.0 + b.magnitude()));
    }

    #[test]
    fn single_precision_tracks_double(b_nv in vec3(2.0), b_0 in vec3(2.0), b_rb in 0.1..3.0f64) {
        let s = b_nv + b_0;
        prop_assume!(s.magnitude() > 1e-2);
        let d = combined_estimate(b_nv, b_0, b_rb).unwrap().b_hat;
        let f = combined_estimate(b_nv.cast::<f32>(), b_0.cast::<f32>(), b_rb as f32).unwrap().b_hat;
        prop_assert!(f.cast::<f64>().max_abs_diff(d) <= 1e-5 * scale(s, b_rb) * (1.0 + 1.0 / s.magnitude()));
    }
}
