use cmg_core::array::{ArrayGeometry, CmgInertia, SatelliteParams};
use nalgebra::{DVector, Matrix3, Matrix3xX, SymmetricEigen, Vector3};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

const PYRAMID_BETA: f64 = 0.9553166181245093;

fn sat(geom: ArrayGeometry) -> SatelliteParams {
    SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), geom).unwrap()
}

fn rooftop() -> SatelliteParams {
    sat(ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap())
}

fn pyramid() -> SatelliteParams {
    sat(ArrayGeometry::pyramid(PYRAMID_BETA).unwrap())
}

fn spd(m: &Matrix3<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-12 && m.cholesky().is_some()
}

fn state4() -> impl Strategy<Value = (Vector3<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
    (
        prop::array::uniform3(-0.1..0.1f64),
        prop::array::uniform4(-7.0..7.0f64),
        prop::array::uniform4(-30.0..30.0f64),
        prop::array::uniform4(-0.5..0.5f64),
    )
        .prop_map(|(w, d, h, g)| {
            (Vector3::from(w), DVector::from_row_slice(&d), DVector::from_row_slice(&h), DVector::from_row_slice(&g))
        })
}

/// Central difference of a 3-vector function along each δ component.
fn fd_columns(delta: &DVector<f64>, f: impl Fn(&DVector<f64>) -> Vector3<f64>) -> Matrix3xX<f64> {
    let step = 1e-5;
    let mut out = Matrix3xX::zeros(delta.len());
    for i in 0..delta.len() {
        let (mut up, mut dn) = (delta.clone(), delta.clone());
        up[i] += step;
        dn[i] -= step;
        out.set_column(i, &((f(&up) - f(&dn)) / (2.0 * step)));
    }
    out
}

fn rel_err(a: &Matrix3xX<f64>, b: &Matrix3xX<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-3)
}

#[test]
fn zero_gimbal_angles_give_default_frames() {
    for s in [rooftop(), pyramid()] {
        let g = s.geometry();
        let f = g.frame_matrices(&DVector::zeros(4));
        assert_eq!(&f.spin, g.spin_axes0());
        assert_eq!(&f.transverse, g.transverse_axes0());

        let quarter = g.frame_matrices(&DVector::from_element(4, FRAC_PI_2));
        assert!((quarter.spin + g.transverse_axes0()).amax() < 1e-15);
        assert!((quarter.transverse - g.spin_axes0()).amax() < 1e-15);
    }
}

#[test]
fn rooftop_axes_follow_the_roof_faces() {
    let g = ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap();
    let s = FRAC_PI_4.sin();
    let c = FRAC_PI_4.cos();
    for i in 0..4 {
        let sign = if i < 2 { 1.0 } else { -1.0 };
        assert!((g.gimbal_axes().column(i) - Vector3::new(sign * s, 0.0, c)).amax() < 1e-15);
        assert_eq!(g.spin_axes0().column(i), Vector3::y());
        let t = g.spin_axes0().column(i).cross(&g.gimbal_axes().column(i));
        assert!((g.transverse_axes0().column(i) - t).amax() < 1e-15);
    }
    assert!(ArrayGeometry::rooftop(5, FRAC_PI_4).is_err());
    assert!(ArrayGeometry::rooftop(2, FRAC_PI_4).is_err());
}

#[test]
fn default_transverse_null_direction_is_the_unreachable_torque_axis() {
    for (s, expected) in [(rooftop(), None), (pyramid(), Some(Vector3::z()))] {
        let at = s.geometry().frame_matrices(&DVector::zeros(4)).transverse;
        let gram = &at * at.transpose();
        let eig = SymmetricEigen::new(gram);
        let (k, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
        let null = eig.eigenvectors.column(k).into_owned();
        assert!(eig.eigenvalues[k].abs() < 1e-12);
        // every transverse axis is orthogonal to the null direction
        assert!((at.transpose() * null).amax() < 1e-12);
        if let Some(e) = expected {
            assert!((null.dot(&e).abs() - 1.0).abs() < 1e-12);
        }
        assert!(s.geometry().singularity_measure(&DVector::zeros(4)) <= 1e-12);
    }
}

#[test]
fn pyramid_gimbal_axes_are_symmetric() {
    let g = ArrayGeometry::pyramid(PYRAMID_BETA).unwrap();
    let sum: Vector3<f64> = g.gimbal_axes().column_iter().map(|c| c.into_owned()).sum();
    assert!((sum - Vector3::new(0.0, 0.0, 4.0 * PYRAMID_BETA.cos())).amax() < 1e-14);
    let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    for i in 0..4 {
        let rotated = rz * g.gimbal_axes().column(i);
        assert!((rotated - g.gimbal_axes().column((i + 1) % 4)).amax() < 1e-14);
    }
}

#[test]
fn zero_cmg_inertia_reduces_to_body_inertia() {
    let tiny = CmgInertia { gimbal: 1e-300, spin_wheel: 1e-300, spin_gimbal: 1e-300, transverse: 1e-300 };
    let s = sat(ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap().with_inertia(tiny).unwrap());
    let d = DVector::from_row_slice(&[0.1, 2.0, -1.0, 3.0]);
    assert!((s.inertia_jstg(&d) - s.j()).amax() < 1e-12);
}

#[test]
fn parallel_axis_term_enters_the_constant_inertia() {
    let r = vec![Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.0, 0.5, 0.0), Vector3::new(-0.5, 0.0, 0.2), Vector3::zeros()];
    let geom = ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap().with_mounting(r.clone(), vec![10.0; 4]).unwrap();
    let s = sat(geom);
    let mut expected = Matrix3::from_diagonal(&Vector3::new(1500.0, 1500.0, 2000.0));
    for ri in &r {
        for a in 0..3 {
            for b in 0..3 {
                let delta_ab = if a == b { ri.norm_squared() } else { 0.0 };
                expected[(a, b)] += 10.0 * (delta_ab - ri[a] * ri[b]);
            }
        }
    }
    assert!((s.j() - expected).amax() < 1e-12);
}

#[test]
fn inertias_are_positive_definite_over_a_gimbal_sweep() {
    let (rt, py) = (rooftop(), pyramid());
    for k in 0..10_000 {
        let t = k as f64 * 0.000_7;
        let d = DVector::from_row_slice(&[7.0 * t, -3.0 * t + 1.0, 11.0 * t.sin(), 5.0 * t.cos()]);
        for s in [&rt, &py] {
            assert!(spd(&s.inertia_jstg(&d)), "J_stg at sweep point {k}");
            assert!(spd(&s.inertia_jst(&d)), "J_st at sweep point {k}");
            assert!(spd(&s.inertia_jsta(&d)), "J_st,a at sweep point {k}");
        }
    }
}

#[test]
fn singularity_measure_is_positive_off_singular_sets() {
    let s = rooftop();
    let d = DVector::from_row_slice(&[0.4, -1.1, 2.0, 0.7]);
    let m = s.geometry().singularity_measure(&d);
    assert!(m > 1e-3);
    let at = s.geometry().frame_matrices(&d).transverse;
    assert_eq!(at.rank(1e-9), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn frames_keep_right_handed_triads(d in prop::array::uniform4(-10.0..10.0f64)) {
        for s in [rooftop(), pyramid()] {
            let g = s.geometry();
            let f = g.frame_matrices(&DVector::from_row_slice(&d));
            for i in 0..4 {
                let (a_g, a_s, a_t) = (g.gimbal_axes().column(i), f.spin.column(i), f.transverse.column(i));
                prop_assert!((a_s.norm() - 1.0).abs() < 1e-12 && (a_t.norm() - 1.0).abs() < 1e-12);
                prop_assert!(a_s.dot(&a_g).abs() < 1e-12 && a_t.dot(&a_g).abs() < 1e-12);
                prop_assert!((a_t - a_s.cross(&a_g)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn inertia_differences_are_the_missing_terms(d in prop::array::uniform4(-10.0..10.0f64)) {
        let s = rooftop();
        let g = s.geometry();
        let d = DVector::from_row_slice(&d);
        let f = g.frame_matrices(&d);
        let mut ag = Matrix3::zeros();
        let mut asw = Matrix3::zeros();
        for i in 0..4 {
            ag += g.gimbal_axes().column(i) * g.gimbal_axes().column(i).transpose() * g.j_g()[i];
            asw += f.spin.column(i) * f.spin.column(i).transpose() * g.j_sw()[i];
        }
        prop_assert!((s.inertia_jstg(&d) - s.inertia_jst(&d) - ag).amax() < 1e-12);
        prop_assert!((s.inertia_jst(&d) - s.inertia_jsta(&d) - asw).amax() < 1e-12);
        let dev = (s.inertia_jst(&d) - s.j()).norm();
        prop_assert!(dev <= 4.0 * (g.j_s()[0] + g.j_t()[0]) + 1e-12);
    }

    #[test]
    fn momentum_round_trip((w, d, h, g) in state4()) {
        for s in [rooftop(), pyramid()] {
            let hb = s.hbar(&w, &d, &h, &g);
            prop_assert!((s.wbar(&hb, &d, &h, &g) - w).amax() < 1e-12);
        }
    }

    #[test]
    fn actuator_jacobian_matches_finite_differences((w, d, h, _g) in state4()) {
        for s in [rooftop(), pyramid()] {
            let zero = DVector::zeros(4);
            let fd = fd_columns(&d, |dd| s.hbar(&w, dd, &h, &zero));
            prop_assert!(rel_err(&s.jacobian_d(&w, &d, &h), &fd) <= 1e-6);

            let f = s.geometry().frame_matrices(&d);
            let h_swa = &h + s.geometry().j_sw().component_mul(&(f.spin.transpose() * w));
            let fd_a = fd_columns(&d, |dd| s.inertia_jsta(dd) * w + s.geometry().frame_matrices(dd).spin * &h_swa);
            prop_assert!(rel_err(&s.jacobian_da(&w, &d, &h), &fd_a) <= 1e-6);
        }
    }

    #[test]
    fn jacobians_at_rest_reduce_to_wheel_terms(d in prop::array::uniform4(-10.0..10.0f64), h in prop::array::uniform4(-30.0..30.0f64)) {
        let s = rooftop();
        let (d, h) = (DVector::from_row_slice(&d), DVector::from_row_slice(&h));
        let mut want = Matrix3xX::zeros(4);
        for i in 0..4 {
            want.set_column(i, &(-s.geometry().frame_matrices(&d).transverse.column(i) * h[i]));
        }
        prop_assert!((s.jacobian_d(&Vector3::zeros(), &d, &h) - &want).amax() < 1e-12);
        prop_assert!((s.jacobian_da(&Vector3::zeros(), &d, &h) - &want).amax() < 1e-12);
    }
}
