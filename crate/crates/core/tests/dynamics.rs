use cmg_core::array::{ArrayGeometry, SatelliteParams};
use cmg_core::dynamics::{find_zero_momentum_config, reduce, Dynamics, Layout, State};
use cmg_core::integrate::{uniform_grid, Dopri5, Tolerances};
use cmg_core::linalg::{controllability_rank, eigenvalues};
use cmg_core::quat::{rotm_unchecked, Quaternion, UnitQuaternion};
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

fn rooftop() -> Dynamics {
    let g = ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap();
    Dynamics::new(SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), g).unwrap())
}

fn pyramid() -> Dynamics {
    let g = ArrayGeometry::pyramid((1.0 / 3f64.sqrt()).acos()).unwrap();
    Dynamics::new(SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), g).unwrap())
}

/// Random state and control for m = 4: (q, h_swr, ω, δ, h_ga), (u_g, u_w).
fn point() -> impl Strategy<Value = (DVector<f64>, DVector<f64>)> {
    (
        prop::array::uniform4(-1.0..1.0f64),
        prop::array::uniform4(10.0..40.0f64),
        prop::array::uniform3(-0.05..0.05f64),
        prop::array::uniform4(-3.1..3.1f64),
        prop::array::uniform4(-0.2..0.2f64),
        prop::array::uniform8(-1.0..1.0f64),
    )
        .prop_filter("nonzero quaternion", |p| p.0.iter().map(|v| v * v).sum::<f64>() > 0.05)
        .prop_map(|(q, h, w, d, g, u)| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let x: Vec<f64> = q.iter().map(|v| v / n).chain(h).chain(w).chain(d).chain(g).collect();
            (DVector::from_vec(x), DVector::from_row_slice(&u))
        })
}

/// Inertial momentum `C(q) h̄`, evaluated independently of the library's
/// constraint code.
fn inertial(dynamics: &Dynamics, x: &DVector<f64>) -> Vector3<f64> {
    let s = State::from_vector(x).unwrap();
    let hbar = dynamics.params().hbar(&s.omega, &s.delta, &s.h_swr, &s.h_ga);
    rotm_unchecked(&s.q) * hbar
}

fn fd_jacobian(g: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let rows = g(x).len();
    let mut out = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let (mut up, mut dn) = (x.clone(), x.clone());
        up[j] += step;
        dn[j] -= step;
        out.set_column(j, &((g(&up) - g(&dn)) / (2.0 * step)));
    }
    out
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn equilibrium(dynamics: &Dynamics, seed: u64) -> DVector<f64> {
    let delta = find_zero_momentum_config(dynamics.geometry(), 25.0, seed).unwrap();
    let q = UnitQuaternion::from_axis_angle(&Vector3::new(0.2, -0.5, 1.0), 0.3 * seed as f64).unwrap();
    State::equilibrium(q, delta, DVector::from_element(dynamics.m(), 25.0)).to_vector()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn inertial_momentum_rate_vanishes((x, u) in point()) {
        for d in [rooftop(), pyramid()] {
            let f = d.f(&x, &u);
            let eps = 1e-6;
            let rate = (inertial(&d, &(&x + &f * eps)) - inertial(&d, &(&x - &f * eps))) / (2.0 * eps);
            let scale = 1.0 + inertial(&d, &x).norm();
            prop_assert!(rate.amax() / scale <= 1e-7, "rate {rate}");
            // the quaternion block preserves the norm exactly up to rounding
            let qdot = f.rows(0, 4);
            prop_assert!(qdot.dot(&x.rows(0, 4)).abs() <= 1e-15);
        }
    }

    #[test]
    fn constraint_jacobian_matches_finite_differences((x, _u) in point()) {
        let d = rooftop();
        let g = |y: &DVector<f64>| {
            let h = inertial(&d, y);
            DVector::from_vec(vec![y.rows(0, 4).norm() - 1.0, h.x, h.y, h.z])
        };
        // rows two to four are stored in the body frame: rotate them out
        let z = d.constraint_jacobian(&x);
        let c = rotm_unchecked(&Quaternion::from_slice(&x.as_slice()[0..4]));
        let mut inertial_z = z.clone();
        let body = z.rows(1, 3).into_owned();
        inertial_z.rows_mut(1, 3).copy_from(&(DMatrix::from_column_slice(3, 3, c.as_slice()) * body));
        let err = rel(&inertial_z, &fd_jacobian(g, &x, 1e-6));
        prop_assert!(err <= 1e-6, "relative error {err:e}");
        prop_assert_eq!(z.rank(1e-10), 4);
    }

    #[test]
    fn linearization_matches_finite_differences((x, u) in point()) {
        let d = pyramid();
        let lin = d.linearize(&x, &u);
        let fa = fd_jacobian(|y| d.f(y, &u), &x, 1e-6);
        let fb = fd_jacobian(|v| d.f(&x, v), &u, 1e-6);
        prop_assert!(rel(&lin.a, &fa) <= 1e-5);
        prop_assert!(rel(&lin.b, &fb) <= 1e-5);
        prop_assert_eq!(lin.b.rows(0, 4).amax(), 0.0);
    }

    #[test]
    fn flow_is_tangent_to_the_constraint_manifold((x, u) in point()) {
        let d = rooftop();
        let z = d.constraint_jacobian(&x);
        let lin = d.linearize(&x, &u);
        let f = d.f(&x, &u);
        let scale = 1.0 + z.amax() * f.amax();
        prop_assert!((&z * f).amax() / scale <= 1e-9);
        prop_assert!((&z * &lin.b).amax() / (1.0 + z.amax() * lin.b.amax()) <= 1e-9);
    }

    #[test]
    fn tangent_basis_is_orthonormal_and_normal_to_constraints((x, _u) in point()) {
        let d = rooftop();
        let m = d.tangent_basis(&x).unwrap();
        let mm = m.matrix();
        prop_assert_eq!(mm.nrows(), 3 * 4 + 3);
        prop_assert!((mm * mm.transpose() - DMatrix::identity(15, 15)).amax() <= 1e-12);
        prop_assert!((mm * d.constraint_jacobian(&x).transpose()).amax() <= 1e-10);
    }
}

#[test]
fn rest_states_are_fixed_points_on_the_zero_momentum_manifold() {
    for d in [rooftop(), pyramid()] {
        let x = equilibrium(&d, 3);
        assert_eq!(d.f(&x, &DVector::zeros(8)).amax(), 0.0);
        let (c_q, c_h) = d.constraints(&x, &Vector3::zeros());
        assert!(c_q.abs() <= 1e-12 && c_h.amax() <= 1e-10);

        let mut doubled = x.clone();
        doubled.rows_mut(0, 4).scale_mut(2.0);
        assert!((d.constraints(&doubled, &Vector3::zeros()).0 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn linearization_at_rest_annihilates_constraint_directions() {
    for d in [rooftop(), pyramid()] {
        let x = equilibrium(&d, 5);
        let lin = d.linearize(&x, &DVector::zeros(8));
        let z = d.constraint_jacobian(&x);
        assert!((&z * &lin.a).amax() <= 1e-9 * lin.a.amax());
        // A has at least four zero eigenvalues at rest
        let ev = eigenvalues(&lin.a).unwrap();
        assert!(ev.iter().filter(|e| e.norm() < 1e-8).count() >= 4);
    }
}

#[test]
fn reduced_pair_is_controllable_and_ambient_pair_is_not() {
    for d in [rooftop(), pyramid()] {
        let l: Layout = d.layout();
        for seed in 0..3 {
            let x = equilibrium(&d, seed);
            let lin = d.linearize(&x, &DVector::zeros(l.control_dim()));
            let basis = d.tangent_basis(&x).unwrap();
            let (a_s, b_s) = reduce(&lin, &basis);
            assert_eq!(controllability_rank(&a_s, &b_s, 1e-10), l.tangent_dim());
            assert!(controllability_rank(&lin.a, &lin.b, 1e-10) < l.state_dim());

            // spectrum of the reduced matrix is contained in the ambient one;
            // the zero eigenvalues are defective and only resolved to √ε
            let full = eigenvalues(&lin.a).unwrap();
            for e in eigenvalues(&a_s).unwrap() {
                let nearest = full.iter().map(|f| (f - e).norm()).fold(f64::INFINITY, f64::min);
                let tol = if e.norm() < 1e-6 { 1e-6 } else { 1e-8 * (1.0 + e.norm()) };
                assert!(nearest <= tol, "eigenvalue {e} missing");
            }
        }
    }
}

#[test]
fn zero_momentum_configurations() {
    let d = rooftop();
    let g = d.geometry();
    let h = DVector::from_element(4, 25.0);
    let roof = DVector::from_row_slice(&[FRAC_PI_2, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2]);
    assert!((g.frame_matrices(&roof).spin * &h).norm() < 1e-12);

    for seed in 0..5 {
        let delta = find_zero_momentum_config(g, 25.0, seed).unwrap();
        assert_eq!(delta, find_zero_momentum_config(g, 25.0, seed).unwrap());
        assert!((g.frame_matrices(&delta).spin * &h).norm() <= 1e-10);
        assert!(g.singularity_measure(&delta) >= 0.1);
        let mut bumped = delta.clone();
        bumped[0] += 0.1;
        assert!((g.frame_matrices(&bumped).spin * &h).norm() > 1e-10);
    }
}

#[test]
fn momentum_is_conserved_under_smooth_controls() {
    let d = rooftop();
    let x0 = equilibrium(&d, 1);
    let grid = uniform_grid(30.0, 0.5).unwrap();
    let control = |t: f64| {
        DVector::from_fn(8, |i, _| 0.3 * ((0.1 + 0.05 * i as f64) * t + i as f64).sin() * if i < 4 { 1.0 } else { 0.01 })
    };
    let mut solver = Dopri5::new(Tolerances::default());
    let xs = solver.solve_grid(|_, t, x| d.f(x, &control(t)), &grid, &x0).unwrap();
    for x in &xs {
        let (c_q, c_h) = d.constraints(x, &Vector3::zeros());
        assert!(c_q.abs() <= 1e-9 && c_h.norm() <= 1e-6, "{c_q} {c_h}");
    }
    let moved = Quaternion::from_slice(&xs.last().unwrap().as_slice()[0..4]);
    assert!(moved.v.norm() > 1e-6);
}
