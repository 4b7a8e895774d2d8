use cmg_core::array::{ArrayGeometry, SatelliteParams};
use cmg_core::dynamics::{find_zero_momentum_config, Dynamics, State};
use cmg_core::integrate::{uniform_grid, Dopri5, Tolerances};
use cmg_core::quat::{attitude_error, qprod, Quaternion, UnitQuaternion};
use cmg_core::regulator::{
    assemble_control_weight, assemble_state_weight, design, solve_are, tangent_lqr, LqrWeights,
};
use cmg_core::Error;
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_4;

fn rooftop() -> Dynamics {
    let g = ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap();
    Dynamics::new(SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), g).unwrap())
}

fn pyramid() -> Dynamics {
    let g = ArrayGeometry::pyramid((1.0 / 3f64.sqrt()).acos()).unwrap();
    Dynamics::new(SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), g).unwrap())
}

fn target(d: &Dynamics, seed: u64) -> DVector<f64> {
    let delta = find_zero_momentum_config(d.geometry(), 25.0, seed).unwrap();
    let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, seed as f64 - 2.0, 0.5), 0.7 * seed as f64 + 0.2).unwrap();
    State::equilibrium(q, delta, DVector::from_element(d.m(), 25.0)).to_vector()
}

/// `Q + AᵀP + PA − P B R⁻¹ Bᵀ P`, written out without the library helper.
fn riccati_lhs(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let r_inv = r.clone().try_inverse().unwrap();
    q + a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p
}

#[test]
fn weight_assembly_follows_the_state_layout() {
    let q = assemble_state_weight(&LqrWeights::cost_default(), 4);
    let want = [5.0; 4]
        .into_iter()
        .chain([10.0; 4])
        .chain([0.1; 3])
        .chain([0.01; 4])
        .chain([50.0; 4])
        .collect::<Vec<_>>();
    assert_eq!(q, DMatrix::from_diagonal(&DVector::from_vec(want)));

    let reg = LqrWeights::regulator_default();
    let scaled: Vec<f64> = [3e4, 3.0, 200.0, 0.3, 3.0].iter().map(|w| w * 1e-4).collect();
    for (got, want) in reg.state_array().iter().zip(&scaled) {
        assert!((got - want).abs() <= 1e-15 * want);
    }

    let ones = LqrWeights::from_arrays([1.0; 5], [1.0; 2]);
    assert_eq!(assemble_state_weight(&ones, 3), DMatrix::identity(16, 16));
    let r = assemble_control_weight(&LqrWeights::from_arrays([1.0; 5], [2.0, 7.0]), 3);
    assert_eq!(r.diagonal().as_slice(), &[2.0, 2.0, 2.0, 7.0, 7.0, 7.0]);
}

#[test]
fn textbook_riccati_solutions() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = solve_are(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
    assert!((p[(0, 0)] - 1.0).abs() <= 1e-12);

    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let p = solve_are(&a, &b, &DMatrix::identity(2, 2), &one).unwrap();
    let s3 = 3f64.sqrt();
    assert!((p - DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3])).amax() <= 1e-12);
}

#[test]
fn uncontrollable_pair_is_rejected_with_its_rank() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let one = DMatrix::from_element(1, 1, 1.0);
    match solve_are(&a, &b, &DMatrix::identity(2, 2), &one) {
        Err(Error::NotControllable { rank, required }) => assert_eq!((rank, required), (1, 2)),
        other => panic!("expected a controllability error, got {other:?}"),
    }
}

#[test]
fn tangent_designs_solve_the_riccati_equation_and_stabilize() {
    for d in [rooftop(), pyramid()] {
        for seed in 0..3 {
            let x = target(&d, seed);
            for w in [LqrWeights::cost_default(), LqrWeights::regulator_default()] {
                let lqr = tangent_lqr(&d, &x, &w).unwrap();
                let res = riccati_lhs(&lqr.a_s, &lqr.b_s, &lqr.q_s, &lqr.r, &lqr.p_s).norm();
                assert!(res <= 1e-8 * lqr.p_s.norm(), "residual {res:e}");
                assert!((&lqr.p_s - lqr.p_s.transpose()).amax() <= 1e-12 * lqr.p_s.amax());
                assert!(lqr.p_s.clone().cholesky().is_some());
                let ev = lqr.closed_loop_eigenvalues().unwrap();
                assert_eq!(ev.len(), 15);
                assert!(ev.iter().all(|e| e.re < 0.0), "{ev:?}");
            }
        }
    }
}

#[test]
fn lifted_matrices_vanish_on_normal_directions() {
    for d in [rooftop(), pyramid()] {
        let x = target(&d, 4);
        let z = d.constraint_jacobian(&x);
        let lqr = tangent_lqr(&d, &x, &LqrWeights::cost_default()).unwrap();
        let lifted = &lqr.lifted;
        for (name, mat) in [("Q", &lifted.q), ("P", &lifted.p), ("K", &lifted.k)] {
            let scaled = (mat * z.transpose()).amax() / (mat.amax() * z.amax());
            assert!(scaled <= 1e-9, "{name} Zᵀ = {scaled:e}");
        }
        assert_eq!(lifted.q.rank(1e-9 * lifted.q.amax()), 15);
        assert_eq!(lifted.p.rank(1e-9 * lifted.p.amax()), 15);
    }
}

#[test]
fn objective_terms_at_the_target() {
    let d = rooftop();
    let x_d = target(&d, 1);
    let (cost, gain) = design(&d, &x_d, &LqrWeights::cost_default(), &LqrWeights::regulator_default()).unwrap();
    let u = DVector::from_fn(8, |i, _| 0.1 * i as f64 - 0.3);
    assert_eq!(cost.stage_cost(&x_d, &DVector::zeros(8)), 0.0);
    assert!((cost.stage_cost(&x_d, &u) - 0.5 * u.norm_squared()).abs() <= 1e-15);
    assert_eq!(cost.terminal_cost(&x_d), 0.0);
    assert_eq!(gain.k.shape(), (8, 19));

    // normal directions cost nothing to first order
    let z = d.constraint_jacobian(&x_d);
    for row in z.row_iter() {
        let moved = &x_d + row.transpose() * 1e-3;
        assert!(cost.terminal_cost(&moved) <= 1e-15 * cost.p.amax());
        assert!(cost.stage_cost(&moved, &DVector::zeros(8)) <= 1e-15 * cost.q.amax());
    }
}

#[test]
fn static_feedback_recovers_a_perturbed_attitude() {
    for d in [rooftop(), pyramid()] {
        let x_d = target(&d, 2);
        let (_, gain) = design(&d, &x_d, &LqrWeights::cost_default(), &LqrWeights::regulator_default()).unwrap();
        let q_d = UnitQuaternion::new_normalize(Quaternion::from_slice(&x_d.as_slice()[0..4])).unwrap();
        let tilt = UnitQuaternion::from_axis_angle(&Vector3::new(0.3, -1.0, 0.4), 1f64.to_radians()).unwrap();
        let q0 = UnitQuaternion::new_normalize(qprod(q_d.quaternion(), tilt.quaternion())).unwrap();
        let mut x0 = x_d.clone();
        x0.rows_mut(0, 4).copy_from(&q0.quaternion().to_vector());

        let grid = uniform_grid(120.0, 1.0).unwrap();
        let mut solver = Dopri5::new(Tolerances::default());
        let xs = solver.solve_grid(|_, _, x| d.f(x, &(-&gain.k * (x - &x_d))), &grid, &x0).unwrap();
        let q_end = UnitQuaternion::new_normalize(Quaternion::from_slice(&xs.last().unwrap().as_slice()[0..4])).unwrap();
        let err = attitude_error(&q_end, &q_d).to_degrees();
        assert!(err < 1e-3, "final error {err}°");
    }
}

fn lift_isometry_case() -> (Dynamics, DVector<f64>) {
    let d = rooftop();
    let x = target(&d, 3);
    (d, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_is_an_isometry(s in prop::collection::vec(-1.0..1.0f64, 15)) {
        let (d, x) = lift_isometry_case();
        let lqr = tangent_lqr(&d, &x, &LqrWeights::cost_default()).unwrap();
        let s = DVector::from_vec(s);
        let z = lqr.basis.matrix().transpose() * &s;
        let reduced = s.dot(&(&lqr.p_s * &s));
        let ambient = z.dot(&(&lqr.lifted.p * &z));
        prop_assert!((reduced - ambient).abs() <= 1e-10 * reduced.abs().max(1.0));
    }
}
