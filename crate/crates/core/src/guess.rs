//! Singularity-robust steering law used to generate feasible initial
//! trajectories.
//!
//! The chain is: attitude PD torque command → regularized inverse of the
//! actuator Jacobian `D` (gimbal-rate command) → inner servo mapping rates to
//! gimbal and wheel motor torques.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::dynamics::Dynamics;
use crate::integrate::{Dopri5, Tolerances};
use crate::opt::Trajectory;
use crate::quat::{attitude_error_raw, qprod, Quaternion};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrParams {
    /// Base regularization `λ₀`.
    pub lambda0: f64,
    /// Scale `σ_ref` of the singularity measure in the regularization.
    pub sigma_ref: f64,
    /// Attitude gain (1/s²).
    pub k_p: f64,
    /// Rate gain (1/s).
    pub k_d: f64,
    /// Gimbal-rate servo gain (1/s).
    pub k_delta: f64,
    /// Wheel-momentum hold gain (1/s).
    pub k_w: f64,
    /// Per-axis torque command limit (N·m).
    pub tau_max: f64,
    /// Per-gimbal rate limit (rad/s).
    pub delta_dot_max: f64,
}

impl SrParams {
    /// Defaults for wheel momenta `h_swr_target`; `σ_ref` is a tenth of
    /// their median.
    pub fn with_target(h_swr_target: &[f64]) -> Self {
        let mut sorted: Vec<f64> = h_swr_target.iter().map(|h| h.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n == 0 {
            1.0
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            lambda0: 0.01,
            sigma_ref: 0.1 * median,
            k_p: 0.008,
            k_d: 0.12,
            k_delta: 10.0,
            k_w: 1.0,
            tau_max: 2.0,
            delta_dot_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda0,
            self.sigma_ref,
            self.k_p,
            self.k_d,
            self.k_delta,
            self.k_w,
            self.tau_max,
            self.delta_dot_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("steering law parameters must be positive".into()));
        }
        Ok(())
    }
}

/// PD body-torque command `−k_p J e_v sign(e_s) − k_d J ω` with
/// `e = q_d* ∘ q`, saturated per axis at `τ_max`.
pub fn torque_command(
    q: &Quaternion,
    omega: &Vector3<f64>,
    q_d: &Quaternion,
    inertia: &Matrix3<f64>,
    p: &SrParams,
) -> Vector3<f64> {
    let sign = if qprod(&q_d.conj(), q).s < 0.0 { -1.0 } else { 1.0 };
    torque_command_in_hemisphere(q, omega, q_d, inertia, p, sign)
}

/// [`torque_command`] with the sign of `e_s` replaced by a fixed `sign`.
fn torque_command_in_hemisphere(
    q: &Quaternion,
    omega: &Vector3<f64>,
    q_d: &Quaternion,
    inertia: &Matrix3<f64>,
    p: &SrParams,
    sign: f64,
) -> Vector3<f64> {
    let e = qprod(&q_d.conj(), q);
    let tau = -(inertia * e.v) * (p.k_p * sign) - (inertia * omega) * p.k_d;
    tau.map(|t| t.clamp(-p.tau_max, p.tau_max))
}

/// Band on `e_s` inside which [`generate_guess`] keeps its current
/// hemisphere.
///
/// Near a 180° error the gimbal-acceleration reaction briefly turns the body
/// against the commanded torque, so switching on the raw sign of `e_s` sticks
/// the closed loop in a sliding mode at `e_s = 0`.
pub const HEMISPHERE_HYSTERESIS: f64 = 0.05;

/// Regularized inverse `Dᵀ(DDᵀ + λI)⁻¹ τ` with
/// `λ = λ₀ exp(−σ_min(D)/σ_ref)`, clamped per gimbal at `δ̇_max`.
pub fn sr_gimbal_rates(d: &Matrix3xX<f64>, tau: &Vector3<f64>, p: &SrParams) -> DVector<f64> {
    let sigma_min = if d.ncols() < 3 {
        0.0
    } else {
        d.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let lambda = p.lambda0 * (-sigma_min / p.sigma_ref).exp();
    let g = d * d.transpose() + Matrix3::identity() * lambda;
    let y = match g.cholesky() {
        Some(c) => c.solve(tau),
        // Only reachable with λ = 0 at a singular D.
        None => Vector3::zeros(),
    };
    let rates = d.transpose() * y;
    DVector::from_iterator(rates.len(), rates.iter().map(|r| r.clamp(-p.delta_dot_max, p.delta_dot_max)))
}

/// Motor torques that drive the gimbal rates toward `delta_dot_cmd` and hold
/// the wheel momenta at `h_swr_target`.
///
/// The gimbal torque cancels the gyroscopic drift of `ḣ_ga` and adds
/// `J_g k_δ (δ̇_cmd − δ̇)`. The wheel torque makes `ḣ_swr = k_w (h_t − h_swr)`
/// exactly, accounting for the body acceleration it causes itself.
pub fn inner_loop(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    delta_dot_cmd: &DVector<f64>,
    h_swr_target: &DVector<f64>,
    p: &SrParams,
) -> DVector<f64> {
    let l = dynamics.layout();
    let m = l.m();
    let geom = dynamics.geometry();
    let free = dynamics.f(x, &DVector::zeros(l.control_dim()));
    let delta_dot = free.rows_range(l.delta());
    let drift = free.rows_range(l.h_ga());
    let u_g = geom.j_g().component_mul(&((delta_dot_cmd - delta_dot) * p.k_delta)) - drift;

    let mut u = DVector::zeros(l.control_dim());
    u.rows_mut(0, m).copy_from(&u_g);
    let with_gimbal = dynamics.f(x, &u);
    let h_swr = x.rows_range(l.h_swr());
    let delta = x.rows_range(l.delta()).into_owned();
    let a_s = geom.frame_matrices(&delta).spin;
    let a_s = DMatrix::from_column_slice(3, m, a_s.as_slice());
    let jsta = dynamics.params().inertia_jsta(&delta);
    let jsta_inv = DMatrix::from_column_slice(3, 3, jsta.try_inverse().expect("J_st,a is invertible").as_slice());
    let coupling = DMatrix::from_diagonal(geom.j_sw()) * a_s.transpose() * jsta_inv * &a_s
        + DMatrix::identity(m, m);
    let rhs = (h_swr_target - h_swr) * p.k_w - with_gimbal.rows_range(l.h_swr());
    let u_w = coupling.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(m));
    u.rows_mut(m, m).copy_from(&u_w);
    u
}

/// Full steering chain at state `x`.
pub fn steering_control(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    q_d: &Quaternion,
    h_swr_target: &DVector<f64>,
    p: &SrParams,
) -> DVector<f64> {
    let q = Quaternion::from_slice(&x.as_slice()[dynamics.layout().q()]);
    let sign = if qprod(&q_d.conj(), &q).s < 0.0 { -1.0 } else { 1.0 };
    steering_in_hemisphere(dynamics, x, q_d, h_swr_target, p, sign)
}

fn steering_in_hemisphere(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    q_d: &Quaternion,
    h_swr_target: &DVector<f64>,
    p: &SrParams,
    sign: f64,
) -> DVector<f64> {
    let l = dynamics.layout();
    let q = Quaternion::from_slice(&x.as_slice()[l.q()]);
    let omega = Vector3::from_column_slice(&x.as_slice()[l.omega()]);
    let delta = x.rows_range(l.delta()).into_owned();
    let h_swr = x.rows_range(l.h_swr()).into_owned();
    let tau = torque_command_in_hemisphere(&q, &omega, q_d, dynamics.params().j(), p, sign);
    let d = dynamics.params().jacobian_d(&omega, &delta, &h_swr);
    // The array exerts −D δ̇ on the body, so the rates realize −τ.
    let rates = sr_gimbal_rates(&d, &(-tau), p);
    inner_loop(dynamics, x, &rates, h_swr_target, p)
}

/// Closed-loop steering from `x0` toward the attitude and wheel momenta of
/// `x_d` over `grid`.
///
/// The returned trajectory holds the closed-loop states and the feedback
/// controls evaluated at the grid nodes, so `ẋ = f(x, u)` holds exactly at
/// every node. Re-integrating the node controls open loop is not equivalent:
/// the gimbal-rate and attitude modes are neutral without the feedback, so
/// the optimizer projects the guess before its first iteration.
///
/// The hemisphere `sign(e_s)` is re-evaluated at each grid node and only
/// flips once `e_s` is past [`HEMISPHERE_HYSTERESIS`] on the other side.
pub fn generate_guess(
    dynamics: &Dynamics,
    x0: &DVector<f64>,
    x_d: &DVector<f64>,
    grid: &[f64],
    p: &SrParams,
    tol: Tolerances,
) -> Result<Trajectory> {
    p.validate()?;
    let l = dynamics.layout();
    let q_d = Quaternion::from_slice(&x_d.as_slice()[l.q()]);
    let h_target = x_d.rows_range(l.h_swr()).into_owned();
    let e_s = |x: &DVector<f64>| qprod(&q_d.conj(), &Quaternion::from_slice(&x.as_slice()[l.q()])).s;
    let mut sign = if e_s(x0) < 0.0 { -1.0 } else { 1.0 };
    let mut solver = Dopri5::new(tol);
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(grid.len());
    let mut controls = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        if sign * e_s(&x) < -HEMISPHERE_HYSTERESIS {
            sign = -sign;
        }
        controls.push(steering_in_hemisphere(dynamics, &x, &q_d, &h_target, p, sign));
        states.push(x.clone());
        if let Some(&t1) = grid.get(k + 1) {
            let mut f = |_: f64, x: &DVector<f64>| {
                dynamics.f(x, &steering_in_hemisphere(dynamics, x, &q_d, &h_target, p, sign))
            };
            x = solver.step_to(&mut f, t, &x, t1)?;
        }
    }
    let traj = Trajectory::from_samples(grid.to_vec(), states, controls)?;

    let error_at = |x: &DVector<f64>| {
        attitude_error_raw(&Quaternion::from_slice(&x.as_slice()[0..4]), &q_d).to_degrees()
    };
    let mid = traj.states()[traj.len() / 2].clone();
    let (mid_deg, end_deg) = (error_at(&mid), error_at(traj.final_state()));
    if end_deg > mid_deg + 1e-3 && end_deg > 0.1 {
        return Err(Error::GuessDiverged { mid_deg, end_deg });
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{ArrayGeometry, SatelliteParams};
    use crate::dynamics::{find_zero_momentum_config, State};
    use crate::quat::UnitQuaternion;
    use core::f64::consts::FRAC_PI_4;

    fn setup() -> (Dynamics, DVector<f64>, SrParams) {
        let g = ArrayGeometry::rooftop(4, FRAC_PI_4).unwrap();
        let dynamics = Dynamics::new(SatelliteParams::new(Vector3::new(1500.0, 1500.0, 2000.0), g).unwrap());
        let delta = find_zero_momentum_config(dynamics.geometry(), 25.0, 1).unwrap();
        let x = State::equilibrium(UnitQuaternion::identity(), delta, DVector::from_element(4, 25.0)).to_vector();
        (dynamics, x, SrParams::with_target(&[25.0; 4]))
    }

    #[test]
    fn torque_command_cases() {
        let p = SrParams::with_target(&[25.0; 4]);
        let j = Matrix3::from_diagonal(&Vector3::new(1500.0, 1500.0, 2000.0));
        let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 1.0).unwrap().into_inner();
        assert_eq!(torque_command(&q, &Vector3::zeros(), &q, &j, &p), Vector3::zeros());
        let w = Vector3::new(1e-4, -2e-4, 3e-4);
        let tau = torque_command(&q, &w, &q, &j, &p);
        assert!((tau + j * w * p.k_d).norm() < 1e-15);
        let qd = UnitQuaternion::identity().into_inner();
        assert_eq!(torque_command(&q, &w, &qd, &j, &p), torque_command(&-q, &w, &qd, &j, &p));
        let big = torque_command(&q, &Vector3::new(1.0, 1.0, 1.0), &qd, &j, &p);
        assert!(big.amax() <= p.tau_max);
    }

    #[test]
    fn sr_inverse_cases() {
        let mut p = SrParams::with_target(&[25.0; 4]);
        let d = Matrix3xX::from_column_slice(&[
            1.0, 0.0, 0.5, 0.0, 1.0, 0.0, -1.0, 0.2, 0.0, 0.3, 0.0, 1.0,
        ]);
        assert_eq!(sr_gimbal_rates(&d, &Vector3::zeros(), &p), DVector::zeros(4));
        p.lambda0 = 1e-15;
        let tau = Vector3::new(0.1, -0.2, 0.05);
        let r = sr_gimbal_rates(&d, &tau, &p);
        assert!((&d * r - tau).norm() < 1e-9);

        p.lambda0 = 0.01;
        let singular = Matrix3xX::from_column_slice(&[
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0,
        ]);
        let tau = Vector3::new(0.0, 0.0, 1e-3);
        let r = sr_gimbal_rates(&singular, &tau, &p);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!(r.norm() <= singular.norm() * tau.norm() / p.lambda0 + 1e-15);
    }

    #[test]
    fn inner_loop_is_quiet_at_rest() {
        let (dynamics, x, p) = setup();
        let u = inner_loop(&dynamics, &x, &DVector::zeros(4), &DVector::from_element(4, 25.0), &p);
        assert!(u.amax() < 1e-15);
    }

    #[test]
    fn inner_loop_holds_wheel_momentum_exactly() {
        let (dynamics, mut x, p) = setup();
        let l = dynamics.layout();
        x[l.omega().start] = 0.01;
        x[l.h_ga().start + 1] = 0.02;
        x[l.h_swr().start + 2] = 24.0;
        let target = DVector::from_element(4, 25.0);
        let cmd = DVector::from_vec(vec![0.1, -0.2, 0.0, 0.05]);
        let u = inner_loop(&dynamics, &x, &cmd, &target, &p);
        let xdot = dynamics.f(&x, &u);
        let expect = (&target - x.rows_range(l.h_swr())) * p.k_w;
        assert!((xdot.rows_range(l.h_swr()) - expect).amax() < 1e-12);
    }
}
