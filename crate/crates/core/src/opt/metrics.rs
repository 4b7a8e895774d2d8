//! Maneuver statistics of a trajectory.

use nalgebra::{DVector, Vector3};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::dynamics::Dynamics;
use crate::opt::{objective, trapezoid_weights, Trajectory};
use crate::quat::{attitude_error_raw, Quaternion};
use crate::regulator::CostFunctional;

/// Attitude error (degrees) below which a maneuver counts as settled.
pub const SETTLE_THRESHOLD_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManeuverMetrics {
    /// Objective value.
    pub maneuver_cost: f64,
    /// `∫ Σ|uᵢ| dt` (N·m·s).
    pub control_effort: f64,
    /// Mechanical shaft energy of the wheel and gimbal motors (J).
    pub maneuver_energy: f64,
    /// Time after which the attitude error stays below
    /// [`SETTLE_THRESHOLD_DEG`] (s); the horizon if it never settles.
    pub maneuver_time: f64,
    pub final_att_error: f64,
    pub max_ug: f64,
    pub max_uw: f64,
}

/// Attitude error to the target at every node, in degrees.
pub fn attitude_errors_deg(dynamics: &Dynamics, traj: &Trajectory, x_d: &DVector<f64>) -> Vec<f64> {
    let q_rows = dynamics.layout().q();
    let q_d = Quaternion::from_slice(&x_d.as_slice()[q_rows.clone()]);
    traj.states()
        .iter()
        .map(|x| attitude_error_raw(&Quaternion::from_slice(&x.as_slice()[q_rows.clone()]), &q_d).to_degrees())
        .collect()
}

/// Metrics of `traj` against the target `cost.x_d`, all by the trapezoid
/// rule on the grid.
pub fn metrics(dynamics: &Dynamics, traj: &Trajectory, cost: &CostFunctional) -> ManeuverMetrics {
    let l = dynamics.layout();
    let geom = dynamics.geometry();
    let weights = trapezoid_weights(traj.times());

    let mut effort = 0.0;
    let mut energy = 0.0;
    let (mut max_ug, mut max_uw) = (0.0f64, 0.0f64);
    for ((x, u), w) in traj.states().iter().zip(traj.controls()).zip(&weights) {
        let u_g = u.rows_range(l.u_g());
        let u_w = u.rows_range(l.u_w());
        effort += w * u.abs().sum();
        max_ug = max_ug.max(u_g.amax());
        max_uw = max_uw.max(u_w.amax());

        let omega = Vector3::from_column_slice(&x.as_slice()[l.omega()]);
        let delta = x.rows_range(l.delta()).into_owned();
        let spin = geom.frame_matrices(&delta).spin;
        let wheel_rate = x.rows_range(l.h_swr()).component_div(geom.j_sw()) + spin.transpose() * omega;
        let gimbal_rate = x.rows_range(l.h_ga()).component_div(geom.j_g()) - geom.gimbal_axes().transpose() * omega;
        let power = u_w.component_mul(&wheel_rate).abs().sum() + u_g.component_mul(&gimbal_rate).abs().sum();
        energy += w * power;
    }

    let errors = attitude_errors_deg(dynamics, traj, &cost.x_d);
    let times = traj.times();
    let maneuver_time = match errors.iter().rposition(|e| *e >= SETTLE_THRESHOLD_DEG) {
        None => times[0],
        Some(k) if k + 1 < times.len() => times[k + 1],
        Some(_) => traj.horizon(),
    };

    ManeuverMetrics {
        maneuver_cost: objective(cost, traj),
        control_effort: effort,
        maneuver_energy: energy,
        maneuver_time,
        final_att_error: errors[errors.len() - 1],
        max_ug,
        max_uw,
    }
}
