//! Sampled state/control curves.
//!
//! Controls are linear between grid nodes and states are cubic Hermite
//! segments whose node derivatives are `f(x_k, u_k)`. Feasibility is checked
//! interval by interval: integrating from `x_k` under the interpolated
//! control must land on `x_{k+1}`. Long open-loop re-integration is not a
//! usable test because the attitude and gimbal modes are neutral or weakly
//! unstable without feedback and amplify node-level errors.

use nalgebra::DVector;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::dynamics::Dynamics;
use crate::integrate::{Dopri5, Tolerances};
use crate::{Error, Result};

/// Linear interpolation of node values inside interval `k`.
pub(crate) fn lerp(times: &[f64], values: &[DVector<f64>], k: usize, t: f64) -> DVector<f64> {
    let s = (t - times[k]) / (times[k + 1] - times[k]);
    &values[k] * (1.0 - s) + &values[k + 1] * s
}

/// Index of the interval containing `t` (clamped to the grid).
pub(crate) fn interval(times: &[f64], t: f64) -> usize {
    let n = times.len();
    match times.binary_search_by(|p| p.total_cmp(&t)) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    controls: Vec<DVector<f64>>,
}

/// Cubic Hermite interpolation inside interval `k` with node derivatives.
fn hermite(
    times: &[f64],
    values: &[DVector<f64>],
    slopes: &[DVector<f64>],
    k: usize,
    t: f64,
) -> DVector<f64> {
    let h = times[k + 1] - times[k];
    let s = (t - times[k]) / h;
    let (s2, s3) = (s * s, s * s * s);
    &values[k] * (2.0 * s3 - 3.0 * s2 + 1.0)
        + &slopes[k] * ((s3 - 2.0 * s2 + s) * h)
        + &values[k + 1] * (-2.0 * s3 + 3.0 * s2)
        + &slopes[k + 1] * ((s3 - s2) * h)
}

impl Trajectory {
    /// Integrates `x0` forward under the piecewise-linear controls.
    pub fn simulate(
        dynamics: &Dynamics,
        x0: &DVector<f64>,
        times: &[f64],
        controls: Vec<DVector<f64>>,
        tol: Tolerances,
    ) -> Result<Self> {
        check_grid(times)?;
        if controls.len() != times.len() {
            return Err(Error::Trajectory("one control sample per grid node required".into()));
        }
        let mut solver = Dopri5::new(tol);
        let states = solver.solve_grid(
            |k, t, x| dynamics.f(x, &lerp(times, &controls, k, t)),
            times,
            x0,
        )?;
        Ok(Self { times: times.to_vec(), states, controls })
    }

    /// Assembles a trajectory from stored samples without re-integrating
    /// (e.g. when reading files); shapes and grid are validated.
    pub fn from_samples(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        controls: Vec<DVector<f64>>,
    ) -> Result<Self> {
        check_grid(&times)?;
        if states.len() != times.len() || controls.len() != times.len() {
            return Err(Error::Trajectory("sample counts differ from the grid length".into()));
        }
        let (n, nu) = (states[0].len(), controls[0].len());
        if states.iter().any(|x| x.len() != n) || controls.iter().any(|u| u.len() != nu) {
            return Err(Error::Trajectory("inconsistent sample dimensions".into()));
        }
        Ok(Self { times, states, controls })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Control at time `t` (linear between nodes).
    pub fn control_at(&self, t: f64) -> DVector<f64> {
        lerp(&self.times, &self.controls, interval(&self.times, t), t)
    }

    /// State at time `t` by cubic Hermite interpolation with node
    /// derivatives `f(x_k, u_k)`.
    pub fn state_at(&self, dynamics: &Dynamics, t: f64) -> DVector<f64> {
        let k = interval(&self.times, t);
        let slopes = [
            dynamics.f(&self.states[k], &self.controls[k]),
            dynamics.f(&self.states[k + 1], &self.controls[k + 1]),
        ];
        hermite(&self.times[k..k + 2], &self.states[k..k + 2], &slopes, 0, t)
    }

    /// `f(x_k, u_k)` at every node.
    pub fn node_derivatives(&self, dynamics: &Dynamics) -> Vec<DVector<f64>> {
        self.states.iter().zip(&self.controls).map(|(x, u)| dynamics.f(x, u)).collect()
    }

    /// Largest one-interval re-integration defect, relative to the state
    /// norm: `max_k ‖Φ_k(x_k) − x_{k+1}‖∞ / max(1, ‖x_{k+1}‖∞)` with `Φ_k`
    /// the flow over `[t_k, t_{k+1}]` under the interpolated control.
    pub fn reintegration_residual(&self, dynamics: &Dynamics, tol: Tolerances) -> Result<f64> {
        let mut solver = Dopri5::new(tol);
        let mut worst = 0.0f64;
        for k in 0..self.times.len() - 1 {
            let mut rhs = |t: f64, x: &DVector<f64>| dynamics.f(x, &lerp(&self.times, &self.controls, k, t));
            let end = solver.step_to(&mut rhs, self.times[k], &self.states[k], self.times[k + 1])?;
            let target = &self.states[k + 1];
            worst = worst.max((end - target).amax() / target.amax().max(1.0));
        }
        Ok(worst)
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Trajectory("grid needs at least two nodes".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Trajectory("grid must be finite and strictly increasing".into()));
    }
    Ok(())
}
