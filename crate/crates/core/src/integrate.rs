//! Adaptive Dormand-Prince 5(4) integration of `ẋ = f(t, x)`.
//!
//! Grids are integrated one interval at a time so that every grid node is hit
//! exactly; the step-size estimate carries over between intervals.

use nalgebra::DVector;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-9 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    tol: Tolerances,
    max_steps: usize,
    state_bound: f64,
    h: Option<f64>,
    stats: Stats,
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Self { tol, max_steps: 100_000, state_bound: 1e8, h: None, stats: Stats::default() }
    }

    /// Maximum accepted + rejected steps per interval.
    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    /// Largest admissible max-abs state entry before the run is declared
    /// divergent.
    pub fn with_state_bound(mut self, bound: f64) -> Self {
        self.state_bound = bound;
        self
    }

    /// Forgets the step size carried over from the previous call, so the
    /// next call depends only on its arguments.
    pub fn reset(&mut self) {
        self.h = None;
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    fn error_norm(&self, x: &DVector<f64>, xn: &DVector<f64>, err: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let sc = self.tol.abs + self.tol.rel * x[i].abs().max(xn[i].abs());
            let r = err[i] / sc;
            acc += r * r;
        }
        (acc / x.len().max(1) as f64).sqrt()
    }

    fn initial_step<F>(&mut self, f: &mut F, t0: f64, x0: &DVector<f64>, k1: &DVector<f64>, span: f64) -> f64
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let scale = x0.map(|v| self.tol.abs + self.tol.rel * v.abs());
        let d0 = x0.component_div(&scale).norm() / (x0.len() as f64).sqrt();
        let d1 = k1.component_div(&scale).norm() / (x0.len() as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span.abs());
        let x1 = x0 + k1 * h0;
        let k2 = f(t0 + h0, &x1);
        self.stats.evaluations += 1;
        let d2 = (k2 - k1).component_div(&scale).norm() / (x0.len() as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span.abs())
    }

    /// Integrates from `(t0, x0)` to `t1 > t0`, landing on `t1` exactly.
    pub fn step_to<F>(&mut self, f: &mut F, t0: f64, x0: &DVector<f64>, t1: f64) -> Result<DVector<f64>>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        let span = t1 - t0;
        if span <= 0.0 {
            return if span == 0.0 {
                Ok(x0.clone())
            } else {
                Err(Error::Integration { t: t0, reason: "end time precedes start time".into() })
            };
        }
        let mut t = t0;
        let mut x = x0.clone();
        let mut k1 = f(t, &x);
        self.stats.evaluations += 1;
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(f, t0, x0, &k1, span),
        };
        let h_min = 1e-12 * t1.abs().max(1.0);
        let mut steps = 0;
        while t < t1 {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Integration { t, reason: "step limit exceeded".into() });
            }
            let last = t + h >= t1 - 1e-14 * t1.abs().max(1.0);
            let hs = if last { t1 - t } else { h };

            let k2 = f(t + C2 * hs, &(&x + &k1 * (A21 * hs)));
            let k3 = f(t + C3 * hs, &(&x + (&k1 * A31 + &k2 * A32) * hs));
            let k4 = f(t + C4 * hs, &(&x + (&k1 * A41 + &k2 * A42 + &k3 * A43) * hs));
            let k5 = f(t + C5 * hs, &(&x + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * hs));
            let k6 = f(
                t + hs,
                &(&x + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * hs),
            );
            let xn = &x + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * hs;
            let k7 = f(t + hs, &xn);
            self.stats.evaluations += 6;
            let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * hs;
            let en = self.error_norm(&x, &xn, &err);
            if !en.is_finite() {
                self.stats.rejected += 1;
                h = hs * 0.2;
                if h < h_min {
                    return Err(Error::Integration { t, reason: "non-finite state derivative".into() });
                }
                continue;
            }
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            if en <= 1.0 {
                self.stats.accepted += 1;
                t = if last { t1 } else { t + hs };
                x = xn;
                k1 = k7;
                if x.amax() > self.state_bound {
                    return Err(Error::Integration { t, reason: "state exceeded divergence bound".into() });
                }
                // keep the unclipped step as the next estimate
                if !last || hs >= h {
                    h = hs * fac;
                } else {
                    h = h.max(hs * fac);
                }
            } else {
                self.stats.rejected += 1;
                h = hs * fac.min(1.0);
                if h < h_min {
                    return Err(Error::Integration { t, reason: "step size underflow".into() });
                }
            }
        }
        self.h = Some(h);
        Ok(x)
    }

    /// Integrates across a strictly increasing grid and returns the state at
    /// every node (the first entry is `x0`). `f` receives the index of the
    /// current interval.
    pub fn solve_grid<F>(&mut self, mut f: F, grid: &[f64], x0: &DVector<f64>) -> Result<Vec<DVector<f64>>>
    where
        F: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
    {
        let mut out = Vec::with_capacity(grid.len());
        out.push(x0.clone());
        for k in 0..grid.len().saturating_sub(1) {
            let mut seg = |t: f64, x: &DVector<f64>| f(k, t, x);
            let next = self.step_to(&mut seg, grid[k], &out[k], grid[k + 1])?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Uniform grid `0, dt, …, T` with `round(T/dt)` intervals; the last node is
/// exactly `T`.
pub fn uniform_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter("horizon and grid spacing must be positive".into()));
    }
    let n = (horizon / dt).round().max(1.0) as usize;
    Ok((0..=n).map(|k| if k == n { horizon } else { k as f64 * horizon / n as f64 }).collect())
}
