//! Projection-operator Newton method.
//!
//! Every iterate is a feasible trajectory. An iteration designs a
//! time-varying regulator `K(t)` along the current trajectory `ξ`, solves a
//! time-varying LQ problem for a descent direction `ζ = (z, v)` and searches
//! along `γ ↦ P(ξ + γζ)`, where the projection `P` closes the loop
//! `u = μ + K(α − x)` around the (generally infeasible) curve `(α, μ)`.

use nalgebra::{DMatrix, DVector};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::dynamics::{Dynamics, LinearizedDynamics};
use crate::integrate::{Dopri5, Tolerances};
use crate::opt::{interval, Trajectory};
use crate::regulator::{assemble_control_weight, assemble_state_weight, tangent_lqr, CostFunctional, LqrWeights};
use crate::{Error, Result};

/// Time-varying feedback gain sampled on a grid, linear between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Regulator {
    times: Vec<f64>,
    gains: Vec<DMatrix<f64>>,
}

impl Regulator {
    pub fn new(times: Vec<f64>, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.len() < 2 || gains.len() != times.len() {
            return Err(Error::Trajectory("one gain per grid node required".into()));
        }
        if gains.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
            return Err(Error::Trajectory("regulator gain is not finite".into()));
        }
        Ok(Self { times, gains })
    }

    /// The same gain at every node of `times`.
    pub fn constant(times: &[f64], gain: DMatrix<f64>) -> Self {
        Self { times: times.to_vec(), gains: vec![gain; times.len()] }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn gain_at(&self, t: f64) -> DMatrix<f64> {
        let k = interval(&self.times, t);
        blend(&self.gains, k, fraction(&self.times, k, t))
    }
}

fn fraction(times: &[f64], k: usize, t: f64) -> f64 {
    (t - times[k]) / (times[k + 1] - times[k])
}

fn blend(values: &[DMatrix<f64>], k: usize, s: f64) -> DMatrix<f64> {
    &values[k] * (1.0 - s) + &values[k + 1] * s
}

fn blend_vec(values: &[DVector<f64>], k: usize, s: f64) -> DVector<f64> {
    &values[k] * (1.0 - s) + &values[k + 1] * s
}

fn to_vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn to_mat(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// Analytic Jacobians at every node.
pub fn linearize_along(dynamics: &Dynamics, traj: &Trajectory) -> Vec<LinearizedDynamics> {
    traj.states().iter().zip(traj.controls()).map(|(x, u)| dynamics.linearize(x, u)).collect()
}

/// Trapezoid quadrature weights of a grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * (times[k + 1] - times[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Objective of a trajectory: trapezoid rule over the nodes for the running
/// cost plus the terminal cost.
pub fn objective(cost: &CostFunctional, traj: &Trajectory) -> f64 {
    let w = trapezoid_weights(traj.times());
    let running: f64 = traj
        .states()
        .iter()
        .zip(traj.controls())
        .zip(&w)
        .map(|((x, u), w)| w * cost.stage_cost(x, u))
        .sum();
    running + cost.terminal_cost(traj.final_state())
}

/// Integrates `dy/dt = −g(k, s, y)` backward from `y(T) = y_end` and returns
/// the node values in forward time order. `g` receives the interval `k` and
/// the position `s ∈ [0, 1]` inside it.
fn sweep_backward<G>(times: &[f64], y_end: DVector<f64>, tol: Tolerances, bound: f64, mut g: G) -> Result<Vec<DVector<f64>>>
where
    G: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    let n = times.len();
    let t_end = times[n - 1];
    let reversed: Vec<f64> = times.iter().rev().map(|t| t_end - t).collect();
    let mut solver = Dopri5::new(tol).with_state_bound(bound);
    let mut out = solver
        .solve_grid(
            |j, s, y| {
                let k = n - 2 - j;
                g(k, fraction(times, k, t_end - s), y)
            },
            &reversed,
            &y_end,
        )
        .map_err(|e| match e {
            Error::Integration { t, .. } => Error::RiccatiBlowUp { t: t_end - t },
            other => other,
        })?;
    out.reverse();
    Ok(out)
}

/// Time-varying projection regulator along `traj`.
///
/// Solves `−Ṗ = AᵀP + PA − P B R⁻¹ Bᵀ P + Π Q_c Π` backward with
/// `Π(x) = MᵀM` the tangent projector at each sample and `P(T)` the lifted
/// ARE solution at `x(T)` (the projected state weight if that design fails).
/// The gain is `K = R⁻¹ Bᵀ P Π`, so it ignores normal directions.
pub fn tv_regulator(dynamics: &Dynamics, traj: &Trajectory, weights: &LqrWeights, tol: Tolerances) -> Result<Regulator> {
    let lin = linearize_along(dynamics, traj);
    tv_regulator_with(dynamics, traj, &lin, weights, tol)
}

pub(crate) fn tv_regulator_with(
    dynamics: &Dynamics,
    traj: &Trajectory,
    lin: &[LinearizedDynamics],
    weights: &LqrWeights,
    tol: Tolerances,
) -> Result<Regulator> {
    weights.validate()?;
    let n = dynamics.layout().state_dim();
    let q_c = assemble_state_weight(weights, dynamics.m());
    let r_inv = DMatrix::from_diagonal(&assemble_control_weight(weights, dynamics.m()).map_diagonal(|v| 1.0 / v));
    let projectors = traj
        .states()
        .iter()
        .map(|x| dynamics.tangent_basis(x).map(|b| b.projector()))
        .collect::<Result<Vec<_>>>()?;
    let q_nodes: Vec<DMatrix<f64>> = projectors.iter().map(|p| p * &q_c * p).collect();
    let s_nodes: Vec<DMatrix<f64>> = lin.iter().map(|l| &l.b * &r_inv * l.b.transpose()).collect();
    let a_nodes: Vec<DMatrix<f64>> = lin.iter().map(|l| l.a.clone()).collect();
    let p_end = match tangent_lqr(dynamics, traj.final_state(), weights) {
        Ok(design) => design.lifted.p,
        Err(e) => {
            log::warn!("terminal regulator design failed ({e}); using the projected state weight");
            q_nodes[q_nodes.len() - 1].clone()
        }
    };
    let bound = 1e8 * (1.0 + p_end.amax());
    let nodes = sweep_backward(traj.times(), to_vec(&p_end), tol, bound, |k, s, y| {
        let p = to_mat(y.as_slice(), n);
        let pa = &p * blend(&a_nodes, k, s);
        let rhs = &pa + pa.transpose() - &p * blend(&s_nodes, k, s) * &p + blend(&q_nodes, k, s);
        to_vec(&((&rhs + rhs.transpose()) * 0.5))
    })?;
    let gains = nodes
        .iter()
        .zip(lin)
        .zip(&projectors)
        .map(|((p, l), pi)| &r_inv * l.b.transpose() * to_mat(p.as_slice(), n) * pi)
        .collect();
    Regulator::new(traj.times().to_vec(), gains)
}

/// Local model used for the descent direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Cost Hessian with linearized dynamics (Gauss-Newton).
    First,
    /// Adds the curvature of the dynamics weighted by the closed-loop
    /// costate.
    Second,
}

/// Search direction sampled at the trajectory nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub direction: Direction,
    /// Directional derivative of the objective along the direction.
    pub theta: f64,
    /// Model actually used.
    pub order: Order,
    /// Set when a second-order request fell back to first order.
    pub fell_back: bool,
}

/// Hessian blocks of the LQ model, either one constant set or one per node.
struct Curvature {
    xx: Vec<DMatrix<f64>>,
    xu: Vec<DMatrix<f64>>,
    uu: Vec<DMatrix<f64>>,
}

impl Curvature {
    fn index(&self, k: usize) -> usize {
        if self.xx.len() == 1 {
            0
        } else {
            k
        }
    }

    fn at(&self, k: usize, s: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        if self.xx.len() == 1 {
            (self.xx[0].clone(), self.xu[0].clone(), self.uu[0].clone())
        } else {
            (blend(&self.xx, k, s), blend(&self.xu, k, s), blend(&self.uu, k, s))
        }
    }
}

/// Solves the time-varying LQ subproblem along `traj` for a descent
/// direction of the objective.
///
/// A second-order request falls back to first order when a gain block stops
/// being positive definite, the Riccati sweep blows up, or the resulting
/// direction is not a descent direction.
pub fn descent_direction(
    dynamics: &Dynamics,
    traj: &Trajectory,
    cost: &CostFunctional,
    regulator: &Regulator,
    order: Order,
    tol: Tolerances,
) -> Result<Descent> {
    let lin = linearize_along(dynamics, traj);
    descent_with(dynamics, traj, &lin, cost, regulator, order, tol)
}

pub(crate) fn descent_with(
    dynamics: &Dynamics,
    traj: &Trajectory,
    lin: &[LinearizedDynamics],
    cost: &CostFunctional,
    regulator: &Regulator,
    order: Order,
    tol: Tolerances,
) -> Result<Descent> {
    let n = dynamics.layout().state_dim();
    let nu = dynamics.layout().control_dim();
    let grad_x: Vec<DVector<f64>> = traj.states().iter().map(|x| &cost.q * (x - &cost.x_d)).collect();
    let grad_u: Vec<DVector<f64>> = traj.controls().iter().map(|u| &cost.r * u).collect();
    let grad_end = &cost.p * (traj.final_state() - &cost.x_d);

    let first = || Curvature { xx: vec![cost.q.clone()], xu: vec![DMatrix::zeros(n, nu)], uu: vec![cost.r.clone()] };
    if order == Order::Second {
        let attempt = second_order_curvature(dynamics, traj, lin, &grad_x, &grad_u, &grad_end, cost, regulator, tol)
            .and_then(|w| solve_lq(dynamics, traj, lin, &w, &grad_x, &grad_u, &grad_end, &cost.p, regulator, tol));
        match attempt {
            Ok((direction, theta)) if theta < 0.0 && theta.is_finite() => {
                return Ok(Descent { direction, theta, order: Order::Second, fell_back: false });
            }
            Ok((_, theta)) => log::debug!("second-order model gave θ = {theta:e}; falling back"),
            Err(e) => log::debug!("second-order model rejected ({e}); falling back"),
        }
        let (direction, theta) = solve_lq(dynamics, traj, lin, &first(), &grad_x, &grad_u, &grad_end, &cost.p, regulator, tol)?;
        return Ok(Descent { direction, theta, order: Order::First, fell_back: true });
    }
    let (direction, theta) = solve_lq(dynamics, traj, lin, &first(), &grad_x, &grad_u, &grad_end, &cost.p, regulator, tol)?;
    Ok(Descent { direction, theta, order: Order::First, fell_back: false })
}

/// `Q + Σ λᵢ ∇²fᵢ` blocks with `λ` the costate of the closed loop under the
/// projection regulator.
#[allow(clippy::too_many_arguments)]
fn second_order_curvature(
    dynamics: &Dynamics,
    traj: &Trajectory,
    lin: &[LinearizedDynamics],
    grad_x: &[DVector<f64>],
    grad_u: &[DVector<f64>],
    grad_end: &DVector<f64>,
    cost: &CostFunctional,
    regulator: &Regulator,
    tol: Tolerances,
) -> Result<Curvature> {
    let n = dynamics.layout().state_dim();
    let nu = dynamics.layout().control_dim();
    let gains = regulator.gains();
    if gains.len() != traj.len() {
        return Err(Error::Trajectory("regulator grid differs from the trajectory grid".into()));
    }
    let bound = 1e8 * (1.0 + grad_end.amax() + grad_x.iter().map(|g| g.amax()).fold(0.0, f64::max));
    let a_cl: Vec<DMatrix<f64>> = lin.iter().zip(gains).map(|(l, k)| (&l.a - &l.b * k).transpose()).collect();
    let forcing: Vec<DVector<f64>> =
        grad_x.iter().zip(grad_u).zip(gains).map(|((a, b), k)| a - k.transpose() * b).collect();
    let lambda = sweep_backward(traj.times(), grad_end.clone(), tol, bound, |k, s, y| {
        blend(&a_cl, k, s) * y + blend_vec(&forcing, k, s)
    })?;

    let mut curv = Curvature { xx: Vec::new(), xu: Vec::new(), uu: Vec::new() };
    for ((x, u), l) in traj.states().iter().zip(traj.controls()).zip(&lambda) {
        let h = lagrangian_hessian(dynamics, x, u, l);
        let uu = &cost.r + h.view((n, n), (nu, nu));
        if uu.clone().cholesky().is_none() {
            return Err(Error::Parameter("second-order control Hessian is not positive definite".into()));
        }
        curv.xx.push(&cost.q + h.view((0, 0), (n, n)));
        curv.xu.push(h.view((0, n), (n, nu)).into_owned());
        curv.uu.push(uu);
    }
    Ok(curv)
}

/// `∇²(λᵀf)` over `(x, u)` by central differences of the analytic Jacobian.
pub fn lagrangian_hessian(dynamics: &Dynamics, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let dim = n + u.len();
    let gradient = |x: &DVector<f64>, u: &DVector<f64>| {
        let lin = dynamics.linearize(x, u);
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, n).copy_from(&(lin.a.transpose() * lambda));
        g.rows_mut(n, dim - n).copy_from(&(lin.b.transpose() * lambda));
        g
    };
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let (mut xp, mut up, mut xm, mut um) = (x.clone(), u.clone(), x.clone(), u.clone());
        let base = if j < n { x[j] } else { u[j - n] };
        let step = 1e-6 * base.abs().max(1.0);
        if j < n {
            xp[j] += step;
            xm[j] -= step;
        } else {
            up[j - n] += step;
            um[j - n] -= step;
        }
        h.set_column(j, &((gradient(&xp, &up) - gradient(&xm, &um)) / (2.0 * step)));
    }
    (&h + h.transpose()) * 0.5
}

/// Riccati/costate sweep, feedback reconstruction of `v` and the exact
/// linearized response `z`. Returns the direction and `θ`.
#[allow(clippy::too_many_arguments)]
fn solve_lq(
    dynamics: &Dynamics,
    traj: &Trajectory,
    lin: &[LinearizedDynamics],
    w: &Curvature,
    grad_x: &[DVector<f64>],
    grad_u: &[DVector<f64>],
    grad_end: &DVector<f64>,
    p_end: &DMatrix<f64>,
    regulator: &Regulator,
    tol: Tolerances,
) -> Result<(Direction, f64)> {
    let n = dynamics.layout().state_dim();
    let times = traj.times();
    let uu_inv_nodes = w
        .uu
        .iter()
        .map(|uu| uu.clone().cholesky().map(|c| c.inverse()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Parameter("control Hessian is not positive definite".into()))?;

    let mut y_end = DVector::zeros(n * n + n);
    y_end.rows_mut(0, n * n).copy_from(&to_vec(p_end));
    y_end.rows_mut(n * n, n).copy_from(grad_end);
    let bound = 1e8 * (1.0 + y_end.amax() + grad_x.iter().map(|g| g.amax()).fold(0.0, f64::max));
    let a_nodes = lin_a(lin);
    let b_nodes = lin_b(lin);
    let nodes = sweep_backward(times, y_end, tol, bound, |k, s, y| {
        let p = to_mat(&y.as_slice()[..n * n], n);
        let r = y.rows(n * n, n);
        let a = blend(&a_nodes, k, s);
        let b = blend(&b_nodes, k, s);
        let (wxx, wxu, wuu) = w.at(k, s);
        let uu_inv = if w.uu.len() == 1 {
            uu_inv_nodes[0].clone()
        } else {
            match wuu.clone().cholesky() {
                Some(c) => c.inverse(),
                None => return DVector::from_element(y.len(), f64::NAN),
            }
        };
        let ko = &uu_inv * (wxu.transpose() + b.transpose() * &p);
        let pa = &p * &a;
        let dp = &pa + pa.transpose() - ko.transpose() * &wuu * &ko + wxx;
        let dp = (&dp + dp.transpose()) * 0.5;
        let dr = (&a - &b * &ko).transpose() * r + blend_vec(grad_x, k, s) - ko.transpose() * blend_vec(grad_u, k, s);
        let mut out = DVector::zeros(y.len());
        out.rows_mut(0, n * n).copy_from(&to_vec(&dp));
        out.rows_mut(n * n, n).copy_from(&dr);
        out
    })?;

    // Feedback form of the minimizer at the nodes.
    let mut k_o = Vec::with_capacity(times.len());
    let mut v_o = Vec::with_capacity(times.len());
    for (k, y) in nodes.iter().enumerate() {
        let p = to_mat(&y.as_slice()[..n * n], n);
        let r = y.rows(n * n, n);
        let i = w.index(k);
        let uu_inv = &uu_inv_nodes[i];
        k_o.push(uu_inv * (w.xu[i].transpose() + lin[k].b.transpose() * &p));
        v_o.push(-(uu_inv * (lin[k].b.transpose() * r + &grad_u[k])));
    }

    // Closed-loop LQ response on the interpolated linearization gives v.
    let a_cl: Vec<DMatrix<f64>> = lin.iter().zip(&k_o).map(|(l, k)| &l.a - &l.b * k).collect();
    let drive: Vec<DVector<f64>> = lin.iter().zip(&v_o).map(|(l, v)| &l.b * v).collect();
    let mut solver = Dopri5::new(tol);
    let z_lq = solver.solve_grid(
        |k, t, z| {
            let s = fraction(times, k, t);
            blend(&a_cl, k, s) * z + blend_vec(&drive, k, s)
        },
        times,
        &DVector::zeros(n),
    )?;
    let v: Vec<DVector<f64>> = z_lq.iter().zip(&k_o).zip(&v_o).map(|((z, k), vo)| vo - k * z).collect();

    let Direction { z, v } = tangent_projection(dynamics, traj, &z_lq, &v, regulator, tol)?;
    let wts = trapezoid_weights(times);
    let mut theta: f64 = (0..times.len()).map(|k| wts[k] * (grad_x[k].dot(&z[k]) + grad_u[k].dot(&v[k]))).sum();
    theta += grad_end.dot(&z[times.len() - 1]);
    Ok((Direction { z, v }, theta))
}

fn lin_a(lin: &[LinearizedDynamics]) -> Vec<DMatrix<f64>> {
    lin.iter().map(|l| l.a.clone()).collect()
}

fn lin_b(lin: &[LinearizedDynamics]) -> Vec<DMatrix<f64>> {
    lin.iter().map(|l| l.b.clone()).collect()
}

/// Flow over `[t0, t1]` from `x` under the control ramp `u_a → u_b`,
/// started from a fresh step-size estimate so that the result depends only
/// on the arguments.
#[allow(clippy::too_many_arguments)]
fn ramp_flow(
    dynamics: &Dynamics,
    solver: &mut Dopri5,
    t0: f64,
    t1: f64,
    x: &DVector<f64>,
    u_a: &DVector<f64>,
    u_b: &DVector<f64>,
) -> Result<DVector<f64>> {
    solver.reset();
    let h = t1 - t0;
    let mut rhs = |t: f64, x: &DVector<f64>| {
        let s = (t - t0) / h;
        dynamics.f(x, &(u_a * (1.0 - s) + u_b * s))
    };
    solver.step_to(&mut rhs, t0, x, t1)
}

/// `∂x(t0 + h)/∂u_b` for the ramp `u_a → u_b` on a frozen linearization,
/// from the exponential of the input-augmented system matrix.
fn ramp_sensitivity(lin: &LinearizedDynamics, h: f64) -> DMatrix<f64> {
    let (n, nu) = lin.b.shape();
    let mut m = DMatrix::zeros(n + 2 * nu, n + 2 * nu);
    m.view_mut((0, 0), (n, n)).copy_from(&(&lin.a * h));
    m.view_mut((0, n), (n, nu)).copy_from(&(&lin.b * h));
    m.view_mut((n, n + nu), (nu, nu)).fill_with_identity();
    #[cfg(feature = "std")]
    let e = m.exp();
    #[cfg(not(feature = "std"))]
    let e = crate::linalg::expm(&m);
    e.view((0, n + nu), (n, nu)).into_owned()
}

/// Linearization of the projection at `traj` applied to `(z_ref, v_ref)`:
/// the node feedback `v_k = v_ref,k + K_k(z_ref,k − z_k)` closes the loop
/// around the exact variational flow, integrated interval by interval from
/// `(x_k, z_k)` with `ż = ∂f/∂x z + ∂f/∂u v`. The result satisfies the
/// linearized dynamics to integrator tolerance, and it is the exact
/// derivative of `γ ↦ P(ξ + γζ)` at `γ = 0`.
pub fn tangent_projection(
    dynamics: &Dynamics,
    traj: &Trajectory,
    z_ref: &[DVector<f64>],
    v_ref: &[DVector<f64>],
    regulator: &Regulator,
    tol: Tolerances,
) -> Result<Direction> {
    let n = dynamics.layout().state_dim();
    let nu = dynamics.layout().control_dim();
    let times = traj.times();
    let controls = traj.controls();
    let gains = regulator.gains();
    if z_ref.len() != times.len() || v_ref.len() != times.len() || gains.len() != times.len() {
        return Err(Error::Trajectory("direction or regulator grid differs from the trajectory grid".into()));
    }
    let mut solver = Dopri5::new(tol);
    let mut z = Vec::with_capacity(times.len());
    let mut v = Vec::with_capacity(times.len());
    z.push(DVector::zeros(n));
    v.push(&v_ref[0] + &gains[0] * &z_ref[0]);
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let mut y0 = DVector::zeros(2 * n);
        y0.rows_mut(0, n).copy_from(&traj.states()[k]);
        y0.rows_mut(n, n).copy_from(&z[k]);
        let mut dv = v_ref[k + 1].clone();
        let mut jacobian = None;
        let mut accepted = None;
        for _ in 0..NODE_SOLVE_ITERS {
            let v_a = &v[k];
            let mut rhs = |t: f64, y: &DVector<f64>| {
                let s = (t - t0) / h;
                let x = y.rows(0, n).into_owned();
                let dz = y.rows(n, n).into_owned();
                let u = &controls[k] * (1.0 - s) + &controls[k + 1] * s;
                let (fx, fz) = dynamics.f_and_jvp(&x, &u, &dz, &(v_a * (1.0 - s) + &dv * s));
                let mut out = DVector::zeros(2 * n);
                out.rows_mut(0, n).copy_from(&fx);
                out.rows_mut(n, n).copy_from(&fz);
                out
            };
            solver.reset();
            let y = solver.step_to(&mut rhs, t0, &y0, t1)?;
            let z1 = y.rows(n, n).into_owned();
            let residual = &dv - &v_ref[k + 1] - &gains[k + 1] * (&z_ref[k + 1] - &z1);
            if !residual.iter().all(|r| r.is_finite()) {
                break;
            }
            if residual.amax() <= 1e-11 * (1.0 + dv.amax()) {
                accepted = Some(z1);
                break;
            }
            let lu = jacobian.get_or_insert_with(|| {
                let lin = dynamics.linearize(&traj.states()[k], &controls[k]);
                (DMatrix::identity(nu, nu) + &gains[k + 1] * ramp_sensitivity(&lin, h)).lu()
            });
            match lu.solve(&residual) {
                Some(step) => dv -= step,
                None => break,
            }
        }
        let z1 = accepted.ok_or_else(|| Error::Integration {
            t: t1,
            reason: "linearized node update did not converge".into(),
        })?;
        z.push(z1);
        v.push(dv);
    }
    Ok(Direction { z, v })
}

/// Projects the curve `(α, μ)` stored in `curve` onto the trajectory
/// manifold from `x0`.
///
/// The feedback `u = μ + K(α − x)` is imposed at the grid nodes and the
/// control is linear in between, so the result is exactly representable:
/// on each interval `x_{k+1} = Φ_k(x_k; u_k, u_{k+1})` where `Φ_k` is the
/// flow under the control ramp, and `u_{k+1} = μ_{k+1} + K_{k+1}(α_{k+1} −
/// x_{k+1})` is solved by a quasi-Newton iteration. A curve that already
/// satisfies these relations is returned unchanged.
pub fn project(
    dynamics: &Dynamics,
    curve: &Trajectory,
    regulator: &Regulator,
    x0: &DVector<f64>,
    tol: Tolerances,
) -> Result<Trajectory> {
    closed_loop(dynamics, curve.times(), curve.states(), curve.controls(), regulator, x0, tol)
}

/// `P(ξ + γζ)` started from `ξ(0)`.
pub fn project_step(
    dynamics: &Dynamics,
    base: &Trajectory,
    direction: &Direction,
    gamma: f64,
    regulator: &Regulator,
    tol: Tolerances,
) -> Result<Trajectory> {
    if direction.z.len() != base.len() || direction.v.len() != base.len() {
        return Err(Error::Trajectory("direction grid differs from the trajectory grid".into()));
    }
    let alpha: Vec<DVector<f64>> = base.states().iter().zip(&direction.z).map(|(x, z)| x + z * gamma).collect();
    let mu: Vec<DVector<f64>> = base.controls().iter().zip(&direction.v).map(|(u, v)| u + v * gamma).collect();
    closed_loop(dynamics, base.times(), &alpha, &mu, regulator, base.initial_state(), tol)
}

/// Iteration cap of the per-node feedback solve.
const NODE_SOLVE_ITERS: usize = 50;

fn closed_loop(
    dynamics: &Dynamics,
    times: &[f64],
    alpha: &[DVector<f64>],
    mu: &[DVector<f64>],
    regulator: &Regulator,
    x0: &DVector<f64>,
    tol: Tolerances,
) -> Result<Trajectory> {
    if regulator.times().len() != times.len() || alpha.len() != times.len() || mu.len() != times.len() {
        return Err(Error::Trajectory("regulator or curve grid differs from the trajectory grid".into()));
    }
    let nu = mu[0].len();
    let gains = regulator.gains();
    let mut solver = Dopri5::new(tol);
    let mut states = Vec::with_capacity(times.len());
    let mut controls = Vec::with_capacity(times.len());
    states.push(x0.clone());
    controls.push(&mu[0] + &gains[0] * (&alpha[0] - x0));
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let mut u = mu[k + 1].clone();
        let mut jacobian = None;
        let mut accepted = None;
        for _ in 0..NODE_SOLVE_ITERS {
            let x = ramp_flow(dynamics, &mut solver, t0, t1, &states[k], &controls[k], &u)?;
            let residual = &u - &mu[k + 1] - &gains[k + 1] * (&alpha[k + 1] - &x);
            if !residual.iter().all(|r| r.is_finite()) {
                break;
            }
            if residual.amax() <= 1e-11 * (1.0 + u.amax()) {
                accepted = Some(x);
                break;
            }
            let lu = jacobian.get_or_insert_with(|| {
                let lin = dynamics.linearize(&states[k], &controls[k]);
                (DMatrix::identity(nu, nu) + &gains[k + 1] * ramp_sensitivity(&lin, t1 - t0)).lu()
            });
            match lu.solve(&residual) {
                Some(step) => u -= step,
                None => break,
            }
        }
        let x = accepted.ok_or_else(|| Error::Integration {
            t: t1,
            reason: "closed-loop node update did not converge".into(),
        })?;
        states.push(x);
        controls.push(u);
    }
    Trajectory::from_samples(times.to_vec(), states, controls)
}

/// Backtracking search from `γ = 1` on the projected objective with Armijo
/// acceptance `h(P(ξ + γζ)) ≤ h(ξ) + c γ θ`.
///
/// Returns `None` when `γ` drops below `min_step`. Projections that fail to
/// integrate count as rejected steps.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    dynamics: &Dynamics,
    traj: &Trajectory,
    descent: &Descent,
    cost: &CostFunctional,
    regulator: &Regulator,
    config: &SolverConfig,
) -> Result<Option<(f64, Trajectory, f64)>> {
    let current = objective(cost, traj);
    let mut gamma = 1.0;
    while gamma >= config.min_step {
        match project_step(dynamics, traj, &descent.direction, gamma, regulator, config.tolerances) {
            Ok(candidate) => {
                let h = objective(cost, &candidate);
                if h.is_finite() && h <= current + config.armijo * gamma * descent.theta {
                    return Ok(Some((gamma, candidate, h)));
                }
            }
            Err(e) => log::debug!("projection at γ = {gamma:e} failed: {e}"),
        }
        gamma *= config.contraction;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|θ|`.
    pub theta_tol: f64,
    /// Armijo constant.
    pub armijo: f64,
    /// Step contraction factor of the backtracking search.
    pub contraction: f64,
    /// Smallest step tried before the search is declared stalled.
    pub min_step: f64,
    /// Use the second-order model once the previous `|θ|` is below this
    /// value; `None` keeps first order throughout.
    pub second_order_below: Option<f64>,
    pub tolerances: Tolerances,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            theta_tol: 1e-6,
            armijo: 0.4,
            contraction: 0.5,
            min_step: 1e-8,
            second_order_below: Some(1e-3),
            tolerances: Tolerances::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.theta_tol, self.min_step, self.tolerances.abs, self.tolerances.rel];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("solver tolerances must be positive".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0 && self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::Parameter("line-search constants must lie in (0, 1)".into()));
        }
        if matches!(self.second_order_below, Some(v) if !(v > 0.0)) {
            return Err(Error::Parameter("second-order switch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective of the iterate the direction was computed at.
    pub cost: f64,
    pub theta: f64,
    /// Accepted step, `None` on the last record of a converged or stalled
    /// run.
    pub step: Option<f64>,
    pub order: Order,
    pub fell_back: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search found no acceptable step.
    Stalled,
    /// A regulator, descent or projection stage failed; see
    /// [`SolverReport::failure`].
    Failed,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    /// Last accepted iterate.
    pub trajectory: Trajectory,
    /// Objective of the projected initial guess.
    pub initial_cost: f64,
    final_cost: f64,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub failure: Option<Error>,
    /// Wall-clock seconds (only measured with the `std` feature).
    pub wall_clock: Option<f64>,
}

impl SolverReport {
    pub fn final_cost(&self) -> f64 {
        self.final_cost
    }

    pub fn final_theta(&self) -> Option<f64> {
        self.history.last().map(|r| r.theta)
    }
}

/// Minimizes the objective from `x0`, starting at the projection of `guess`.
///
/// Errors are returned only if the initial projection fails; later failures
/// end the run with [`Termination::Failed`] and keep the last iterate.
pub fn solve(
    dynamics: &Dynamics,
    x0: &DVector<f64>,
    cost: &CostFunctional,
    guess: &Trajectory,
    reg_weights: &LqrWeights,
    config: &SolverConfig,
) -> Result<SolverReport> {
    config.validate()?;
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();
    let tol = config.tolerances;

    let k0 = tv_regulator(dynamics, guess, reg_weights, tol)?;
    let mut traj = project(dynamics, guess, &k0, x0, tol)?;
    let mut current = objective(cost, &traj);
    let initial_cost = current;
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut failure = None;
    let mut last_theta: Option<f64> = None;

    for iteration in 0..config.max_iters {
        let lin = linearize_along(dynamics, &traj);
        let regulator = match tv_regulator_with(dynamics, &traj, &lin, reg_weights, tol) {
            Ok(k) => k,
            Err(e) => {
                termination = Termination::Failed;
                failure = Some(e);
                break;
            }
        };
        let order = match (config.second_order_below, last_theta) {
            (Some(switch), Some(theta)) if theta.abs() < switch => Order::Second,
            _ => Order::First,
        };
        let descent = match descent_with(dynamics, &traj, &lin, cost, &regulator, order, tol) {
            Ok(d) => d,
            Err(e) => {
                termination = Termination::Failed;
                failure = Some(e);
                break;
            }
        };
        let mut record = IterationRecord {
            iteration,
            cost: current,
            theta: descent.theta,
            step: None,
            order: descent.order,
            fell_back: descent.fell_back,
        };
        log::info!("iteration {iteration}: cost {current:.8e}, θ {:.3e}, {:?}", descent.theta, descent.order);
        if descent.theta.abs() <= config.theta_tol {
            history.push(record);
            termination = Termination::Converged;
            break;
        }
        if !(descent.theta < 0.0) {
            history.push(record);
            termination = Termination::Stalled;
            break;
        }
        match line_search(dynamics, &traj, &descent, cost, &regulator, config)? {
            Some((gamma, next, h)) => {
                record.step = Some(gamma);
                history.push(record);
                traj = next;
                current = h;
                last_theta = Some(descent.theta);
            }
            None => {
                history.push(record);
                termination = Termination::Stalled;
                break;
            }
        }
    }
    if termination == Termination::MaxIterations {
        // Certificate for the final iterate.
        let lin = linearize_along(dynamics, &traj);
        let theta = tv_regulator_with(dynamics, &traj, &lin, reg_weights, tol)
            .and_then(|k| descent_with(dynamics, &traj, &lin, cost, &k, Order::First, tol))
            .map(|d| d.theta)
            .unwrap_or(f64::NAN);
        history.push(IterationRecord {
            iteration: config.max_iters,
            cost: current,
            theta,
            step: None,
            order: Order::First,
            fell_back: false,
        });
    }

    #[cfg(feature = "std")]
    let wall_clock = Some(started.elapsed().as_secs_f64());
    #[cfg(not(feature = "std"))]
    let wall_clock = None;
    Ok(SolverReport { trajectory: traj, initial_cost, final_cost: current, history, termination, failure, wall_clock })
}
