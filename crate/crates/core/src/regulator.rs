//! Tangent-space LQR design at a target equilibrium and its lift to ambient
//! cost and gain matrices.

use nalgebra::{Complex, DMatrix, DVector};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::dynamics::{reduce, Dynamics, Layout, TangentBasis};
use crate::linalg;
use crate::{Error, Result};

/// Relative threshold of the numerical controllability test.
pub const CONTROLLABILITY_TOLERANCE: f64 = 1e-10;
/// Bound on `‖ARE residual‖ / ‖P_s‖`.
pub const ARE_TOLERANCE: f64 = 1e-8;

/// Per-block scalar weights of `Q_c` and `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrWeights {
    pub q: f64,
    pub h_swr: f64,
    pub omega: f64,
    pub delta: f64,
    pub h_ga: f64,
    pub u_g: f64,
    pub u_w: f64,
}

impl LqrWeights {
    /// Objective weights: `[5, 10, 0.1, 0.01, 50]`, `R = diag(1, 1)`.
    pub const fn cost_default() -> Self {
        Self { q: 5.0, h_swr: 10.0, omega: 0.1, delta: 0.01, h_ga: 50.0, u_g: 1.0, u_w: 1.0 }
    }

    /// Projection-regulator weights: `[3e4, 3, 200, 0.3, 3]·1e-4`,
    /// `R = diag(1, 3)·1e-5`.
    pub const fn regulator_default() -> Self {
        Self {
            q: 3.0,
            h_swr: 3e-4,
            omega: 2e-2,
            delta: 3e-5,
            h_ga: 3e-4,
            u_g: 1e-5,
            u_w: 3e-5,
        }
    }

    pub fn from_arrays(state: [f64; 5], control: [f64; 2]) -> Self {
        Self {
            q: state[0],
            h_swr: state[1],
            omega: state[2],
            delta: state[3],
            h_ga: state[4],
            u_g: control[0],
            u_w: control[1],
        }
    }

    pub fn state_array(&self) -> [f64; 5] {
        [self.q, self.h_swr, self.omega, self.delta, self.h_ga]
    }

    pub fn control_array(&self) -> [f64; 2] {
        [self.u_g, self.u_w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("state weights must be finite and nonnegative".into()));
        }
        if self.control_array().iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Parameter("control weights must be strictly positive".into()));
        }
        Ok(())
    }
}

/// `Q_c = diag([ρ_q 1₄; ρ_hswr 1_m; ρ_ω 1₃; ρ_δ 1_m; ρ_hga 1_m])`.
pub fn assemble_state_weight(w: &LqrWeights, m: usize) -> DMatrix<f64> {
    let l = Layout::new(m);
    let mut d = DVector::zeros(l.state_dim());
    d.rows_range_mut(l.q()).fill(w.q);
    d.rows_range_mut(l.h_swr()).fill(w.h_swr);
    d.rows_range_mut(l.omega()).fill(w.omega);
    d.rows_range_mut(l.delta()).fill(w.delta);
    d.rows_range_mut(l.h_ga()).fill(w.h_ga);
    DMatrix::from_diagonal(&d)
}

/// `R = diag([ρ_ug 1_m; ρ_uw 1_m])`.
pub fn assemble_control_weight(w: &LqrWeights, m: usize) -> DMatrix<f64> {
    let mut d = DVector::zeros(2 * m);
    d.rows_mut(0, m).fill(w.u_g);
    d.rows_mut(m, m).fill(w.u_w);
    DMatrix::from_diagonal(&d)
}

/// Frobenius norm of `Q + AᵀP + PA − P B R⁻¹ Bᵀ P`.
pub fn are_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = r.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    let s = b * r_inv * b.transpose();
    (q + a.transpose() * p + p * a - p * s * p).norm()
}

/// Stabilizing solution of `AᵀP + PA − P B R⁻¹ Bᵀ P + Q = 0`.
///
/// Uses the stable invariant subspace of the Hamiltonian from an ordered
/// complex Schur form, followed by Newton (Kleinman) refinement when the
/// residual exceeds [`ARE_TOLERANCE`]` · ‖P‖`.
pub fn solve_are(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rank = linalg::controllability_rank(a, b, CONTROLLABILITY_TOLERANCE);
    if rank < n {
        return Err(Error::NotControllable { rank, required: n });
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Parameter("control weight is not positive definite".into()))?
        .inverse();
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let hc = h.map(|v| Complex::new(v, 0.0));
    let schur = nalgebra::linalg::Schur::try_new(hc, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::HamiltonianSplit("Schur iteration did not converge".into()))?;
    let (mut u, mut t) = schur.unpack();
    let stable = (0..2 * n).filter(|&i| t[(i, i)].re < 0.0).count();
    if stable != n {
        return Err(Error::HamiltonianSplit(alloc::format!(
            "{stable} stable eigenvalues, expected {n}"
        )));
    }
    order_schur(&mut u, &mut t);

    let u11 = u.view((0, 0), (n, n)).into_owned();
    let u21 = u.view((n, 0), (n, n)).into_owned();
    let u11_inv = u11
        .try_inverse()
        .ok_or_else(|| Error::HamiltonianSplit("stable subspace is not a graph".into()))?;
    let mut p = linalg::symmetrize(&(u21 * u11_inv).map(|c| c.re));

    for _ in 0..8 {
        let res = are_residual(a, b, q, r, &p);
        if res <= 0.1 * ARE_TOLERANCE * p.norm() {
            break;
        }
        let a_cl = a - &s * &p;
        let rhs = q + &p * &s * &p;
        match linalg::solve_lyapunov(&a_cl, &rhs) {
            Some(next) if are_residual(a, b, q, r, &next) < res => p = next,
            _ => break,
        }
    }
    let residual = are_residual(a, b, q, r, &p);
    if !(residual <= ARE_TOLERANCE * p.norm()) {
        return Err(Error::RiccatiResidual { residual });
    }
    Ok(p)
}

/// Reorders a complex Schur form `H = U T Uᴴ` so that eigenvalues with
/// negative real part come first, by adjacent Givens swaps.
fn order_schur(u: &mut DMatrix<Complex<f64>>, t: &mut DMatrix<Complex<f64>>) {
    let dim = t.nrows();
    let mut swapped = true;
    while swapped {
        swapped = false;
        for k in 0..dim.saturating_sub(1) {
            let a = t[(k, k)];
            let b = t[(k + 1, k + 1)];
            if !(a.re >= 0.0 && b.re < 0.0) {
                continue;
            }
            // First column of the rotation: eigenvector of b in the 2×2 block.
            let v0 = t[(k, k + 1)];
            let v1 = b - a;
            let nv = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
            let (c, s) = (v0 / nv, v1 / nv);
            let g = [[c, -s.conj()], [s, c.conj()]];
            for j in 0..dim {
                let (x, y) = (t[(k, j)], t[(k + 1, j)]);
                t[(k, j)] = g[0][0].conj() * x + g[1][0].conj() * y;
                t[(k + 1, j)] = g[0][1].conj() * x + g[1][1].conj() * y;
            }
            for i in 0..dim {
                let (x, y) = (t[(i, k)], t[(i, k + 1)]);
                t[(i, k)] = x * g[0][0] + y * g[1][0];
                t[(i, k + 1)] = x * g[0][1] + y * g[1][1];
                let (x, y) = (u[(i, k)], u[(i, k + 1)]);
                u[(i, k)] = x * g[0][0] + y * g[1][0];
                u[(i, k + 1)] = x * g[0][1] + y * g[1][1];
            }
            t[(k + 1, k)] = Complex::new(0.0, 0.0);
            swapped = true;
        }
    }
}

/// Lifted ambient matrices `Q = MᵀQ_sM`, `P = MᵀP_sM`, `K = K_sM`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

pub fn lift(p_s: &DMatrix<f64>, q_s: &DMatrix<f64>, k_s: &DMatrix<f64>, basis: &TangentBasis) -> Lifted {
    let m = basis.matrix();
    Lifted {
        q: linalg::symmetrize(&(m.transpose() * q_s * m)),
        p: linalg::symmetrize(&(m.transpose() * p_s * m)),
        k: k_s * m,
    }
}

/// Everything produced by one tangent-space LQR design.
#[derive(Debug, Clone)]
pub struct TangentLqr {
    pub basis: TangentBasis,
    pub a_s: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
    pub q_s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_s: DMatrix<f64>,
    pub k_s: DMatrix<f64>,
    pub residual: f64,
    pub lifted: Lifted,
}

impl TangentLqr {
    /// Eigenvalues of `A_s − B_s K_s`.
    pub fn closed_loop_eigenvalues(&self) -> Option<Vec<Complex<f64>>> {
        linalg::eigenvalues(&(&self.a_s - &self.b_s * &self.k_s))
    }
}

/// LQR design on the tangent space at `x` (usually an equilibrium).
pub fn tangent_lqr(dynamics: &Dynamics, x: &DVector<f64>, weights: &LqrWeights) -> Result<TangentLqr> {
    weights.validate()?;
    let l = dynamics.layout();
    let lin = dynamics.linearize(x, &DVector::zeros(l.control_dim()));
    let basis = dynamics.tangent_basis(x)?;
    let (a_s, b_s) = reduce(&lin, &basis);
    let m = basis.matrix();
    let q_c = assemble_state_weight(weights, l.m());
    let q_s = linalg::symmetrize(&(m * q_c * m.transpose()));
    let r = assemble_control_weight(weights, l.m());
    let p_s = solve_are(&a_s, &b_s, &q_s, &r)?;
    let r_inv = r.map_diagonal(|v| 1.0 / v);
    let k_s = DMatrix::from_diagonal(&r_inv) * b_s.transpose() * &p_s;
    let residual = are_residual(&a_s, &b_s, &q_s, &r, &p_s);
    let lifted = lift(&p_s, &q_s, &k_s, &basis);
    Ok(TangentLqr { basis, a_s, b_s, q_s, r, p_s, k_s, residual, lifted })
}

/// Quadratic objective `∫ ½‖x − x_d‖²_Q + ½‖u‖²_R dt + ½‖x(T) − x_d‖²_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunctional {
    pub x_d: DVector<f64>,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostFunctional {
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = x - &self.x_d;
        0.5 * e.dot(&(&self.q * &e)) + 0.5 * u.dot(&(&self.r * u))
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.x_d;
        0.5 * e.dot(&(&self.p * &e))
    }
}

/// Static ambient feedback `u = −K (x − x_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub k: DMatrix<f64>,
}

/// Builds the objective (from `cost`) and the stabilizing gain (from `reg`)
/// at the target `x_d`.
pub fn design(
    dynamics: &Dynamics,
    x_d: &DVector<f64>,
    cost: &LqrWeights,
    reg: &LqrWeights,
) -> Result<(CostFunctional, FeedbackGain)> {
    let c = tangent_lqr(dynamics, x_d, cost)?;
    let g = tangent_lqr(dynamics, x_d, reg)?;
    Ok((
        CostFunctional { x_d: x_d.clone(), q: c.lifted.q, p: c.lifted.p, r: c.r },
        FeedbackGain { k: g.lifted.k },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_are() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_are(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_are() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = solve_are(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        let s3 = 3f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]);
        assert!((p - expect).amax() < 1e-12);
    }

    #[test]
    fn unstable_open_loop_are() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0, 0.0, 0.3, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let q = DMatrix::identity(3, 3);
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let p = solve_are(&a, &b, &q, &r).unwrap();
        assert!(are_residual(&a, &b, &q, &r, &p) < 1e-10 * p.norm());
        let k = r.try_inverse().unwrap() * b.transpose() * &p;
        let eig = linalg::eigenvalues(&(&a - &b * k)).unwrap();
        assert!(eig.iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let r = solve_are(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1));
        assert_eq!(r, Err(Error::NotControllable { rank: 1, required: 2 }));
    }

    #[test]
    fn weight_assembly() {
        let w = LqrWeights::cost_default();
        let q = assemble_state_weight(&w, 4);
        assert_eq!(q[(0, 0)], 5.0);
        assert_eq!(q[(4, 4)], 10.0);
        assert_eq!(q[(8, 8)], 0.1);
        assert_eq!(q[(11, 11)], 0.01);
        assert_eq!(q[(18, 18)], 50.0);
        let ones = LqrWeights::from_arrays([1.0; 5], [1.0; 2]);
        assert_eq!(assemble_state_weight(&ones, 4), DMatrix::identity(19, 19));
        assert_eq!(assemble_control_weight(&ones, 4), DMatrix::identity(8, 8));
        let reg = LqrWeights::regulator_default();
        assert!((reg.q - 3e4 * 1e-4).abs() < 1e-15);
        assert!((reg.omega - 200.0 * 1e-4).abs() < 1e-15);
        assert!(LqrWeights::from_arrays([1.0; 5], [0.0, 1.0]).validate().is_err());
    }

    #[test]
    fn cost_evaluation() {
        let x_d = DVector::from_vec(vec![1.0, 2.0]);
        let cf = CostFunctional {
            x_d: x_d.clone(),
            q: DMatrix::identity(2, 2),
            p: DMatrix::identity(2, 2) * 2.0,
            r: DMatrix::identity(1, 1) * 4.0,
        };
        let u = DVector::from_element(1, 0.5);
        assert_eq!(cf.stage_cost(&x_d, &DVector::zeros(1)), 0.0);
        assert_eq!(cf.stage_cost(&x_d, &u), 0.5);
        assert_eq!(cf.terminal_cost(&DVector::from_vec(vec![2.0, 2.0])), 1.0);
    }
}
