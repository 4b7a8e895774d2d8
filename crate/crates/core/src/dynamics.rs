//! Momentum-conserving body-frame dynamics of a CMG-driven satellite, the
//! conservation constraints, their Jacobian, tangent bases and
//! linearizations.
//!
//! States are `x = [q; h_swr; ω; δ; h_ga]` (dimension `3m + 7`) and controls
//! `u = [u_g; u_w]` (dimension `2m`). Most functions accept the flat vector
//! form; [`State`] and [`Control`] give named access.

use core::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use crate::prelude::*;
use crate::array::{actuator_jacobian, ArrayGeometry, Frames, SatelliteParams};
use crate::linalg;
use crate::quat::{hat, rotm_unchecked, Quaternion, UnitQuaternion};
use crate::{Error, Result};

/// Index ranges of the state and control blocks for an `m`-CMG array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    m: usize,
}

impl Layout {
    pub const fn new(m: usize) -> Self {
        Self { m }
    }

    pub const fn m(&self) -> usize {
        self.m
    }

    /// `3m + 7`.
    pub const fn state_dim(&self) -> usize {
        3 * self.m + 7
    }

    /// `2m`.
    pub const fn control_dim(&self) -> usize {
        2 * self.m
    }

    /// Dimension of the constraint manifold, `3m + 3`.
    pub const fn tangent_dim(&self) -> usize {
        3 * self.m + 3
    }

    pub const fn q(&self) -> Range<usize> {
        0..4
    }

    pub const fn h_swr(&self) -> Range<usize> {
        4..4 + self.m
    }

    pub const fn omega(&self) -> Range<usize> {
        4 + self.m..7 + self.m
    }

    pub const fn delta(&self) -> Range<usize> {
        7 + self.m..7 + 2 * self.m
    }

    pub const fn h_ga(&self) -> Range<usize> {
        7 + 2 * self.m..7 + 3 * self.m
    }

    pub const fn u_g(&self) -> Range<usize> {
        0..self.m
    }

    pub const fn u_w(&self) -> Range<usize> {
        self.m..2 * self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Attitude; not renormalized, so it may drift slightly from unit norm.
    pub q: Quaternion,
    pub h_swr: DVector<f64>,
    pub omega: Vector3<f64>,
    pub delta: DVector<f64>,
    pub h_ga: DVector<f64>,
}

impl State {
    /// Rest state: `ω = 0`, `h_ga = 0`.
    pub fn equilibrium(q: UnitQuaternion, delta: DVector<f64>, h_swr: DVector<f64>) -> Self {
        let m = delta.len();
        Self { q: q.into_inner(), h_swr, omega: Vector3::zeros(), delta, h_ga: DVector::zeros(m) }
    }

    pub fn m(&self) -> usize {
        self.delta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let l = Layout::new(self.m());
        let mut x = DVector::zeros(l.state_dim());
        x.rows_mut(0, 4).copy_from(&self.q.to_vector());
        x.rows_range_mut(l.h_swr()).copy_from(&self.h_swr);
        x.rows_range_mut(l.omega()).copy_from(&self.omega);
        x.rows_range_mut(l.delta()).copy_from(&self.delta);
        x.rows_range_mut(l.h_ga()).copy_from(&self.h_ga);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        let n = x.len();
        if n < 7 || !(n - 7).is_multiple_of(3) {
            return Err(Error::Parameter(alloc::format!("state length {n} is not 3m + 7")));
        }
        let l = Layout::new((n - 7) / 3);
        Ok(Self {
            q: Quaternion::from_slice(&x.as_slice()[0..4]),
            h_swr: x.rows_range(l.h_swr()).into_owned(),
            omega: Vector3::from_column_slice(&x.as_slice()[l.omega()]),
            delta: x.rows_range(l.delta()).into_owned(),
            h_ga: x.rows_range(l.h_ga()).into_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub u_g: DVector<f64>,
    pub u_w: DVector<f64>,
}

impl Control {
    pub fn zeros(m: usize) -> Self {
        Self { u_g: DVector::zeros(m), u_w: DVector::zeros(m) }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let m = self.u_g.len();
        let mut u = DVector::zeros(2 * m);
        u.rows_mut(0, m).copy_from(&self.u_g);
        u.rows_mut(m, m).copy_from(&self.u_w);
        u
    }

    pub fn from_vector(u: &DVector<f64>) -> Result<Self> {
        if !u.len().is_multiple_of(2) {
            return Err(Error::Parameter(alloc::format!("control length {} is odd", u.len())));
        }
        let m = u.len() / 2;
        Ok(Self { u_g: u.rows(0, m).into_owned(), u_w: u.rows(m, m).into_owned() })
    }
}

/// `A = ∂f/∂x` and `B = ∂f/∂u` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Orthonormal rows spanning the tangent space of the constraint manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    rows: DMatrix<f64>,
}

impl TangentBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    /// Orthogonal projector `MᵀM` onto the tangent space.
    pub fn projector(&self) -> DMatrix<f64> {
        self.rows.transpose() * &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMethod {
    #[default]
    Analytic,
    /// Central differences; slower, used as a cross-check.
    FiniteDifference,
}

/// Intermediate quantities of one vector-field evaluation, kept for reuse by
/// the Jacobian.
struct Eval {
    frames: Frames,
    q: Quaternion,
    omega: Vector3<f64>,
    u_w: DVector<f64>,
    c_t: DVector<f64>,
    c_s: DVector<f64>,
    f_delta: DVector<f64>,
    g: DVector<f64>,
    hbar: Vector3<f64>,
    d: Matrix3xX<f64>,
    d_a: Matrix3xX<f64>,
    h_swa: DVector<f64>,
    jst: Matrix3<f64>,
    jsta_inv: Matrix3<f64>,
    f_hga: DVector<f64>,
    f_omega: Vector3<f64>,
    f_hswr: DVector<f64>,
    q_dot: Vector4<f64>,
}

/// The vector field together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    sat: SatelliteParams,
    external_torque: Vector3<f64>,
    jacobian: JacobianMethod,
}

impl Dynamics {
    pub fn new(sat: SatelliteParams) -> Self {
        Self { sat, external_torque: Vector3::zeros(), jacobian: JacobianMethod::Analytic }
    }

    /// Known external body torque `τ_e`; zero by default.
    pub fn with_external_torque(mut self, tau: Vector3<f64>) -> Self {
        self.external_torque = tau;
        self
    }

    pub fn with_jacobian_method(mut self, method: JacobianMethod) -> Self {
        self.jacobian = method;
        self
    }

    pub fn params(&self) -> &SatelliteParams {
        &self.sat
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        self.sat.geometry()
    }

    pub fn m(&self) -> usize {
        self.sat.m()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.m())
    }

    pub fn external_torque(&self) -> &Vector3<f64> {
        &self.external_torque
    }

    fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Eval {
        let l = self.layout();
        let geom = self.sat.geometry();
        let q = Quaternion::from_slice(&x.as_slice()[l.q()]);
        let h_swr = x.rows_range(l.h_swr());
        let omega = Vector3::from_column_slice(&x.as_slice()[l.omega()]);
        let delta = x.rows_range(l.delta()).into_owned();
        let h_ga = x.rows_range(l.h_ga());
        let u_g = u.rows_range(l.u_g());
        let u_w = u.rows_range(l.u_w()).into_owned();

        let frames = geom.frame_matrices(&delta);
        let a_g = geom.gimbal_axes();
        let c_t = frames.transverse.transpose() * omega;
        let c_s = frames.spin.transpose() * omega;

        let f_delta = h_ga.component_div(geom.j_g()) - a_g.transpose() * omega;

        let dj_ts = geom.j_t() - geom.j_s();
        let g = dj_ts.component_mul(&c_s) - h_swr;
        let f_hga = c_t.component_mul(&g) + u_g;

        let jst = self.sat.inertia_jst_frames(&frames);
        let hbar = jst * omega + &frames.spin * h_swr + a_g * h_ga;
        let f_h = hbar.cross(&omega) + self.external_torque;

        let h_swa = h_swr + geom.j_sw().component_mul(&c_s);
        let dj_tsg = geom.j_t() - geom.j_sg();
        let d_a = actuator_jacobian(&frames, &omega, &dj_tsg, &h_swa);
        let h_swr_owned = h_swr.into_owned();
        let d = actuator_jacobian(&frames, &omega, &dj_ts, &h_swr_owned);

        let jsta = self.sat.inertia_jsta_frames(&frames);
        // J_st,a is symmetric positive definite for positive inertias.
        let jsta_inv = jsta.try_inverse().expect("J_st,a is invertible");
        let rhs = f_h - &d_a * &f_delta - a_g * &f_hga - &frames.spin * &u_w;
        let f_omega = jsta_inv * rhs;

        let f_hswr = geom
            .j_sw()
            .component_mul(&(c_t.component_mul(&f_delta) - frames.spin.transpose() * f_omega))
            + &u_w;

        let q_dot = q.left_matrix() * Vector4::new(0.0, omega.x, omega.y, omega.z) * 0.5;

        Eval {
            frames,
            q,
            omega,
            u_w,
            c_t,
            c_s,
            f_delta,
            g,
            hbar,
            d,
            d_a,
            h_swa,
            jst,
            jsta_inv,
            f_hga,
            f_omega,
            f_hswr,
            q_dot,
        }
    }

    fn assemble(&self, e: &Eval) -> DVector<f64> {
        let l = self.layout();
        let mut xdot = DVector::zeros(l.state_dim());
        xdot.rows_mut(0, 4).copy_from(&e.q_dot);
        xdot.rows_range_mut(l.h_swr()).copy_from(&e.f_hswr);
        xdot.rows_range_mut(l.omega()).copy_from(&e.f_omega);
        xdot.rows_range_mut(l.delta()).copy_from(&e.f_delta);
        xdot.rows_range_mut(l.h_ga()).copy_from(&e.f_hga);
        xdot
    }

    /// State derivative `ẋ = f(x, u)` in flat form.
    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.assemble(&self.evaluate(x, u))
    }

    /// [`Dynamics::f`] on named state and control.
    pub fn f_state(&self, x: &State, u: &Control) -> DVector<f64> {
        self.f(&x.to_vector(), &u.to_vector())
    }

    /// Body-frame momentum `h̄(x)`.
    pub fn body_momentum(&self, x: &DVector<f64>) -> Vector3<f64> {
        let l = self.layout();
        let omega = Vector3::from_column_slice(&x.as_slice()[l.omega()]);
        let delta = x.rows_range(l.delta()).into_owned();
        let h_swr = x.rows_range(l.h_swr()).into_owned();
        let h_ga = x.rows_range(l.h_ga()).into_owned();
        self.sat.hbar(&omega, &delta, &h_swr, &h_ga)
    }

    /// Inertial momentum `C(q) h̄(x)`.
    pub fn inertial_momentum(&self, x: &DVector<f64>) -> Vector3<f64> {
        let q = Quaternion::from_slice(&x.as_slice()[0..4]);
        rotm_unchecked(&q) * self.body_momentum(x)
    }

    /// Constraint residuals `(|q| − 1, C(q) h̄(x) − h₀)`.
    pub fn constraints(&self, x: &DVector<f64>, h0: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let q = Quaternion::from_slice(&x.as_slice()[0..4]);
        (q.norm() - 1.0, self.inertial_momentum(x) - h0)
    }

    /// Constraint Jacobian `Z(x)` (4 × (3m+7)).
    ///
    /// Row one is `∂|q|/∂x`; rows two to four are the body-frame form
    /// `C(q)ᵀ ∂(C(q) h̄)/∂x` of the momentum constraint for unit `q`.
    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout();
        let e = self.evaluate(x, &DVector::zeros(l.control_dim()));
        let mut z = DMatrix::zeros(4, l.state_dim());
        let qn = e.q.norm();
        for i in 0..4 {
            z[(0, i)] = x[i] / qn;
        }
        let mut hq = nalgebra::Matrix3x4::zeros();
        hq.set_column(0, &e.hbar);
        hq.fixed_view_mut::<3, 3>(0, 1).copy_from(&(-hat(&e.hbar)));
        let zq = hq * e.q.conj().left_matrix() * 2.0;
        z.view_mut((1, 0), (3, 4)).copy_from(&zq);
        z.view_mut((1, l.h_swr().start), (3, l.m())).copy_from(&e.frames.spin);
        z.view_mut((1, l.omega().start), (3, 3)).copy_from(&e.jst);
        z.view_mut((1, l.delta().start), (3, l.m())).copy_from(&e.d);
        z.view_mut((1, l.h_ga().start), (3, l.m())).copy_from(self.geometry().gimbal_axes());
        z
    }

    /// Jacobians of `f` at `(x, u)` using the configured method.
    pub fn linearize(&self, x: &DVector<f64>, u: &DVector<f64>) -> LinearizedDynamics {
        match self.jacobian {
            JacobianMethod::Analytic => self.linearize_analytic(x, u),
            JacobianMethod::FiniteDifference => self.linearize_fd(x, u, 1e-6),
        }
    }

    /// Analytic Jacobians, computed by pushing the identity seed through the
    /// evaluation order of `f` (forward-mode differentiation by hand).
    pub fn linearize_analytic(&self, x: &DVector<f64>, u: &DVector<f64>) -> LinearizedDynamics {
        let l = self.layout();
        let (n, nu) = (l.state_dim(), l.control_dim());
        let mut dx = DMatrix::zeros(n, n + nu);
        let mut du = DMatrix::zeros(nu, n + nu);
        dx.columns_mut(0, n).fill_with_identity();
        du.columns_mut(n, nu).fill_with_identity();
        let full = self.propagate(&self.evaluate(x, u), &dx, &du);
        LinearizedDynamics { a: full.columns(0, n).into_owned(), b: full.columns(n, nu).into_owned() }
    }

    /// Directional derivative `A(x, u) dx + B(x, u) du`.
    pub fn jvp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dx: &DVector<f64>,
        du: &DVector<f64>,
    ) -> DVector<f64> {
        let dx = DMatrix::from_column_slice(dx.len(), 1, dx.as_slice());
        let du = DMatrix::from_column_slice(du.len(), 1, du.as_slice());
        let out = self.propagate(&self.evaluate(x, u), &dx, &du);
        DVector::from_column_slice(out.as_slice())
    }

    /// [`Dynamics::f`] together with [`Dynamics::jvp`], sharing one evaluation.
    pub fn f_and_jvp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dx: &DVector<f64>,
        du: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let e = self.evaluate(x, u);
        let dx = DMatrix::from_column_slice(dx.len(), 1, dx.as_slice());
        let du = DMatrix::from_column_slice(du.len(), 1, du.as_slice());
        let out = self.propagate(&e, &dx, &du);
        (self.assemble(&e), DVector::from_column_slice(out.as_slice()))
    }

    /// Pushes the tangent columns `(dx, du)` through the evaluation order of
    /// `f` (forward-mode differentiation by hand).
    fn propagate(&self, e: &Eval, dx: &DMatrix<f64>, du: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.layout();
        let n = l.state_dim();
        let k = dx.ncols();
        let geom = self.geometry();
        let a_s = &e.frames.spin;
        let a_t = &e.frames.transverse;
        let a_g = geom.gimbal_axes();

        let dq = dx.rows_range(l.q());
        let dh_swr = dx.rows_range(l.h_swr()).into_owned();
        let dw = dx.rows_range(l.omega()).into_owned();
        let dd = dx.rows_range(l.delta()).into_owned();
        let dh_ga = dx.rows_range(l.h_ga()).into_owned();
        let du_g = du.rows_range(l.u_g()).into_owned();
        let du_w = du.rows_range(l.u_w()).into_owned();

        let diag = |v: &DVector<f64>| DMatrix::from_diagonal(v);
        let dyn3 = |m3: &Matrix3xX<f64>| DMatrix::from_column_slice(3, m3.ncols(), m3.as_slice());
        let a_s = dyn3(a_s);
        let a_t = dyn3(a_t);
        let a_g = dyn3(a_g);
        let m33 = |m3: &Matrix3<f64>| DMatrix::from_column_slice(3, 3, m3.as_slice());

        let dc_t = a_t.transpose() * &dw + diag(&e.c_s) * &dd;
        let dc_s = a_s.transpose() * &dw - diag(&e.c_t) * &dd;

        let inv_jg = geom.j_g().map(|j| 1.0 / j);
        let df_delta = diag(&inv_jg) * &dh_ga - a_g.transpose() * &dw;

        let dj_ts = geom.j_t() - geom.j_s();
        let dg = diag(&dj_ts) * &dc_s - &dh_swr;
        let df_hga = diag(&e.g) * &dc_t + diag(&e.c_t) * &dg + &du_g;

        let dhbar = m33(&e.jst) * &dw + &a_s * &dh_swr + &a_g * &dh_ga + dyn3(&e.d) * &dd;
        let df_h = m33(&hat(&e.hbar)) * &dw - m33(&hat(&e.omega)) * &dhbar;

        let dj_tsg = geom.j_t() - geom.j_sg();
        let ee = dj_tsg.component_mul(&e.f_delta);
        let dh_swa = &dh_swr + diag(geom.j_sw()) * &dc_s;
        let delta_coef_da = -(&a_t * diag(&e.c_t.component_mul(&ee)))
            + &a_s * diag(&(e.c_s.component_mul(&ee) - e.h_swa.component_mul(&e.f_delta)));
        let dy = dyn3(&e.d_a) * &df_delta
            + &a_s * diag(&ee) * &dc_t
            + &a_t * diag(&ee) * &dc_s
            - &a_t * diag(&e.f_delta) * &dh_swa
            + delta_coef_da * &dd;

        let dr = &df_h - &dy - &a_g * &df_hga - &a_s * &du_w + &a_t * diag(&e.u_w) * &dd;
        let at_fw = a_t.transpose() * e.f_omega;
        let as_fw = a_s.transpose() * e.f_omega;
        let djsta_fw = (&a_s * diag(&at_fw) + &a_t * diag(&as_fw)) * diag(&dj_tsg) * &dd;
        let df_omega = m33(&e.jsta_inv) * (dr - djsta_fw);

        let df_hswr = diag(geom.j_sw())
            * (diag(&e.f_delta) * &dc_t + diag(&e.c_t) * &df_delta + diag(&at_fw) * &dd
                - a_s.transpose() * &df_omega)
            + &du_w;

        let w4 = Quaternion::pure(e.omega);
        let ol = e.q.left_matrix();
        let dq_dot = DMatrix::from_column_slice(4, 4, (w4.right_matrix() * 0.5).as_slice()) * dq
            + DMatrix::from_column_slice(4, 3, (ol.fixed_columns::<3>(1) * 0.5).as_slice()) * &dw;

        let mut full = DMatrix::zeros(n, k);
        full.rows_range_mut(l.q()).copy_from(&dq_dot);
        full.rows_range_mut(l.h_swr()).copy_from(&df_hswr);
        full.rows_range_mut(l.omega()).copy_from(&df_omega);
        full.rows_range_mut(l.delta()).copy_from(&df_delta);
        full.rows_range_mut(l.h_ga()).copy_from(&df_hga);
        full
    }

    /// Central-difference Jacobians with per-coordinate step
    /// `step · max(1, |x_j|)`.
    pub fn linearize_fd(&self, x: &DVector<f64>, u: &DVector<f64>, step: f64) -> LinearizedDynamics {
        let n = x.len();
        let nu = u.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, nu);
        for j in 0..n {
            let h = step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            a.set_column(j, &((self.f(&xp, u) - self.f(&xm, u)) / (2.0 * h)));
        }
        for j in 0..nu {
            let h = step * u[j].abs().max(1.0);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            b.set_column(j, &((self.f(x, &up) - self.f(x, &um)) / (2.0 * h)));
        }
        LinearizedDynamics { a, b }
    }

    /// Orthonormal basis of the tangent space at `x`.
    pub fn tangent_basis(&self, x: &DVector<f64>) -> Result<TangentBasis> {
        let z = self.constraint_jacobian(x);
        let rank = linalg::rank(&z, 1e-12);
        if rank < 4 {
            return Err(Error::DegenerateState { rank });
        }
        Ok(TangentBasis { rows: linalg::row_space_complement(&z) })
    }
}

/// Reduced pair `(M A Mᵀ, M B)`.
pub fn reduce(lin: &LinearizedDynamics, basis: &TangentBasis) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = basis.matrix();
    (m * &lin.a * m.transpose(), m * &lin.b)
}

const ZERO_MOMENTUM_ATTEMPTS: usize = 200;
const ZERO_MOMENTUM_TOLERANCE: f64 = 1e-10;
const MIN_SINGULARITY_MEASURE: f64 = 0.1;

/// Finds gimbal angles with `A_s(δ) (h · 1) = 0` and
/// `σ_min(A_t(δ)) ≥ 0.1`, by Gauss-Newton minimum-norm steps from seeded
/// random starting points.
pub fn find_zero_momentum_config(
    geom: &ArrayGeometry,
    h_swr_target: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let m = geom.m();
    if m < 4 {
        return Err(Error::Geometry(alloc::format!("need at least 4 CMGs, got {m}")));
    }
    if !(h_swr_target.is_finite() && h_swr_target != 0.0) {
        return Err(Error::Parameter("wheel momentum target must be finite and nonzero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ones = DVector::from_element(m, h_swr_target);
    for _ in 0..ZERO_MOMENTUM_ATTEMPTS {
        let mut delta = DVector::from_fn(m, |_, _| {
            (rng.random::<f64>() * 2.0 - 1.0) * core::f64::consts::PI
        });
        for _ in 0..50 {
            let f = geom.frame_matrices(&delta);
            let r = &f.spin * &ones;
            if r.norm() <= 0.1 * ZERO_MOMENTUM_TOLERANCE {
                break;
            }
            // ∂(A_s h)/∂δ = −A_t diag(h)
            let jac = crate::array::to_dmatrix(&(-(&f.transverse) * h_swr_target));
            let svd = jac.svd(true, true);
            let Ok(step) = svd.solve(&DVector::from_column_slice(r.as_slice()), 1e-12) else {
                break;
            };
            delta -= step;
        }
        let residual = (&geom.frame_matrices(&delta).spin * &ones).norm();
        if residual <= ZERO_MOMENTUM_TOLERANCE
            && geom.singularity_measure(&delta) >= MIN_SINGULARITY_MEASURE
        {
            let wrapped = delta.map(wrap_angle);
            log::debug!("zero momentum configuration {wrapped:?} (residual {residual:e})");
            return Ok(wrapped);
        }
    }
    Err(Error::ZeroMomentumSearch { attempts: ZERO_MOMENTUM_ATTEMPTS })
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use core::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
