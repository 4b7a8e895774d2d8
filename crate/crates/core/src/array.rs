//! CMG array geometry, configuration-dependent inertias, momentum transforms
//! and actuator Jacobians.
//!
//! Each CMG carries a right-handed triad of unit axes: gimbal `a_g` (fixed in
//! the body), spin `a_s` and transverse `a_t = a_s × a_g`. Spin and transverse
//! axes rotate about `a_g` with the gimbal angle `δ`:
//!
//! ```text
//! A_s(δ) = A_s0 diag(cos δ) − A_t0 diag(sin δ)
//! A_t(δ) = A_t0 diag(cos δ) + A_s0 diag(sin δ)
//! ```

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::linalg;
use crate::{Error, Result};

const TRIAD_TOLERANCE: f64 = 1e-12;

/// Principal inertias (kg·m²) of a single CMG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmgInertia {
    /// About the gimbal axis.
    pub gimbal: f64,
    /// Spin-axis inertia of the wheel.
    pub spin_wheel: f64,
    /// Spin-axis inertia of the gimbal frame.
    pub spin_gimbal: f64,
    /// About the transverse axis.
    pub transverse: f64,
}

impl Default for CmgInertia {
    /// The test platform values: `J_g = 0.115`, `J_sw = 0.075`,
    /// `J_sg = 0.015`, `J_t = 0.001`.
    fn default() -> Self {
        Self { gimbal: 0.115, spin_wheel: 0.075, spin_gimbal: 0.015, transverse: 0.001 }
    }
}

/// Spin and transverse axis matrices at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub spin: Matrix3xX<f64>,
    pub transverse: Matrix3xX<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    gimbal: Matrix3xX<f64>,
    spin0: Matrix3xX<f64>,
    transverse0: Matrix3xX<f64>,
    positions: Vec<Vector3<f64>>,
    masses: Vec<f64>,
    j_g: DVector<f64>,
    j_sw: DVector<f64>,
    j_sg: DVector<f64>,
    j_t: DVector<f64>,
}

impl ArrayGeometry {
    /// Builds an array from gimbal and default spin axes; transverse axes are
    /// `a_s0 × a_g`. All CMGs share `inertia`, sit at the center of mass and
    /// are massless until overridden.
    pub fn new(
        gimbal: Matrix3xX<f64>,
        spin0: Matrix3xX<f64>,
        inertia: CmgInertia,
    ) -> Result<Self> {
        let m = gimbal.ncols();
        if m == 0 || spin0.ncols() != m {
            return Err(Error::Geometry("gimbal and spin axis counts differ or are zero".into()));
        }
        let mut transverse0 = Matrix3xX::zeros(m);
        for i in 0..m {
            let g = gimbal.column(i);
            let s = spin0.column(i);
            if (g.norm() - 1.0).abs() > TRIAD_TOLERANCE || (s.norm() - 1.0).abs() > TRIAD_TOLERANCE
            {
                return Err(Error::Geometry(alloc::format!("axes of CMG {} are not unit", i + 1)));
            }
            if g.dot(&s).abs() > TRIAD_TOLERANCE {
                return Err(Error::Geometry(alloc::format!(
                    "spin axis of CMG {} is not orthogonal to its gimbal axis",
                    i + 1
                )));
            }
            transverse0.set_column(i, &s.cross(&g));
        }
        let geom = Self {
            gimbal,
            spin0,
            transverse0,
            positions: vec![Vector3::zeros(); m],
            masses: vec![0.0; m],
            j_g: DVector::zeros(m),
            j_sw: DVector::zeros(m),
            j_sg: DVector::zeros(m),
            j_t: DVector::zeros(m),
        };
        geom.with_inertia(inertia)
    }

    /// Rooftop array: the first `m/2` gimbal axes are `[sin β; 0; cos β]`,
    /// the remaining ones `[−sin β; 0; cos β]`, and every default spin axis
    /// lies along the roof ridge `ŷ`.
    pub fn rooftop(m: usize, beta: f64) -> Result<Self> {
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::Geometry(alloc::format!(
                "rooftop arrays need an even CMG count of at least 4, got {m}"
            )));
        }
        let (sb, cb) = (beta.sin(), beta.cos());
        let mut gimbal = Matrix3xX::zeros(m);
        let mut spin0 = Matrix3xX::zeros(m);
        for i in 0..m {
            let side = if i < m / 2 { 1.0 } else { -1.0 };
            gimbal.set_column(i, &Vector3::new(side * sb, 0.0, cb));
            spin0.set_column(i, &Vector3::y());
        }
        Self::new(gimbal, spin0, CmgInertia::default())
    }

    /// Four-CMG pyramid with face inclination `beta`.
    ///
    /// Gimbal axes are `[sin β cos φ; sin β sin φ; cos β]` with
    /// `φ = 0, π/2, π, 3π/2`. The default transverse axes are horizontal,
    /// `a_t0 = [−sin φ; cos φ; 0]`, so the default configuration cannot
    /// produce torque along `ẑ`; spin axes complete the triad as
    /// `a_s0 = a_g × a_t0`.
    pub fn pyramid(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < core::f64::consts::FRAC_PI_2) {
            return Err(Error::Geometry(alloc::format!(
                "pyramid inclination must lie in (0, π/2), got {beta}"
            )));
        }
        let (sb, cb) = (beta.sin(), beta.cos());
        let mut gimbal = Matrix3xX::zeros(4);
        let mut spin0 = Matrix3xX::zeros(4);
        for i in 0..4 {
            let phi = i as f64 * core::f64::consts::FRAC_PI_2;
            let (sp, cp) = (phi.sin(), phi.cos());
            let g = Vector3::new(sb * cp, sb * sp, cb);
            let t = Vector3::new(-sp, cp, 0.0);
            gimbal.set_column(i, &g);
            spin0.set_column(i, &g.cross(&t));
        }
        Self::new(gimbal, spin0, CmgInertia::default())
    }

    /// Applies the same inertia to every CMG.
    pub fn with_inertia(mut self, inertia: CmgInertia) -> Result<Self> {
        let m = self.m();
        let all = [inertia.gimbal, inertia.spin_wheel, inertia.spin_gimbal, inertia.transverse];
        if all.iter().any(|j| !(j.is_finite() && *j > 0.0)) {
            return Err(Error::Geometry("CMG inertias must be strictly positive".into()));
        }
        self.j_g = DVector::from_element(m, inertia.gimbal);
        self.j_sw = DVector::from_element(m, inertia.spin_wheel);
        self.j_sg = DVector::from_element(m, inertia.spin_gimbal);
        self.j_t = DVector::from_element(m, inertia.transverse);
        Ok(self)
    }

    /// Overrides the inertia of CMG `index`.
    pub fn with_cmg_inertia(mut self, index: usize, inertia: CmgInertia) -> Result<Self> {
        if index >= self.m() {
            return Err(Error::Geometry(alloc::format!("no CMG with index {index}")));
        }
        let all = [inertia.gimbal, inertia.spin_wheel, inertia.spin_gimbal, inertia.transverse];
        if all.iter().any(|j| !(j.is_finite() && *j > 0.0)) {
            return Err(Error::Geometry("CMG inertias must be strictly positive".into()));
        }
        self.j_g[index] = inertia.gimbal;
        self.j_sw[index] = inertia.spin_wheel;
        self.j_sg[index] = inertia.spin_gimbal;
        self.j_t[index] = inertia.transverse;
        Ok(self)
    }

    /// Mounting positions (m) and masses (kg) used by the parallel-axis term.
    pub fn with_mounting(mut self, positions: Vec<Vector3<f64>>, masses: Vec<f64>) -> Result<Self> {
        if positions.len() != self.m() || masses.len() != self.m() {
            return Err(Error::Geometry("one position and one mass per CMG required".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Geometry("CMG masses must be nonnegative".into()));
        }
        self.positions = positions;
        self.masses = masses;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.gimbal.ncols()
    }

    pub fn gimbal_axes(&self) -> &Matrix3xX<f64> {
        &self.gimbal
    }

    pub fn spin_axes0(&self) -> &Matrix3xX<f64> {
        &self.spin0
    }

    pub fn transverse_axes0(&self) -> &Matrix3xX<f64> {
        &self.transverse0
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn j_g(&self) -> &DVector<f64> {
        &self.j_g
    }

    pub fn j_sw(&self) -> &DVector<f64> {
        &self.j_sw
    }

    pub fn j_sg(&self) -> &DVector<f64> {
        &self.j_sg
    }

    /// `J_s = J_sw + J_sg`.
    pub fn j_s(&self) -> DVector<f64> {
        &self.j_sw + &self.j_sg
    }

    pub fn j_t(&self) -> &DVector<f64> {
        &self.j_t
    }

    pub fn frame_matrices(&self, delta: &DVector<f64>) -> Frames {
        let m = self.m();
        let mut spin = Matrix3xX::zeros(m);
        let mut transverse = Matrix3xX::zeros(m);
        for i in 0..m {
            let (s, c) = (delta[i].sin(), delta[i].cos());
            let s0 = self.spin0.column(i);
            let t0 = self.transverse0.column(i);
            spin.set_column(i, &(s0 * c - t0 * s));
            transverse.set_column(i, &(t0 * c + s0 * s));
        }
        Frames { spin, transverse }
    }

    /// Smallest singular value of `A_t(δ)`; zero exactly when gimbal motion
    /// alone cannot produce torque in some direction.
    pub fn singularity_measure(&self, delta: &DVector<f64>) -> f64 {
        let at = self.frame_matrices(delta).transverse;
        let sv = at.svd(false, false).singular_values;
        // A 3×m matrix with m < 3 is always rank deficient.
        if self.m() < 3 {
            return 0.0;
        }
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `Σ_i w_i a_i a_iᵀ` for the columns `a_i` of `axes`.
pub(crate) fn weighted_outer(axes: &Matrix3xX<f64>, w: &DVector<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for (i, a) in axes.column_iter().enumerate() {
        out += a * a.transpose() * w[i];
    }
    out
}

/// Body inertia plus the CMG array.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteParams {
    body_inertia: Matrix3<f64>,
    geometry: ArrayGeometry,
    j: Matrix3<f64>,
}

impl SatelliteParams {
    /// `body_diag` is the diagonal of the bare body inertia `J_B`. The constant
    /// part `J = J_B + Σ m_i (I |r_i|² − r_i r_iᵀ)` is assembled here.
    pub fn new(body_diag: Vector3<f64>, geometry: ArrayGeometry) -> Result<Self> {
        if body_diag.iter().any(|j| !(j.is_finite() && *j > 0.0)) {
            return Err(Error::Geometry("body inertia must be positive definite".into()));
        }
        let body_inertia = Matrix3::from_diagonal(&body_diag);
        let mut j = body_inertia;
        for (r, mass) in geometry.positions.iter().zip(&geometry.masses) {
            j += (Matrix3::identity() * r.norm_squared() - r * r.transpose()) * *mass;
        }
        Ok(Self { body_inertia, geometry, j })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn m(&self) -> usize {
        self.geometry.m()
    }

    pub fn body_inertia(&self) -> &Matrix3<f64> {
        &self.body_inertia
    }

    /// Combined constant inertia `J`.
    pub fn j(&self) -> &Matrix3<f64> {
        &self.j
    }

    /// `J_stg(δ) = J + A_g J_g A_gᵀ + A_s J_s A_sᵀ + A_t J_t A_tᵀ`.
    pub fn inertia_jstg(&self, delta: &DVector<f64>) -> Matrix3<f64> {
        let frames = self.geometry.frame_matrices(delta);
        self.inertia_jst_frames(&frames) + weighted_outer(&self.geometry.gimbal, &self.geometry.j_g)
    }

    /// `J_st(δ) = J + A_s J_s A_sᵀ + A_t J_t A_tᵀ`.
    pub fn inertia_jst(&self, delta: &DVector<f64>) -> Matrix3<f64> {
        self.inertia_jst_frames(&self.geometry.frame_matrices(delta))
    }

    /// `J_st,a(δ) = J + A_s J_sg A_sᵀ + A_t J_t A_tᵀ`.
    pub fn inertia_jsta(&self, delta: &DVector<f64>) -> Matrix3<f64> {
        self.inertia_jsta_frames(&self.geometry.frame_matrices(delta))
    }

    pub(crate) fn inertia_jst_frames(&self, f: &Frames) -> Matrix3<f64> {
        self.j
            + weighted_outer(&f.spin, &self.geometry.j_s())
            + weighted_outer(&f.transverse, &self.geometry.j_t)
    }

    pub(crate) fn inertia_jsta_frames(&self, f: &Frames) -> Matrix3<f64> {
        self.j
            + weighted_outer(&f.spin, &self.geometry.j_sg)
            + weighted_outer(&f.transverse, &self.geometry.j_t)
    }

    /// Body-frame angular momentum `h̄ = J_st ω + A_s h_swr + A_g h_ga`.
    pub fn hbar(
        &self,
        omega: &Vector3<f64>,
        delta: &DVector<f64>,
        h_swr: &DVector<f64>,
        h_ga: &DVector<f64>,
    ) -> Vector3<f64> {
        let f = self.geometry.frame_matrices(delta);
        self.hbar_frames(&f, omega, h_swr, h_ga)
    }

    pub(crate) fn hbar_frames(
        &self,
        f: &Frames,
        omega: &Vector3<f64>,
        h_swr: &DVector<f64>,
        h_ga: &DVector<f64>,
    ) -> Vector3<f64> {
        self.inertia_jst_frames(f) * omega + &f.spin * h_swr + &self.geometry.gimbal * h_ga
    }

    /// Body rate from momentum: `ω = J_st⁻¹ (h − A_s h_swr − A_g h_ga)`.
    pub fn wbar(
        &self,
        h: &Vector3<f64>,
        delta: &DVector<f64>,
        h_swr: &DVector<f64>,
        h_ga: &DVector<f64>,
    ) -> Vector3<f64> {
        let f = self.geometry.frame_matrices(delta);
        let rhs = h - &f.spin * h_swr - &self.geometry.gimbal * h_ga;
        let jst = self.inertia_jst_frames(&f);
        // J_st is symmetric positive definite by construction.
        jst.cholesky().expect("J_st is positive definite").solve(&rhs)
    }

    /// Actuator Jacobian `D = ∂h̄/∂δ`:
    /// `[A_s diag(A_tᵀω) + A_t diag(A_sᵀω)](J_t − J_s) − A_t diag(h_swr)`.
    pub fn jacobian_d(
        &self,
        omega: &Vector3<f64>,
        delta: &DVector<f64>,
        h_swr: &DVector<f64>,
    ) -> Matrix3xX<f64> {
        let f = self.geometry.frame_matrices(delta);
        let dj = self.geometry.j_t() - self.geometry.j_s();
        actuator_jacobian(&f, omega, &dj, h_swr)
    }

    /// Jacobian with the wheel inertia moved into the momentum:
    /// `[A_s diag(A_tᵀω) + A_t diag(A_sᵀω)](J_t − J_sg) − A_t diag(h_swa)`
    /// with `h_swa = h_swr + J_sw A_sᵀω`.
    pub fn jacobian_da(
        &self,
        omega: &Vector3<f64>,
        delta: &DVector<f64>,
        h_swr: &DVector<f64>,
    ) -> Matrix3xX<f64> {
        let f = self.geometry.frame_matrices(delta);
        let h_swa = self.h_swa_frames(&f, omega, h_swr);
        let dj = self.geometry.j_t() - self.geometry.j_sg();
        actuator_jacobian(&f, omega, &dj, &h_swa)
    }

    pub(crate) fn h_swa_frames(
        &self,
        f: &Frames,
        omega: &Vector3<f64>,
        h_swr: &DVector<f64>,
    ) -> DVector<f64> {
        let c_s = f.spin.transpose() * omega;
        h_swr + self.geometry.j_sw.component_mul(&c_s)
    }
}

pub(crate) fn actuator_jacobian(
    f: &Frames,
    omega: &Vector3<f64>,
    dj: &DVector<f64>,
    h: &DVector<f64>,
) -> Matrix3xX<f64> {
    let c_t = f.transverse.transpose() * omega;
    let c_s = f.spin.transpose() * omega;
    let mut d = Matrix3xX::zeros(dj.len());
    for i in 0..dj.len() {
        let col = (f.spin.column(i) * c_t[i] + f.transverse.column(i) * c_s[i]) * dj[i]
            - f.transverse.column(i) * h[i];
        d.set_column(i, &col);
    }
    d
}

/// Converts a fixed-row matrix to a dynamic one; handy for SVD-based checks.
pub fn to_dmatrix(m: &Matrix3xX<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, m.ncols(), m.as_slice())
}

/// Numerical rank of `A_t(δ)` (relative threshold `1e-10`).
pub fn transverse_rank(geom: &ArrayGeometry, delta: &DVector<f64>) -> usize {
    linalg::rank(&to_dmatrix(&geom.frame_matrices(delta).transverse), 1e-10)
}
