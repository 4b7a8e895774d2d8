//! Quaternion and rotation algebra.
//!
//! Quaternions are stored scalar-first as `[s; v]`. Arithmetic never
//! normalizes; only [`UnitQuaternion`] constructors check the norm.

use core::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::{Error, Result};

/// Tolerance on `| |q| - 1 |` accepted by [`UnitQuaternion::try_new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub s: f64,
    pub v: Vector3<f64>,
}

impl Quaternion {
    pub const fn new(s: f64, v: Vector3<f64>) -> Self {
        Self { s, v }
    }

    pub fn from_components(s: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(s, Vector3::new(x, y, z))
    }

    pub fn identity() -> Self {
        Self::new(1.0, Vector3::zeros())
    }

    /// Embeds a 3-vector as `[0; v]`.
    pub fn pure(v: Vector3<f64>) -> Self {
        Self::new(0.0, v)
    }

    pub fn from_vector(q: &Vector4<f64>) -> Self {
        Self::from_components(q[0], q[1], q[2], q[3])
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self::from_components(q[0], q[1], q[2], q[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.v.x, self.v.y, self.v.z)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.s, -self.v)
    }

    pub fn norm_squared(&self) -> f64 {
        self.s * self.s + self.v.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Euclidean inner product on the 4-vector representation.
    pub fn dot(&self, other: &Self) -> f64 {
        self.s * other.s + self.v.dot(&other.v)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.s * k, self.v * k)
    }

    /// `O_L(q)`: matrix form of left multiplication, `q ∘ p = O_L(q) p`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = self.s;
        m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-self.v.transpose()));
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(&self.v);
        m.fixed_view_mut::<3, 3>(1, 1)
            .copy_from(&(Matrix3::identity() * self.s + hat(&self.v)));
        m
    }

    /// `O_R(p)`: matrix form of right multiplication, `q ∘ p = O_R(p) q`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = self.s;
        m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-self.v.transpose()));
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(&self.v);
        m.fixed_view_mut::<3, 3>(1, 1)
            .copy_from(&(Matrix3::identity() * self.s - hat(&self.v)));
        m
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        qprod(&self, &rhs)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Quaternion product `q ∘ p`.
pub fn qprod(q: &Quaternion, p: &Quaternion) -> Quaternion {
    Quaternion::new(
        q.s * p.s - q.v.dot(&p.v),
        p.v * q.s + q.v * p.s + q.v.cross(&p.v),
    )
}

/// Cross-product matrix: `hat(w) * v == w × v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// `C(q) = q_s² I + 2 q_s q̂_v + q_v q_vᵀ + q̂_v²`, evaluated for any
/// quaternion. For non-unit `q` this is `|q|²` times a rotation.
pub fn rotm_unchecked(q: &Quaternion) -> Matrix3<f64> {
    let qv_hat = hat(&q.v);
    Matrix3::identity() * (q.s * q.s)
        + qv_hat * (2.0 * q.s)
        + q.v * q.v.transpose()
        + qv_hat * qv_hat
}

/// A quaternion whose norm was within [`UNIT_TOLERANCE`] of one at
/// construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub fn try_new(q: Quaternion) -> Result<Self> {
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self(q))
    }

    pub fn new_normalize(q: Quaternion) -> Result<Self> {
        let norm = q.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self(q.scale(1.0 / norm)))
    }

    pub fn identity() -> Self {
        Self(Quaternion::identity())
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Parameter("rotation axis must be nonzero".into()));
        }
        let half = 0.5 * angle;
        Ok(Self(Quaternion::new(half.cos(), axis * (half.sin() / n))))
    }

    pub fn quaternion(&self) -> &Quaternion {
        &self.0
    }

    pub fn into_inner(self) -> Quaternion {
        self.0
    }

    pub fn conj(&self) -> Self {
        Self(self.0.conj())
    }

    pub fn rotm(&self) -> RotationMatrix {
        rotm(self)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;

    fn neg(self) -> UnitQuaternion {
        UnitQuaternion(-self.0)
    }
}

impl Mul for UnitQuaternion {
    type Output = Quaternion;

    fn mul(self, rhs: UnitQuaternion) -> Quaternion {
        qprod(&self.0, &rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    /// Max-abs entry of `CᵀC − I`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

/// Rotation matrix of a unit quaternion (body to inertial).
pub fn rotm(q: &UnitQuaternion) -> RotationMatrix {
    RotationMatrix(rotm_unchecked(&q.0))
}

/// Geodesic angle in radians between two attitudes; `q` and `-q` are the
/// same attitude.
pub fn attitude_error(q: &UnitQuaternion, q_d: &UnitQuaternion) -> f64 {
    attitude_error_raw(&q.0, &q_d.0)
}

/// [`attitude_error`] for quaternions that are only approximately unit
/// (e.g. integrated states).
///
/// Evaluated as `2 atan2(|e_v|, |e_s|)` with `e = q_d* ∘ q`, which equals
/// `2 acos(|<q, q_d>|)` for unit inputs and stays accurate near zero.
pub fn attitude_error_raw(q: &Quaternion, q_d: &Quaternion) -> f64 {
    let e = qprod(&q_d.conj(), q);
    2.0 * e.v.norm().atan2(e.s.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn product_of_basis_elements() {
        let i = Quaternion::from_components(0.0, 1.0, 0.0, 0.0);
        let j = Quaternion::from_components(0.0, 0.0, 1.0, 0.0);
        assert_eq!(qprod(&i, &j), Quaternion::from_components(0.0, 0.0, 0.0, 1.0));
        let p = Quaternion::from_components(0.3, -1.0, 2.0, 0.5);
        assert_eq!(qprod(&Quaternion::identity(), &p), p);
    }

    #[test]
    fn identity_matrices() {
        assert_eq!(Quaternion::identity().left_matrix(), Matrix4::identity());
        assert_eq!(Quaternion::identity().right_matrix(), Matrix4::identity());
    }

    #[test]
    fn hat_basics() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(hat(&Vector3::x()) * Vector3::y(), Vector3::z());
    }

    #[test]
    fn conj_and_norm() {
        assert_eq!(Quaternion::identity().conj(), Quaternion::identity());
        assert_eq!(Quaternion::from_components(0.0, 3.0, 4.0, 0.0).norm(), 5.0);
        let v = Vector3::new(1.0, -2.0, 2.0);
        assert_eq!(Quaternion::pure(v).s, 0.0);
        assert_eq!(Quaternion::pure(v).norm(), 3.0);
        assert_eq!(Quaternion::pure(Vector3::zeros()).norm(), 0.0);
    }

    #[test]
    fn rotm_quarter_turn_about_z() {
        let q = UnitQuaternion::try_new(Quaternion::from_components(
            FRAC_PI_4.cos(),
            0.0,
            0.0,
            FRAC_PI_4.sin(),
        ))
        .unwrap();
        let r = rotm(&q);
        assert_abs_diff_eq!(r.matrix() * Vector3::x(), Vector3::y(), epsilon = 1e-15);
        assert_eq!(*rotm(&UnitQuaternion::identity()).matrix(), Matrix3::identity());
    }

    #[test]
    fn unit_constructor_rejects_non_unit() {
        let q = Quaternion::from_components(2.0, 0.0, 0.0, 0.0);
        assert_eq!(UnitQuaternion::try_new(q), Err(Error::NotUnit { norm: 2.0 }));
        let nearly = Quaternion::from_components(1.0 + 5e-10, 0.0, 0.0, 0.0);
        assert!(UnitQuaternion::try_new(nearly).is_ok());
    }

    #[test]
    fn attitude_error_cases() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        assert_eq!(attitude_error(&q, &q), 0.0);
        assert_eq!(attitude_error(&q, &-q), 0.0);
        let z90 = UnitQuaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(
            attitude_error(&UnitQuaternion::identity(), &z90),
            FRAC_PI_2,
            epsilon = 1e-15
        );
    }
}
