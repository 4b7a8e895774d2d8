//! Attitude dynamics, cost design and trajectory optimization for spacecraft
//! driven by control moment gyroscope (CMG) arrays.
//!
//! The crate is organised bottom-up:
//!
//! - [`quat`]: quaternion products, matrix forms, rotations and attitude error.
//! - [`array`]: CMG array geometry, configuration dependent inertias, momentum
//!   transforms and actuator Jacobians.
//! - [`dynamics`]: the momentum-conserving state dynamics, the conservation
//!   constraints, their Jacobian, tangent bases and linearizations.
//! - [`integrate`]: an adaptive Dormand-Prince 5(4) integrator.
//! - [`regulator`]: tangent-space LQR design and its lift to ambient cost
//!   functionals.
//! - [`guess`]: a singularity-robust steering law used to produce feasible
//!   initial trajectories.
//! - [`opt`]: the projection-operator Newton trajectory optimizer and maneuver
//!   metrics.
//!
//! The crate is `no_std` compatible (with `alloc`); the `std` feature is on by
//! default and only adds wall-clock timing and `std::error::Error` impls.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x <= tol)` style checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod array;
pub mod dynamics;
mod error;
pub mod guess;
pub mod integrate;
pub mod linalg;
pub mod opt;
pub mod quat;
pub mod regulator;

pub use error::{Error, Result};

#[allow(unused_imports)]
pub(crate) mod prelude {
    pub use alloc::boxed::Box;
    pub use alloc::string::{String, ToString};
    pub use alloc::vec;
    pub use alloc::vec::Vec;
    #[cfg(not(feature = "std"))]
    pub use num_traits::Float;
}
