//! Turns a resolved configuration into model objects.

use cmg_core::array::{ArrayGeometry, CmgInertia, SatelliteParams};
use cmg_core::dynamics::{find_zero_momentum_config, Dynamics, State};
use cmg_core::integrate::uniform_grid;
use cmg_core::quat::UnitQuaternion;
use nalgebra::{DVector, Vector3};
use sha2::{Digest, Sha256};

use crate::config::{hex, GeometryKind, ScenarioConfig};
use crate::HarnessError;

/// Everything a pipeline stage needs about one maneuver.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dynamics: Dynamics,
    pub x0: DVector<f64>,
    pub x_d: DVector<f64>,
    pub grid: Vec<f64>,
}

impl Scenario {
    /// SHA-256 of the little-endian bytes of `x0`.
    pub fn x0_hash(&self) -> String {
        state_hash(&self.x0)
    }
}

pub fn state_hash(x: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Inclination used for a geometry other than the configured one: 45° for
/// rooftops, 54.74° (`acos(1/√3)`) for pyramids.
pub fn default_beta(kind: GeometryKind) -> f64 {
    match kind {
        GeometryKind::Rooftop => core::f64::consts::FRAC_PI_4,
        GeometryKind::Pyramid => (1.0 / 3f64.sqrt()).acos(),
    }
}

/// `(m, β)` of `kind`: the configured values for the configured geometry,
/// four CMGs at [`default_beta`] otherwise.
pub fn geometry_shape(cfg: &ScenarioConfig, kind: GeometryKind) -> (usize, f64) {
    if kind == cfg.geometry.kind {
        (cfg.geometry.m, cfg.geometry.beta)
    } else {
        (4, default_beta(kind))
    }
}

pub fn build_dynamics(cfg: &ScenarioConfig, kind: GeometryKind) -> Result<Dynamics, HarnessError> {
    let stage = "geometry";
    let (m, beta) = geometry_shape(cfg, kind);
    let geom = match kind {
        GeometryKind::Rooftop => ArrayGeometry::rooftop(m, beta),
        GeometryKind::Pyramid => ArrayGeometry::pyramid(beta),
    }
    .and_then(|geom| {
        geom.with_inertia(CmgInertia {
            gimbal: cfg.inertia.j_g,
            spin_wheel: cfg.inertia.j_sw,
            spin_gimbal: cfg.inertia.j_sg,
            transverse: cfg.inertia.j_t,
        })
    })
    .map_err(|e| HarnessError::stage(stage, e))?;
    let sat = SatelliteParams::new(Vector3::from(cfg.inertia.body), geom).map_err(|e| HarnessError::stage(stage, e))?;
    Ok(Dynamics::new(sat))
}

/// Rest-to-rest maneuver from `q0` to `qd` at a zero-momentum, non-singular
/// gimbal configuration chosen with `config_seed`; the target keeps the
/// initial gimbal angles and wheel momenta.
pub fn build_scenario_with(
    cfg: &ScenarioConfig,
    kind: GeometryKind,
    q0: UnitQuaternion,
    qd: UnitQuaternion,
    config_seed: u64,
) -> Result<Scenario, HarnessError> {
    let dynamics = build_dynamics(cfg, kind)?;
    let m = dynamics.m();
    let delta = find_zero_momentum_config(dynamics.geometry(), cfg.h_swr_target, config_seed)
        .map_err(|e| HarnessError::stage("initial configuration", e))?;
    let h_swr = DVector::from_element(m, cfg.h_swr_target);
    let x0 = State::equilibrium(q0, delta.clone(), h_swr.clone()).to_vector();
    let x_d = State::equilibrium(qd, delta, h_swr).to_vector();
    let grid = uniform_grid(cfg.horizon, cfg.dt).map_err(|e| HarnessError::stage("grid", e))?;
    Ok(Scenario { dynamics, x0, x_d, grid })
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario, HarnessError> {
    build_scenario_with(cfg, cfg.geometry.kind, cfg.q0(), cfg.qd(), cfg.seed)
}
