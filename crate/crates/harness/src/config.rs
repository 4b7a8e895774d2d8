//! Scenario configuration files.
//!
//! Scenarios are TOML documents. Every optional key has a default; the
//! resolved [`ScenarioConfig`] (with all defaults filled in) is echoed into
//! every report and hashed into every trajectory file.
//!
//! ```toml
//! seed = 7
//! horizon = 180.0
//!
//! [geometry]
//! type = "rooftop"
//! m = 4
//! beta = 0.7853981633974483
//!
//! [maneuver]
//! axis = [0.0, 0.0, 1.0]
//! angle_deg = 180.0
//! ```

use std::path::Path;

use cmg_core::guess::SrParams;
use cmg_core::integrate::Tolerances;
use cmg_core::opt::SolverConfig;
use cmg_core::quat::{Quaternion, UnitQuaternion};
use cmg_core::regulator::LqrWeights;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Drift of a configured quaternion norm from 1 above which loading warns.
pub const QUATERNION_DRIFT_WARNING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Rooftop,
    Pyramid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    #[serde(rename = "type")]
    pub kind: GeometryKind,
    pub m: usize,
    /// Inclination (rad).
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InertiaConfig {
    /// Diagonal of the rigid-body inertia (kg·m²).
    pub body: [f64; 3],
    pub j_g: f64,
    pub j_sw: f64,
    pub j_sg: f64,
    pub j_t: f64,
}

/// Start and target attitudes as scalar-first unit quaternions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverConfig {
    pub q0: [f64; 4],
    pub qd: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// `[q, h_swr, ω, δ, h_ga]`.
    pub state: [f64; 5],
    /// `[u_g, u_w]`.
    pub control: [f64; 2],
}

impl WeightConfig {
    pub fn to_lqr(self) -> LqrWeights {
        LqrWeights::from_arrays(self.state, self.control)
    }

    fn from_lqr(w: LqrWeights) -> Self {
        Self { state: w.state_array(), control: w.control_array() }
    }
}

/// Steering-law gains; `sigma_ref` defaults to a tenth of the wheel
/// momentum target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    pub lambda0: f64,
    pub sigma_ref: f64,
    pub k_p: f64,
    pub k_d: f64,
    pub k_delta: f64,
    pub k_w: f64,
    pub tau_max: f64,
    pub delta_dot_max: f64,
}

impl SrConfig {
    pub fn to_params(self) -> SrParams {
        SrParams {
            lambda0: self.lambda0,
            sigma_ref: self.sigma_ref,
            k_p: self.k_p,
            k_d: self.k_d,
            k_delta: self.k_delta,
            k_w: self.k_w,
            tau_max: self.tau_max,
            delta_dot_max: self.delta_dot_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub theta_tol: f64,
    pub armijo: f64,
    pub contraction: f64,
    pub min_step: f64,
    /// `|θ|` below which the second-order model is used; `0` disables it.
    pub second_order_below: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub abs: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub geometries: Vec<GeometryKind>,
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Maneuver horizon `T` (s).
    pub horizon: f64,
    /// Grid spacing (s).
    pub dt: f64,
    /// Wheel momentum target (N·m·s) shared by all CMGs.
    pub h_swr_target: f64,
    pub geometry: GeometryConfig,
    pub inertia: InertiaConfig,
    pub maneuver: ManeuverConfig,
    pub cost_weights: WeightConfig,
    pub reg_weights: WeightConfig,
    pub sr: SrConfig,
    pub solver: SolverSettings,
    pub integrator: IntegratorConfig,
    pub batch: BatchConfig,
    /// Notes produced while resolving (normalizations and the like).
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl ScenarioConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances { abs: self.integrator.abs, rel: self.integrator.rel }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.solver.max_iters,
            theta_tol: self.solver.theta_tol,
            armijo: self.solver.armijo,
            contraction: self.solver.contraction,
            min_step: self.solver.min_step,
            second_order_below: (self.solver.second_order_below > 0.0).then_some(self.solver.second_order_below),
            tolerances: self.tolerances(),
        }
    }

    pub fn q0(&self) -> UnitQuaternion {
        unit(self.maneuver.q0)
    }

    pub fn qd(&self) -> UnitQuaternion {
        unit(self.maneuver.qd)
    }

    /// Single-line JSON form; [`ScenarioConfig::from_json`] reads it back
    /// exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Reads the output of [`ScenarioConfig::to_json`]. No defaults are
    /// applied; every field must be present.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("embedded scenario: {e}")))
    }

    /// SHA-256 of [`ScenarioConfig::to_json`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    /// Rooftop(4, π/4), 180° about `ẑ`, `T = 180 s`, all defaults.
    pub fn rooftop_default() -> Self {
        resolve(RawScenario::default()).expect("defaults are valid")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unit(q: [f64; 4]) -> UnitQuaternion {
    UnitQuaternion::new_normalize(Quaternion::from_components(q[0], q[1], q[2], q[3])).expect("validated on load")
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Option<u64>,
    horizon: Option<f64>,
    dt: Option<f64>,
    h_swr_target: Option<f64>,
    geometry: Option<RawGeometry>,
    inertia: Option<RawInertia>,
    maneuver: Option<RawManeuver>,
    cost_weights: Option<RawWeights>,
    reg_weights: Option<RawWeights>,
    sr: Option<RawSr>,
    solver: Option<RawSolver>,
    integrator: Option<RawIntegrator>,
    batch: Option<RawBatch>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    #[serde(rename = "type")]
    kind: Option<GeometryKind>,
    m: Option<usize>,
    beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInertia {
    body: Option<[f64; 3]>,
    j_g: Option<f64>,
    j_sw: Option<f64>,
    j_sg: Option<f64>,
    j_t: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManeuver {
    q0: Option<[f64; 4]>,
    qd: Option<[f64; 4]>,
    axis: Option<[f64; 3]>,
    angle_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    state: Option<[f64; 5]>,
    control: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSr {
    lambda0: Option<f64>,
    sigma_ref: Option<f64>,
    k_p: Option<f64>,
    k_d: Option<f64>,
    k_delta: Option<f64>,
    k_w: Option<f64>,
    tau_max: Option<f64>,
    delta_dot_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iters: Option<usize>,
    theta_tol: Option<f64>,
    armijo: Option<f64>,
    contraction: Option<f64>,
    min_step: Option<f64>,
    second_order_below: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    abs: Option<f64>,
    rel: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBatch {
    geometries: Option<Vec<GeometryKind>>,
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, HarnessError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    resolve(raw)
}

fn invalid(key: &str, why: &str) -> HarnessError {
    HarnessError::Config(format!("`{key}` {why}"))
}

fn positive(key: &str, v: f64) -> Result<f64, HarnessError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, &format!("must be positive and finite, got {v}")))
    }
}

fn normalized(key: &str, q: [f64; 4], warnings: &mut Vec<String>) -> Result<[f64; 4], HarnessError> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(invalid(key, "must be a nonzero quaternion"));
    }
    if (norm - 1.0).abs() > QUATERNION_DRIFT_WARNING {
        let msg = format!("{key} had norm {norm}; normalized");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(q.map(|v| v / norm))
}

fn resolve(raw: RawScenario) -> Result<ScenarioConfig, HarnessError> {
    let mut warnings = Vec::new();

    let geometry = match raw.geometry {
        None => GeometryConfig { kind: GeometryKind::Rooftop, m: 4, beta: core::f64::consts::FRAC_PI_4 },
        Some(g) => {
            let kind = g.kind.ok_or_else(|| invalid("geometry.type", "is required (rooftop or pyramid)"))?;
            let beta = g.beta.ok_or_else(|| invalid("geometry.beta (β)", "is required (inclination in radians)"))?;
            if !(beta.is_finite() && beta > 0.0 && beta < core::f64::consts::FRAC_PI_2) {
                return Err(invalid("geometry.beta (β)", &format!("must lie in (0, π/2), got {beta}")));
            }
            let m = g.m.unwrap_or(4);
            match kind {
                GeometryKind::Pyramid if m != 4 => return Err(invalid("geometry.m", "must be 4 for a pyramid")),
                GeometryKind::Rooftop if m < 4 || m % 2 != 0 => {
                    return Err(invalid("geometry.m", "must be even and at least 4 for a rooftop"))
                }
                _ => {}
            }
            GeometryConfig { kind, m, beta }
        }
    };

    let ri = raw.inertia.unwrap_or_default();
    let body = ri.body.unwrap_or([1500.0, 1500.0, 2000.0]);
    for (i, v) in body.iter().enumerate() {
        positive(&format!("inertia.body[{i}]"), *v)?;
    }
    let inertia = InertiaConfig {
        body,
        j_g: positive("inertia.j_g", ri.j_g.unwrap_or(0.115))?,
        j_sw: positive("inertia.j_sw", ri.j_sw.unwrap_or(0.075))?,
        j_sg: positive("inertia.j_sg", ri.j_sg.unwrap_or(0.015))?,
        j_t: positive("inertia.j_t", ri.j_t.unwrap_or(0.001))?,
    };

    let rm = raw.maneuver.unwrap_or_default();
    let q0 = normalized("maneuver.q0", rm.q0.unwrap_or([1.0, 0.0, 0.0, 0.0]), &mut warnings)?;
    let qd = match (rm.qd, rm.axis, rm.angle_deg) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(invalid("maneuver.qd", "conflicts with maneuver.axis/angle_deg"));
        }
        (Some(qd), None, None) => normalized("maneuver.qd", qd, &mut warnings)?,
        (None, axis, angle) => {
            let axis = Vector3::from(axis.unwrap_or([0.0, 0.0, 1.0]));
            let angle = angle.unwrap_or(180.0).to_radians();
            let rot = UnitQuaternion::from_axis_angle(&axis, angle)
                .map_err(|e| invalid("maneuver.axis", &e.to_string()))?;
            let start = unit(q0);
            let target = cmg_core::quat::qprod(start.quaternion(), rot.quaternion());
            let v = target.to_vector();
            normalized("maneuver.qd", [v[0], v[1], v[2], v[3]], &mut warnings)?
        }
    };
    let maneuver = ManeuverConfig { q0, qd };

    let weights = |key: &str, raw: Option<RawWeights>, default: LqrWeights| -> Result<WeightConfig, HarnessError> {
        let d = WeightConfig::from_lqr(default);
        let r = raw.unwrap_or_default();
        let w = WeightConfig { state: r.state.unwrap_or(d.state), control: r.control.unwrap_or(d.control) };
        w.to_lqr().validate().map_err(|e| invalid(key, &e.to_string()))?;
        Ok(w)
    };
    let cost_weights = weights("cost_weights", raw.cost_weights, LqrWeights::cost_default())?;
    let reg_weights = weights("reg_weights", raw.reg_weights, LqrWeights::regulator_default())?;

    let h_swr_target = positive("h_swr_target", raw.h_swr_target.unwrap_or(25.0))?;
    let d = SrParams::with_target(&[h_swr_target]);
    let rs = raw.sr.unwrap_or_default();
    let sr = SrConfig {
        lambda0: rs.lambda0.unwrap_or(d.lambda0),
        sigma_ref: rs.sigma_ref.unwrap_or(d.sigma_ref),
        k_p: rs.k_p.unwrap_or(d.k_p),
        k_d: rs.k_d.unwrap_or(d.k_d),
        k_delta: rs.k_delta.unwrap_or(d.k_delta),
        k_w: rs.k_w.unwrap_or(d.k_w),
        tau_max: rs.tau_max.unwrap_or(d.tau_max),
        delta_dot_max: rs.delta_dot_max.unwrap_or(d.delta_dot_max),
    };
    sr.to_params().validate().map_err(|e| invalid("sr", &e.to_string()))?;

    let ds = SolverConfig::default();
    let rsv = raw.solver.unwrap_or_default();
    let solver = SolverSettings {
        max_iters: rsv.max_iters.unwrap_or(ds.max_iters),
        theta_tol: rsv.theta_tol.unwrap_or(ds.theta_tol),
        armijo: rsv.armijo.unwrap_or(ds.armijo),
        contraction: rsv.contraction.unwrap_or(ds.contraction),
        min_step: rsv.min_step.unwrap_or(ds.min_step),
        second_order_below: rsv.second_order_below.unwrap_or(ds.second_order_below.unwrap_or(0.0)),
    };
    if solver.second_order_below < 0.0 {
        return Err(invalid("solver.second_order_below", "must be nonnegative"));
    }

    let dt_tol = Tolerances::default();
    let ri = raw.integrator.unwrap_or_default();
    let integrator = IntegratorConfig {
        abs: positive("integrator.abs", ri.abs.unwrap_or(dt_tol.abs))?,
        rel: positive("integrator.rel", ri.rel.unwrap_or(dt_tol.rel))?,
    };

    let horizon = positive("horizon", raw.horizon.unwrap_or(180.0))?;
    let dt = positive("dt", raw.dt.unwrap_or(0.05))?;
    if dt >= horizon {
        return Err(invalid("dt", "must be smaller than the horizon"));
    }
    let batch = BatchConfig {
        geometries: raw.batch.and_then(|b| b.geometries).unwrap_or_else(|| vec![geometry.kind]),
    };
    if batch.geometries.is_empty() {
        return Err(invalid("batch.geometries", "must list at least one geometry"));
    }

    let cfg = ScenarioConfig {
        seed: raw.seed.unwrap_or(0),
        horizon,
        dt,
        h_swr_target,
        geometry,
        inertia,
        maneuver,
        cost_weights,
        reg_weights,
        sr,
        solver,
        integrator,
        batch,
        warnings,
    };
    cfg.solver_config().validate().map_err(|e| invalid("solver", &e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_rooftop_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::rooftop_default());
        assert_eq!(cfg.inertia.body, [1500.0, 1500.0, 2000.0]);
        assert_eq!(cfg.cost_weights.state, [5.0, 10.0, 0.1, 0.01, 50.0]);
        assert_eq!(cfg.cost_weights.control, [1.0, 1.0]);
        // 180° about z from identity
        assert!((cfg.maneuver.qd[3].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_beta_names_the_key() {
        let err = parse_config("[geometry]\ntype = \"pyramid\"\nm = 4\n").unwrap_err();
        assert!(err.to_string().contains("geometry.beta (β)"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let err = parse_config("[geometry]\ntype = \"rooftop\"\nbeta = 0.7\ngamma = 1\n").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn drifting_quaternions_are_normalized_with_a_warning() {
        let cfg = parse_config("[maneuver]\nq0 = [2.0, 0.0, 0.0, 0.0]\nqd = [0.0, 0.0, 0.0, 1.0]\n").unwrap();
        assert_eq!(cfg.maneuver.q0, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cfg.warnings.len(), 1);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = parse_config("seed = 1").unwrap();
        let b = parse_config("seed = 2").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), parse_config("seed = 1\n").unwrap().hash());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = parse_config("[maneuver]\naxis = [1.0, 2.0, 3.0]\nangle_deg = 77.0\n").unwrap();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, ScenarioConfig { warnings: Vec::new(), ..cfg.clone() });
        assert_eq!(back.hash(), cfg.hash());
    }
}
