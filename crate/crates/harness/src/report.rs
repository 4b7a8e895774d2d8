//! JSON report documents.

use cmg_core::opt::{IterationRecord, ManeuverMetrics, Order, SolverReport, Termination, SETTLE_THRESHOLD_DEG};
use serde::{Deserialize, Serialize};

use crate::config::{GeometryKind, ScenarioConfig};

pub const SOLVE_REPORT_FORMAT: &str = "cmg-solve-report 1";
pub const BATCH_REPORT_FORMAT: &str = "cmg-batch-report 1";

/// Identifier of the random maneuver generator written into batch reports.
pub const RNG_ALGORITHM: &str = "ChaCha20Rng::seed_from_u64(seed); per maneuver: q0, qd = normalize(4 x StandardNormal), then config_seed = next_u64()";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub maneuver_cost: f64,
    pub control_effort: f64,
    pub maneuver_energy: f64,
    pub maneuver_time: f64,
    pub final_att_error_deg: f64,
    pub max_ug: f64,
    pub max_uw: f64,
}

impl From<ManeuverMetrics> for MetricsRecord {
    fn from(m: ManeuverMetrics) -> Self {
        Self {
            maneuver_cost: m.maneuver_cost,
            control_effort: m.control_effort,
            maneuver_energy: m.maneuver_energy,
            maneuver_time: m.maneuver_time,
            final_att_error_deg: m.final_att_error,
            max_ug: m.max_ug,
            max_uw: m.max_uw,
        }
    }
}

impl MetricsRecord {
    /// Largest absolute difference over all fields.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.maneuver_cost - other.maneuver_cost,
            self.control_effort - other.control_effort,
            self.maneuver_energy - other.maneuver_energy,
            self.maneuver_time - other.maneuver_time,
            self.final_att_error_deg - other.final_att_error_deg,
            self.max_ug - other.max_ug,
            self.max_uw - other.max_uw,
        ]
        .iter()
        .fold(0.0, |a, d| a.max(d.abs()))
    }

    fn mean(rows: &[Self]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Self) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(Self {
            maneuver_cost: avg(|r| r.maneuver_cost),
            control_effort: avg(|r| r.control_effort),
            maneuver_energy: avg(|r| r.maneuver_energy),
            maneuver_time: avg(|r| r.maneuver_time),
            final_att_error_deg: avg(|r| r.final_att_error_deg),
            max_ug: avg(|r| r.max_ug),
            max_uw: avg(|r| r.max_uw),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub cost: f64,
    pub theta: f64,
    pub step: Option<f64>,
    pub order: String,
    pub fell_back: bool,
}

impl From<&IterationRecord> for IterationRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            cost: r.cost,
            theta: r.theta,
            step: r.step,
            order: match r.order {
                Order::First => "first",
                Order::Second => "second",
            }
            .to_string(),
            fell_back: r.fell_back,
        }
    }
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max_iterations",
        Termination::Stalled => "stalled",
        Termination::Failed => "failed",
    }
}

/// Threshold comparisons of an optimal solution against its guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceFlags {
    /// Optimal objective ≤ 0.6 × guess objective.
    pub cost_ratio_le_0_6: bool,
    /// Optimal terminal attitude error ≤ 0.2°.
    pub final_error_le_0_2_deg: bool,
    pub maneuver_time_decreased: bool,
    /// Optimal control effort < 0.5 × guess effort.
    pub effort_ratio_lt_0_5: bool,
    /// Optimal maneuver energy > guess maneuver energy.
    pub energy_ratio_gt_1: bool,
    pub monotone_cost: bool,
    /// Terminated with |θ| ≤ θ_tol.
    pub converged: bool,
}

impl AcceptanceFlags {
    pub fn evaluate(guess: &MetricsRecord, optimal: &MetricsRecord, solver: &SolverReport) -> Self {
        Self {
            cost_ratio_le_0_6: optimal.maneuver_cost <= 0.6 * guess.maneuver_cost,
            final_error_le_0_2_deg: optimal.final_att_error_deg <= 0.2,
            maneuver_time_decreased: optimal.maneuver_time < guess.maneuver_time,
            effort_ratio_lt_0_5: optimal.control_effort < 0.5 * guess.control_effort,
            energy_ratio_gt_1: optimal.maneuver_energy > guess.maneuver_energy,
            monotone_cost: monotone(&solver.history),
            converged: solver.termination == Termination::Converged,
        }
    }
}

/// True if the recorded costs never increase.
pub fn monotone(history: &[IterationRecord]) -> bool {
    history.windows(2).all(|w| w[1].cost <= w[0].cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub guess_s: f64,
    pub solve_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub format: String,
    /// Resolved scenario, every default included.
    pub scenario: ScenarioConfig,
    pub scenario_hash: String,
    pub x0_hash: String,
    pub warnings: Vec<String>,
    pub settle_threshold_deg: f64,
    pub guess: MetricsRecord,
    pub optimal: MetricsRecord,
    /// Largest `‖ω‖` over the optimal trajectory (rad/s).
    pub omega_peak: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_theta: Option<f64>,
    pub termination: String,
    pub failure: Option<String>,
    pub history: Vec<IterationRow>,
    pub acceptance: AcceptanceFlags,
    pub timing: Timing,
}

impl SolveReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scenario: &ScenarioConfig,
        x0_hash: String,
        guess: MetricsRecord,
        optimal: MetricsRecord,
        omega_peak: f64,
        solver: &SolverReport,
        timing: Timing,
    ) -> Self {
        Self {
            format: SOLVE_REPORT_FORMAT.to_string(),
            scenario: scenario.clone(),
            scenario_hash: scenario.hash(),
            x0_hash,
            warnings: scenario.warnings.clone(),
            settle_threshold_deg: SETTLE_THRESHOLD_DEG,
            guess,
            optimal,
            omega_peak,
            initial_cost: solver.initial_cost,
            final_cost: solver.final_cost(),
            final_theta: solver.final_theta(),
            termination: termination_name(solver.termination).to_string(),
            failure: solver.failure.as_ref().map(|e| e.to_string()),
            history: solver.history.iter().map(IterationRow::from).collect(),
            acceptance: AcceptanceFlags::evaluate(&guess, &optimal, solver),
            timing,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Outcome of one batch maneuver on one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverRow {
    pub geometry: GeometryKind,
    pub index: usize,
    pub q0: [f64; 4],
    pub qd: [f64; 4],
    pub config_seed: u64,
    pub x0_hash: Option<String>,
    pub guess: Option<MetricsRecord>,
    pub optimal: Option<MetricsRecord>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub error: Option<String>,
}

/// Mean metrics of one geometry, guess and optimal side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub geometry: GeometryKind,
    /// Maneuvers that produced both a guess and an optimal solution.
    pub completed: usize,
    pub failed: usize,
    pub guess: Option<MetricsRecord>,
    pub optimal: Option<MetricsRecord>,
    pub mean_cost_decreased: Option<bool>,
    pub mean_time_decreased: Option<bool>,
}

impl TableRow {
    pub fn summarize(geometry: GeometryKind, rows: &[ManeuverRow]) -> Self {
        let mine: Vec<&ManeuverRow> = rows.iter().filter(|r| r.geometry == geometry).collect();
        let done: Vec<(MetricsRecord, MetricsRecord)> =
            mine.iter().filter_map(|r| Some((r.guess?, r.optimal?))).collect();
        let guess = MetricsRecord::mean(&done.iter().map(|p| p.0).collect::<Vec<_>>());
        let optimal = MetricsRecord::mean(&done.iter().map(|p| p.1).collect::<Vec<_>>());
        let both = guess.zip(optimal);
        Self {
            geometry,
            completed: done.len(),
            failed: mine.len() - done.len(),
            guess,
            optimal,
            mean_cost_decreased: both.map(|(g, o)| o.maneuver_cost < g.maneuver_cost),
            mean_time_decreased: both.map(|(g, o)| o.maneuver_time < g.maneuver_time),
        }
    }
}

/// Aggregate batch report. Contains no timing so that fixed inputs give a
/// byte-identical document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub format: String,
    pub scenario: ScenarioConfig,
    pub scenario_hash: String,
    pub seed: u64,
    pub count: usize,
    pub rng: String,
    pub settle_threshold_deg: f64,
    pub table: Vec<TableRow>,
    pub maneuvers: Vec<ManeuverRow>,
}

impl BatchReport {
    pub fn new(scenario: &ScenarioConfig, count: usize, maneuvers: Vec<ManeuverRow>) -> Self {
        let table = scenario.batch.geometries.iter().map(|&g| TableRow::summarize(g, &maneuvers)).collect();
        Self {
            format: BATCH_REPORT_FORMAT.to_string(),
            scenario: scenario.clone(),
            scenario_hash: scenario.hash(),
            seed: scenario.seed,
            count,
            rng: RNG_ALGORITHM.to_string(),
            settle_threshold_deg: SETTLE_THRESHOLD_DEG,
            table,
            maneuvers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
