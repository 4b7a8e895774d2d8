//! End-to-end pipeline stages behind the CLI verbs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cmg_core::guess::generate_guess;
use cmg_core::opt::{metrics, project, solve, tv_regulator, SolverReport, Termination, Trajectory};
use cmg_core::quat::{Quaternion, UnitQuaternion};
use cmg_core::regulator::{design, CostFunctional};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{GeometryKind, ScenarioConfig};
use crate::files::{constraint_residuals, read_trajectory, write_bytes, write_trajectory, TrajectoryMeta};
use crate::report::{termination_name, BatchReport, ManeuverRow, MetricsRecord, SolveReport, Timing};
use crate::scenario::{build_scenario, build_scenario_with, state_hash, Scenario};
use crate::HarnessError;

/// Largest per-interval re-integration residual `check` accepts.
pub const INTERVAL_RESIDUAL_TOL: f64 = 1e-7;
/// Largest constraint residual `check` accepts, relative to `1 + ‖h₀‖`.
pub const CONSTRAINT_TOL: f64 = 1e-6;

pub const GUESS_FILE: &str = "guess.csv";
pub const OPTIMAL_FILE: &str = "optimal.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BATCH_FILE: &str = "batch.json";

/// Steering-law baseline of one scenario.
#[derive(Debug, Clone)]
pub struct GuessRun {
    pub scenario: Scenario,
    pub cost: CostFunctional,
    /// The steering-law trajectory projected onto the feasible set, which is
    /// also the solver's starting point.
    pub trajectory: Trajectory,
    pub metrics: MetricsRecord,
    pub wall_clock: f64,
}

#[derive(Debug, Clone)]
pub struct SolveRun {
    pub guess: GuessRun,
    pub solver: SolverReport,
    pub metrics: MetricsRecord,
    pub report: SolveReport,
}

impl SolveRun {
    /// `Err` for a stalled or failed solve; the run itself is kept so its
    /// files can still be written.
    pub fn status(&self) -> Result<(), HarnessError> {
        match self.solver.termination {
            Termination::Converged | Termination::MaxIterations => Ok(()),
            Termination::Stalled => Err(HarnessError::Stall(format!(
                "line search found no step at iteration {} (cost {})",
                self.solver.history.len(),
                self.solver.final_cost()
            ))),
            Termination::Failed => Err(HarnessError::stage(
                "solve",
                self.solver.failure.clone().unwrap_or(cmg_core::Error::Parameter("unknown failure".into())),
            )),
        }
    }
}

fn guess_for(cfg: &ScenarioConfig, scenario: Scenario) -> Result<GuessRun, HarnessError> {
    let started = Instant::now();
    let tol = cfg.tolerances();
    let Scenario { dynamics, x0, x_d, grid } = &scenario;
    let (cost, _) = design(dynamics, x_d, &cfg.cost_weights.to_lqr(), &cfg.reg_weights.to_lqr())
        .map_err(|e| HarnessError::stage("cost design", e))?;
    let raw = generate_guess(dynamics, x0, x_d, grid, &cfg.sr.to_params(), tol)
        .map_err(|e| HarnessError::stage("guess", e))?;
    let regulator = tv_regulator(dynamics, &raw, &cfg.reg_weights.to_lqr(), tol)
        .map_err(|e| HarnessError::stage("guess projection regulator", e))?;
    let trajectory = project(dynamics, &raw, &regulator, x0, tol).map_err(|e| HarnessError::stage("guess projection", e))?;
    let metrics = metrics(dynamics, &trajectory, &cost).into();
    Ok(GuessRun { scenario, cost, trajectory, metrics, wall_clock: started.elapsed().as_secs_f64() })
}

pub fn run_guess(cfg: &ScenarioConfig) -> Result<GuessRun, HarnessError> {
    log::info!("guess: building scenario");
    let run = guess_for(cfg, build_scenario(cfg)?)?;
    log::info!("guess: cost {:.6}, final error {:.4} deg", run.metrics.maneuver_cost, run.metrics.final_att_error_deg);
    Ok(run)
}

/// Solve stage of [`run_solve`] starting from an existing guess run.
pub fn solve_from(cfg: &ScenarioConfig, guess: GuessRun) -> Result<SolveRun, HarnessError> {
    let started = Instant::now();
    let s = &guess.scenario;
    let solver = solve(&s.dynamics, &s.x0, &guess.cost, &guess.trajectory, &cfg.reg_weights.to_lqr(), &cfg.solver_config())
        .map_err(|e| HarnessError::stage("solve", e))?;
    let solve_s = started.elapsed().as_secs_f64();
    let metrics: MetricsRecord = metrics(&s.dynamics, &solver.trajectory, &guess.cost).into();
    let report = SolveReport::new(
        cfg,
        s.x0_hash(),
        guess.metrics,
        metrics,
        omega_peak(&s.dynamics, &solver.trajectory),
        &solver,
        Timing { guess_s: guess.wall_clock, solve_s },
    );
    Ok(SolveRun { guess, solver, metrics, report })
}

/// Guess, cost design, solve and metrics for the configured maneuver.
pub fn run_solve(cfg: &ScenarioConfig) -> Result<SolveRun, HarnessError> {
    let guess = run_guess(cfg)?;
    let run = solve_from(cfg, guess)?;
    log::info!(
        "solve: {} after {} iterations, cost {:.6} -> {:.6}",
        termination_name(run.solver.termination),
        run.solver.history.len(),
        run.solver.initial_cost,
        run.solver.final_cost()
    );
    Ok(run)
}

/// Largest `‖ω‖` over the nodes of `traj`.
pub fn omega_peak(dynamics: &cmg_core::dynamics::Dynamics, traj: &Trajectory) -> f64 {
    let rows = dynamics.layout().omega();
    traj.states().iter().map(|x| x.rows_range(rows.clone()).norm()).fold(0.0, f64::max)
}

fn meta(cfg: &ScenarioConfig, scenario: &Scenario, kind: &str) -> TrajectoryMeta {
    TrajectoryMeta {
        kind: kind.to_string(),
        m: scenario.dynamics.m(),
        scenario_hash: cfg.hash(),
        x0_hash: scenario.x0_hash(),
        scenario_json: cfg.to_json(),
    }
}

/// Writes `guess.csv` into `out_dir`.
pub fn write_guess(out_dir: &Path, cfg: &ScenarioConfig, run: &GuessRun) -> Result<PathBuf, HarnessError> {
    let path = out_dir.join(GUESS_FILE);
    write_trajectory(&path, &meta(cfg, &run.scenario, "guess"), &run.scenario.dynamics, &run.trajectory)?;
    Ok(path)
}

/// Writes `guess.csv`, `optimal.csv` and `report.json` into `out_dir`.
pub fn write_solve(out_dir: &Path, cfg: &ScenarioConfig, run: &SolveRun) -> Result<Vec<PathBuf>, HarnessError> {
    let guess = write_guess(out_dir, cfg, &run.guess)?;
    let optimal = out_dir.join(OPTIMAL_FILE);
    let s = &run.guess.scenario;
    write_trajectory(&optimal, &meta(cfg, s, "optimal"), &s.dynamics, &run.solver.trajectory)?;
    let report = out_dir.join(REPORT_FILE);
    write_bytes(&report, run.report.to_json().as_bytes())?;
    Ok(vec![guess, optimal, report])
}

/// Result of re-checking a stored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub path: String,
    pub kind: String,
    pub scenario_hash_ok: bool,
    /// Stored `x₀` hash matches both the first row and the rebuilt scenario.
    pub x0_hash_ok: bool,
    /// Largest per-interval re-integration residual.
    pub interval_residual: f64,
    /// Largest recomputed constraint residual, relative to `1 + ‖h₀‖`.
    pub constraint_residual: f64,
    /// Largest difference between stored and recomputed residual columns.
    pub stored_residual_mismatch: f64,
    pub metrics: MetricsRecord,
    /// Largest difference to the metrics in a given report, if any.
    pub report_metrics_diff: Option<f64>,
    pub passed: bool,
}

impl CheckReport {
    pub fn into_result(self) -> Result<Self, HarnessError> {
        if self.passed {
            Ok(self)
        } else {
            Err(HarnessError::Validation(serde_json::to_string(&self).expect("check report serializes")))
        }
    }
}

/// Re-integrates the trajectory in `path` interval by interval, recomputes
/// its constraint residuals and metrics, and compares them with the stored
/// data and, if given, the matching section of a solve report.
pub fn run_check(path: &Path, report: Option<&Path>) -> Result<CheckReport, HarnessError> {
    let file = read_trajectory(path)?;
    let cfg = ScenarioConfig::from_json(&file.meta.scenario_json)?;
    let scenario = build_scenario(&cfg)?;
    let traj = &file.trajectory;
    let dynamics = &scenario.dynamics;
    let tol = cfg.tolerances();
    let (cost, _) = design(dynamics, &scenario.x_d, &cfg.cost_weights.to_lqr(), &cfg.reg_weights.to_lqr())
        .map_err(|e| HarnessError::stage("cost design", e))?;

    let interval_residual =
        traj.reintegration_residual(dynamics, tol).map_err(|e| HarnessError::stage("re-integration", e))?;
    let residuals = constraint_residuals(dynamics, traj);
    let scale = 1.0 + dynamics.inertial_momentum(traj.initial_state()).norm();
    let constraint_residual = residuals.iter().flatten().fold(0.0f64, |a, r| a.max(r.abs())) / scale;
    let stored_residual_mismatch = residuals
        .iter()
        .zip(&file.residuals)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    let metrics: MetricsRecord = metrics(dynamics, traj, &cost).into();

    let report_metrics_diff = match report {
        None => None,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
            let doc: SolveReport = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?;
            let stored = match file.meta.kind.as_str() {
                "guess" => doc.guess,
                _ => doc.optimal,
            };
            Some(metrics.max_abs_diff(&stored))
        }
    };

    let scenario_hash_ok = cfg.hash() == file.meta.scenario_hash;
    let first = state_hash(traj.initial_state());
    let x0_hash_ok = first == file.meta.x0_hash && first == scenario.x0_hash();
    let passed = scenario_hash_ok
        && x0_hash_ok
        && interval_residual <= INTERVAL_RESIDUAL_TOL
        && constraint_residual <= CONSTRAINT_TOL
        && stored_residual_mismatch <= 1e-12
        && report_metrics_diff.is_none_or(|d| d <= 1e-9);
    Ok(CheckReport {
        path: path.display().to_string(),
        kind: file.meta.kind,
        scenario_hash_ok,
        x0_hash_ok,
        interval_residual,
        constraint_residual,
        stored_residual_mismatch,
        metrics,
        report_metrics_diff,
        passed,
    })
}

/// Uniformly distributed unit quaternion: four standard normals, normalized.
pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(q) = UnitQuaternion::new_normalize(Quaternion::from_components(v[0], v[1], v[2], v[3])) {
            return q;
        }
    }
}

fn components(q: &UnitQuaternion) -> [f64; 4] {
    let v = q.quaternion().to_vector();
    [v[0], v[1], v[2], v[3]]
}

/// `count` random rest-to-rest maneuvers drawn from `seed`:
/// `(q0, qd, config_seed)`.
pub fn draw_maneuvers(seed: u64, count: usize) -> Vec<(UnitQuaternion, UnitQuaternion, u64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q0 = random_unit_quaternion(&mut rng);
            let qd = random_unit_quaternion(&mut rng);
            (q0, qd, rng.next_u64())
        })
        .collect()
}

fn batch_row(cfg: &ScenarioConfig, kind: GeometryKind, index: usize, draw: &(UnitQuaternion, UnitQuaternion, u64)) -> ManeuverRow {
    let (q0, qd, config_seed) = draw;
    let mut row = ManeuverRow {
        geometry: kind,
        index,
        q0: components(q0),
        qd: components(qd),
        config_seed: *config_seed,
        x0_hash: None,
        guess: None,
        optimal: None,
        iterations: None,
        termination: None,
        error: None,
    };
    let scenario = match build_scenario_with(cfg, kind, *q0, *qd, *config_seed) {
        Ok(s) => s,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.x0_hash = Some(scenario.x0_hash());
    let guess = match guess_for(cfg, scenario) {
        Ok(g) => g,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.guess = Some(guess.metrics);
    match solve_from(cfg, guess) {
        Ok(run) => {
            row.iterations = Some(run.solver.history.len());
            row.termination = Some(termination_name(run.solver.termination).to_string());
            row.error = run.solver.failure.as_ref().map(|e| e.to_string());
            row.optimal = Some(run.metrics);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    log::info!("batch: {kind:?} #{index} done");
    row
}

/// Solves `count` random maneuvers on every geometry in
/// `cfg.batch.geometries`, in parallel. Failures are recorded per maneuver.
pub fn run_batch(cfg: &ScenarioConfig, count: usize) -> Result<BatchReport, HarnessError> {
    if count == 0 {
        return Err(HarnessError::Config("batch count must be at least 1".into()));
    }
    let draws = draw_maneuvers(cfg.seed, count);
    let jobs: Vec<(GeometryKind, usize)> =
        cfg.batch.geometries.iter().flat_map(|&g| (0..count).map(move |i| (g, i))).collect();
    let rows: Vec<ManeuverRow> = jobs.par_iter().map(|&(g, i)| batch_row(cfg, g, i, &draws[i])).collect();
    Ok(BatchReport::new(cfg, count, rows))
}

/// Writes `batch.json` into `out_dir`.
pub fn write_batch(out_dir: &Path, report: &BatchReport) -> Result<PathBuf, HarnessError> {
    let path = out_dir.join(BATCH_FILE);
    write_bytes(&path, report.to_json().as_bytes())?;
    Ok(path)
}
