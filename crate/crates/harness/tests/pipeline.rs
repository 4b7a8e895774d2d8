use std::fs;
use std::sync::OnceLock;

use cmg_harness::files::{column_names, emit_plotdata, read_plotdata, read_trajectory};
use cmg_harness::pipeline::{
    draw_maneuvers, run_batch, run_check, run_guess, run_solve, write_batch, write_guess, write_solve, SolveRun,
    GUESS_FILE, OPTIMAL_FILE, REPORT_FILE,
};
use cmg_harness::{parse_config, ScenarioConfig};
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 2
horizon = 20.0
dt = 0.1

[maneuver]
axis = [1.0, 0.0, 0.0]
angle_deg = 10.0

[solver]
max_iters = 3
"#;

fn small() -> ScenarioConfig {
    parse_config(SMALL).unwrap()
}

/// One small solve written to disk, shared by the tests below.
fn solved() -> &'static (TempDir, ScenarioConfig, SolveRun) {
    static CELL: OnceLock<(TempDir, ScenarioConfig, SolveRun)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = small();
        let run = run_solve(&cfg).unwrap();
        write_solve(dir.path(), &cfg, &run).unwrap();
        (dir, cfg, run)
    })
}

#[test]
fn trajectory_files_round_trip_exactly() {
    let (dir, _, run) = solved();
    let file = read_trajectory(&dir.path().join(OPTIMAL_FILE)).unwrap();
    assert_eq!(file.meta.kind, "optimal");
    assert_eq!(file.meta.m, 4);
    assert_eq!(file.trajectory.times(), run.solver.trajectory.times());
    assert_eq!(file.trajectory.states(), run.solver.trajectory.states());
    assert_eq!(file.trajectory.controls(), run.solver.trajectory.controls());

    let m = 4;
    assert_eq!(column_names(m).len(), 3 * m + 7 + 2 * m + 4 + 1);
    let text = fs::read_to_string(dir.path().join(OPTIMAL_FILE)).unwrap();
    let data_lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data_lines[0].split(',').count(), column_names(m).len());
    assert!(data_lines[1..].iter().all(|l| l.split(',').count() == column_names(m).len()));
}

#[test]
fn solve_outputs_pass_the_checker() {
    let (dir, _, run) = solved();
    let report = dir.path().join(REPORT_FILE);
    for (name, with_report) in [(GUESS_FILE, None), (OPTIMAL_FILE, Some(report.as_path()))] {
        let check = run_check(&dir.path().join(name), with_report).unwrap();
        assert!(check.passed, "{name}: {check:?}");
        assert!(check.scenario_hash_ok && check.x0_hash_ok);
        assert!(check.interval_residual <= 1e-7 && check.constraint_residual <= 1e-6);
        if with_report.is_some() {
            assert!(check.report_metrics_diff.unwrap() <= 1e-9);
        }
    }
    let history: Vec<f64> = run.report.history.iter().map(|r| r.cost).collect();
    assert!(history.windows(2).all(|w| w[1] <= w[0]));
    assert!(run.report.acceptance.monotone_cost);
}

#[test]
fn guess_and_solve_share_the_initial_state() {
    let (dir, cfg, _) = solved();
    let other = TempDir::new().unwrap();
    let guess = run_guess(cfg).unwrap();
    write_guess(other.path(), cfg, &guess).unwrap();
    let a = read_trajectory(&other.path().join(GUESS_FILE)).unwrap();
    let b = read_trajectory(&dir.path().join(OPTIMAL_FILE)).unwrap();
    assert_eq!(a.meta.x0_hash, b.meta.x0_hash);
    assert_eq!(a.meta.scenario_hash, b.meta.scenario_hash);
    // a rerun reproduces the guess file byte for byte
    assert_eq!(fs::read(other.path().join(GUESS_FILE)).unwrap(), fs::read(dir.path().join(GUESS_FILE)).unwrap());
}

#[test]
fn corrupted_files_fail_the_check() {
    let (dir, _, _) = solved();
    let text = fs::read_to_string(dir.path().join(OPTIMAL_FILE)).unwrap();
    let bad = TempDir::new().unwrap();

    // nudge one state value in the middle of the file
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let k = lines.len() / 2;
    let mut cells: Vec<String> = lines[k].split(',').map(String::from).collect();
    let v: f64 = cells[5].parse().unwrap();
    cells[5] = (v + 1e-3).to_string();
    lines[k] = cells.join(",");
    let path = bad.path().join("nudged.csv");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let check = run_check(&path, None).unwrap();
    assert!(!check.passed);
    assert!(check.clone().into_result().is_err());

    let truncated = bad.path().join("truncated.csv");
    fs::write(&truncated, &text[..text.len() / 3]).unwrap();
    assert!(read_trajectory(&truncated).is_err());
}

#[test]
fn plot_panels_match_their_headers_and_the_report() {
    let (dir, _, run) = solved();
    let file = read_trajectory(&dir.path().join(OPTIMAL_FILE)).unwrap();
    let plots = dir.path().join("plot");
    let paths = emit_plotdata(&plots, file.meta.m, &file.trajectory).unwrap();
    assert_eq!(paths.len(), 6);
    for p in &paths {
        let (cols, rows) = read_plotdata(p).unwrap();
        assert_eq!(cols[0], "t");
        assert_eq!(rows.len(), file.trajectory.len());
        assert!(rows.iter().all(|r| r.len() == cols.len()));
    }
    let (cols, rows) = read_plotdata(&plots.join("omega.dat")).unwrap();
    assert_eq!(cols.len(), 4);
    let peak = rows.iter().map(|r| (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt()).fold(0.0, f64::max);
    assert_eq!(peak, run.report.omega_peak);
}

#[test]
fn random_maneuvers_are_reproducible_unit_quaternions() {
    let a = draw_maneuvers(11, 5);
    let b = draw_maneuvers(11, 5);
    assert_eq!(a.len(), 5);
    for ((q0, qd, s), (p0, pd, t)) in a.iter().zip(&b) {
        assert_eq!((q0, qd, s), (p0, pd, t));
        assert!((q0.quaternion().norm() - 1.0).abs() <= 1e-15);
    }
    assert_ne!(draw_maneuvers(12, 1)[0].0, a[0].0);
}

#[test]
fn batch_reports_are_byte_identical() {
    let mut cfg = small();
    cfg.solver.max_iters = 1;
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = write_batch(a.path(), &run_batch(&cfg, 2).unwrap()).unwrap();
    let second = write_batch(b.path(), &run_batch(&cfg, 2).unwrap()).unwrap();
    let (x, y) = (fs::read(first).unwrap(), fs::read(second).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
    assert!(run_batch(&cfg, 0).is_err());
}
