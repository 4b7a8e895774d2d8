//! Trajectory files and plot data.
//!
//! A trajectory file is CSV preceded by `#` metadata lines:
//!
//! ```text
//! # cmg-trajectory 1
//! # kind = optimal
//! # m = 4
//! # scenario_hash = 3f1c…
//! # x0_hash = 9a07…
//! # units = t:s q:- h_swr:N·m·s omega:rad/s delta:rad h_ga:N·m·s u_g:N·m u_w:N·m c_q:- c_h:N·m·s
//! # scenario = {"seed":0,…}
//! t,q0,q1,q2,q3,h_swr1,…
//! ```
//!
//! Values are written in shortest round-trip form, so reading a file back
//! reproduces the samples exactly. The last four columns are the constraint
//! residuals `‖q‖ − 1` and `C(q)h̄ − h₀`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cmg_core::dynamics::{Dynamics, Layout};
use cmg_core::opt::Trajectory;
use nalgebra::DVector;

use crate::HarnessError;

pub const FORMAT_TAG: &str = "cmg-trajectory 1";
const UNITS: &str = "t:s q:- h_swr:N·m·s omega:rad/s delta:rad h_ga:N·m·s u_g:N·m u_w:N·m c_q:- c_h:N·m·s";

/// Metadata carried in the header of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    /// `guess` or `optimal`.
    pub kind: String,
    pub m: usize,
    pub scenario_hash: String,
    pub x0_hash: String,
    /// Resolved scenario as one line of JSON.
    pub scenario_json: String,
}

#[derive(Debug, Clone)]
pub struct TrajectoryFile {
    pub meta: TrajectoryMeta,
    pub trajectory: Trajectory,
    /// Constraint residual columns as stored.
    pub residuals: Vec<[f64; 4]>,
}

pub fn column_names(m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..4).map(|i| format!("q{i}")));
    cols.extend((1..=m).map(|i| format!("h_swr{i}")));
    cols.extend(["omega_x", "omega_y", "omega_z"].map(String::from));
    cols.extend((1..=m).map(|i| format!("delta{i}")));
    cols.extend((1..=m).map(|i| format!("h_ga{i}")));
    cols.extend((1..=m).map(|i| format!("u_g{i}")));
    cols.extend((1..=m).map(|i| format!("u_w{i}")));
    cols.extend(["c_q", "c_hx", "c_hy", "c_hz"].map(String::from));
    cols
}

/// `‖q‖ − 1` and `C(q)h̄ − h₀` at every node.
pub fn constraint_residuals(dynamics: &Dynamics, traj: &Trajectory) -> Vec<[f64; 4]> {
    let h0 = dynamics.inertial_momentum(traj.initial_state());
    traj.states()
        .iter()
        .map(|x| {
            let (c_q, c_h) = dynamics.constraints(x, &h0);
            [c_q, c_h[0], c_h[1], c_h[2]]
        })
        .collect()
}

pub fn write_trajectory(
    path: &Path,
    meta: &TrajectoryMeta,
    dynamics: &Dynamics,
    traj: &Trajectory,
) -> Result<(), HarnessError> {
    let residuals = constraint_residuals(dynamics, traj);
    let mut header = String::new();
    writeln!(header, "# {FORMAT_TAG}").unwrap();
    writeln!(header, "# kind = {}", meta.kind).unwrap();
    writeln!(header, "# m = {}", meta.m).unwrap();
    writeln!(header, "# scenario_hash = {}", meta.scenario_hash).unwrap();
    writeln!(header, "# x0_hash = {}", meta.x0_hash).unwrap();
    writeln!(header, "# units = {UNITS}").unwrap();
    writeln!(header, "# scenario = {}", meta.scenario_json).unwrap();

    let mut writer = csv::Writer::from_writer(header.into_bytes());
    writer.write_record(column_names(meta.m)).map_err(csv_error)?;
    for (k, &t) in traj.times().iter().enumerate() {
        let row = std::iter::once(t)
            .chain(traj.states()[k].iter().copied())
            .chain(traj.controls()[k].iter().copied())
            .chain(residuals[k].iter().copied())
            .map(format_value);
        writer.write_record(row).map_err(csv_error)?;
    }
    let bytes = writer.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    write_bytes(path, &bytes)
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.to_string())
}

fn invalid(path: &Path, why: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(format!("{}: {why}", path.display()))
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut fields = std::collections::HashMap::new();
    let mut tagged = false;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line[1..].trim();
        if body == FORMAT_TAG {
            tagged = true;
        } else if let Some((k, v)) = body.split_once(" = ") {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    if !tagged {
        return Err(invalid(path, format!("missing `{FORMAT_TAG}` header")));
    }
    let field = |k: &str| fields.get(k).cloned().ok_or_else(|| invalid(path, format!("missing header field `{k}`")));
    let m: usize = field("m")?.parse().map_err(|e| invalid(path, format!("bad m: {e}")))?;
    let meta = TrajectoryMeta {
        kind: field("kind")?,
        m,
        scenario_hash: field("scenario_hash")?,
        x0_hash: field("x0_hash")?,
        scenario_json: field("scenario")?,
    };

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let expected = column_names(m);
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header != expected {
        return Err(invalid(path, format!("expected {} columns {:?}…", expected.len(), &expected[..3])));
    }
    let layout = Layout::new(m);
    let (n, nu) = (layout.state_dim(), layout.control_dim());
    let (mut times, mut states, mut controls, mut residuals) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if record.len() != expected.len() {
            return Err(invalid(path, format!("row {row} has {} columns, expected {}", record.len(), expected.len())));
        }
        let values = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(path, format!("row {row}: {e}")))?;
        times.push(values[0]);
        states.push(DVector::from_column_slice(&values[1..1 + n]));
        controls.push(DVector::from_column_slice(&values[1 + n..1 + n + nu]));
        residuals.push([values[1 + n + nu], values[2 + n + nu], values[3 + n + nu], values[4 + n + nu]]);
    }
    let trajectory = Trajectory::from_samples(times, states, controls).map_err(|e| invalid(path, e))?;
    Ok(TrajectoryFile { meta, trajectory, residuals })
}

/// One whitespace-separated series file per panel (`q`, `omega`, `delta`,
/// `h_swr`, `u_g`, `u_w`) in `dir`, each with a `#` column header. Returns
/// the written paths.
pub fn emit_plotdata(dir: &Path, m: usize, traj: &Trajectory) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    let l = Layout::new(m);
    let names = |prefix: &str| (1..=m).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
    // (file, columns, rows of the state (false) or control (true) vector)
    let panels = [
        ("q", (0..4).map(|i| format!("q{i}")).collect(), false, l.q()),
        ("omega", ["omega_x", "omega_y", "omega_z"].map(String::from).to_vec(), false, l.omega()),
        ("delta", names("delta"), false, l.delta()),
        ("h_swr", names("h_swr"), false, l.h_swr()),
        ("u_g", names("u_g"), true, l.u_g()),
        ("u_w", names("u_w"), true, l.u_w()),
    ];
    let mut written = Vec::new();
    for (name, cols, control, rows) in panels {
        let mut out = format!("# t {}\n", cols.join(" "));
        for (k, t) in traj.times().iter().enumerate() {
            out.push_str(&format_value(*t));
            let source = if control { &traj.controls()[k] } else { &traj.states()[k] };
            for v in source.rows_range(rows.clone()).iter() {
                out.push(' ');
                out.push_str(&format_value(*v));
            }
            out.push('\n');
        }
        let path = dir.join(format!("{name}.dat"));
        write_bytes(&path, out.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a plot-data file back as (column names, rows).
pub fn read_plotdata(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix('#'))
        .ok_or_else(|| invalid(path, "missing column header"))?;
    let cols: Vec<String> = header.split_whitespace().map(String::from).collect();
    let rows = lines
        .map(|l| l.split_whitespace().map(|v| v.parse::<f64>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(path, e))?;
    Ok((cols, rows))
}
