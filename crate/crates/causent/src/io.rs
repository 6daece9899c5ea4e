//! File formats shared by the library and the CLI: trajectory CSV with role
//! sidecars, model JSON, wide matrix CSV for causation/coefficient tables,
//! two-column plot data, and run manifests.
//!
//! Floating-point values are printed with 17 significant digits, which is
//! enough for `f64` to survive a write/read cycle bit for bit. Every writer
//! here is deterministic: identical inputs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causality::CausationMatrix;
use crate::dynamics::{ColumnRole, CoefficientModel, StateLayout, Term, TermLibrary, TrajectorySet};
use crate::error::{Error, Result};
use crate::estimation::{EstimationResult, RegressionProblem};
use crate::learning::LearnTrace;

/// Renders a float with 17 significant digits so that parsing the text
/// recovers the original bits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, op: &str, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{op} {}: {e}", path.display()),
    ))
}

fn format_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {what}", path.display()))
}

/// Sidecar describing a trajectory CSV: step size, column roles, and a
/// checksum of the payload for integrity checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    /// Step size of the uniform time grid.
    pub dt: f64,
    /// Column names in file order (the leading `t` column is implicit).
    pub names: Vec<String>,
    /// Role of each column, aligned with `names`.
    pub roles: Vec<ColumnRole>,
    /// FNV-1a checksum of the trajectory values, as produced by
    /// [`TrajectorySet::checksum`].
    pub checksum: u64,
}

/// Path of the role sidecar that accompanies a trajectory CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    csv_path.with_file_name(name)
}

/// Writes a trajectory as CSV (`t` first, then one column per variable) plus
/// a role sidecar next to it.
pub fn write_trajectory(path: &Path, traj: &TrajectorySet) -> Result<()> {
    let mut out = String::with_capacity(traj.n_steps() * traj.n_cols() * 25);
    out.push('t');
    for name in traj.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for step in 0..traj.n_steps() {
        out.push_str(&format_float(traj.time(step)));
        for c in 0..traj.n_cols() {
            out.push(',');
            out.push_str(&format_float(traj.value(step, c)));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))?;

    let manifest = TrajectoryManifest {
        dt: traj.dt(),
        names: traj.names().to_vec(),
        roles: traj.roles().to_vec(),
        checksum: traj.checksum(),
    };
    write_json(&sidecar_path(path), &manifest)
}

/// Reads a trajectory CSV written by [`write_trajectory`].
///
/// When the role sidecar is present it supplies `dt`, the roles, and an
/// integrity checksum; without it the step size is inferred from the time
/// column and every column is treated as observed.
pub fn read_trajectory(path: &Path) -> Result<TrajectorySet> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "empty trajectory file"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("t") {
        return Err(format_err(path, "trajectory header must start with 't'"));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    if names.is_empty() {
        return Err(format_err(path, "trajectory has no state columns"));
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: f64 = parse_field(path, k, fields.next())?;
        times.push(t);
        let mut got = 0usize;
        for f in fields {
            values.push(parse_field(path, k, Some(f))?);
            got += 1;
        }
        if got != names.len() {
            return Err(format_err(
                path,
                format!(
                    "line {} has {} state fields, expected {}",
                    k + 2,
                    got,
                    names.len()
                ),
            ));
        }
    }
    if times.len() < 2 {
        return Err(format_err(path, "trajectory needs at least two steps"));
    }

    let sidecar = sidecar_path(path);
    let (dt, roles) = if sidecar.exists() {
        let manifest: TrajectoryManifest = read_json(&sidecar)?;
        if manifest.names != names {
            return Err(format_err(
                &sidecar,
                "sidecar column names do not match the CSV header",
            ));
        }
        (manifest.dt, manifest.roles)
    } else {
        (times[1] - times[0], vec![ColumnRole::Observed; names.len()])
    };

    let traj = TrajectorySet::new(names, roles, dt, values)?;
    if sidecar.exists() {
        let manifest: TrajectoryManifest = read_json(&sidecar)?;
        if manifest.checksum != traj.checksum() {
            return Err(format_err(
                path,
                "checksum mismatch against sidecar (corrupted or edited file)",
            ));
        }
    }
    Ok(traj)
}

fn parse_field(path: &Path, line: usize, field: Option<&str>) -> Result<f64> {
    let s = field.ok_or_else(|| {
        format_err(path, format!("line {} truncated", line + 2))
    })?;
    s.trim().parse::<f64>().map_err(|_| {
        format_err(
            path,
            format!("line {}: unparseable number '{s}'", line + 2),
        )
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    layout: StateLayout,
    /// Per equation row: retained terms as label/coefficient pairs.
    terms: Vec<Vec<TermEntry>>,
    noise: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TermEntry {
    label: String,
    coef: f64,
}

/// Writes a model as JSON with fields `layout`, `terms` (per row: label and
/// coefficient), and `noise`.
pub fn write_model(path: &Path, model: &CoefficientModel) -> Result<()> {
    let lib = model.library();
    let terms = (0..lib.rows().len())
        .map(|n| {
            model
                .entries(n)
                .iter()
                .map(|&(m, v)| TermEntry {
                    label: lib.term(n, m).label().to_string(),
                    coef: v,
                })
                .collect()
        })
        .collect();
    let file = ModelFile {
        layout: lib.layout().clone(),
        terms,
        noise: model.noise().to_vec(),
    };
    write_json(path, &file)
}

/// Reads a model written by [`write_model`].
///
/// The returned model is built over a minimal library holding exactly the
/// stored terms. That is sufficient for simulation, comparison, and use as
/// an initial guess; learning runs take their candidate library separately.
pub fn read_model(path: &Path) -> Result<CoefficientModel> {
    let file: ModelFile = read_json(path)?;
    if file.terms.len() != file.layout.len() {
        return Err(format_err(
            path,
            format!(
                "{} term rows for {} state variables",
                file.terms.len(),
                file.layout.len()
            ),
        ));
    }
    let mut rows = Vec::with_capacity(file.terms.len());
    let mut coefs: Vec<Vec<(&str, f64)>> = Vec::with_capacity(file.terms.len());
    for (n, row) in file.terms.iter().enumerate() {
        let mut terms = Vec::with_capacity(row.len());
        let mut cs = Vec::with_capacity(row.len());
        for e in row {
            terms.push(Term::parse(&file.layout, n, &e.label)?);
            cs.push((e.label.as_str(), e.coef));
        }
        rows.push(terms);
        coefs.push(cs);
    }
    let library = TermLibrary::new(file.layout.clone(), rows)?;
    CoefficientModel::from_labels(library, &coefs, file.noise)
}

/// Writes a causation-entropy matrix as wide CSV: one line per equation row,
/// one column per term label (the union across the selected rows), empty
/// cells where a row's library lacks the term. `rows` selects and orders the
/// equation rows; pass all indices for the whole matrix, or one family's
/// rows to keep ring-layout columns aligned.
pub fn write_causation_csv(
    path: &Path,
    matrix: &CausationMatrix,
    library: &TermLibrary,
    rows: &[usize],
) -> Result<()> {
    let values = matrix.values();
    write_wide_csv(path, library, rows, |n, m| {
        values.get(n).and_then(|r| r.get(m)).copied()
    })
}

/// Writes model coefficients as wide CSV in the same shape as
/// [`write_causation_csv`], with empty cells for terms not retained.
pub fn write_coefficient_csv(path: &Path, model: &CoefficientModel, rows: &[usize]) -> Result<()> {
    write_wide_csv(path, model.library(), rows, |n, m| model.coef(n, m))
}

fn write_wide_csv<F>(path: &Path, library: &TermLibrary, rows: &[usize], value: F) -> Result<()>
where
    F: Fn(usize, usize) -> Option<f64>,
{
    // Union of term labels across the selected rows, in first-appearance
    // order.
    let mut labels: Vec<String> = Vec::new();
    for &n in rows {
        for t in library.row(n) {
            if !labels.iter().any(|l| l == t.label()) {
                labels.push(t.label().to_string());
            }
        }
    }
    let mut out = String::from("row");
    for l in &labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for &n in rows {
        out.push_str(library.layout().name(n));
        for l in &labels {
            out.push(',');
            if let Some(v) = library.find(n, l).and_then(|m| value(n, m)) {
                out.push_str(&format_float(v));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

/// Writes the per-iteration learning summary CSV.
pub fn write_trace_csv(path: &Path, trace: &LearnTrace) -> Result<()> {
    fs::write(path, trace.csv()).map_err(|e| io_err(path, "writing", e))
}

/// Writes a two-column plot-data CSV (`abscissa,value` pairs under named
/// headers).
pub fn write_curve_csv(
    path: &Path,
    x_name: &str,
    y_name: &str,
    points: impl IntoIterator<Item = (f64, f64)>,
) -> Result<()> {
    let mut out = format!("{x_name},{y_name}\n");
    for (x, y) in points {
        out.push_str(&format_float(x));
        out.push(',');
        out.push_str(&format_float(y));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, "writing", e))
}

#[derive(Debug, Serialize)]
struct EstimationFile<'a> {
    /// Free coefficients keyed as `row:label`.
    coefficients: Vec<(String, f64)>,
    noise: &'a [f64],
    multipliers: &'a [f64],
    objective: f64,
    gram_condition: f64,
    constraint_residual: f64,
}

/// Writes an estimation result as JSON with labeled coefficients, noise
/// amplitudes, constraint multipliers, and solver diagnostics.
pub fn write_estimation_json(
    path: &Path,
    problem: &RegressionProblem,
    result: &EstimationResult,
) -> Result<()> {
    let coefficients = result
        .theta
        .iter()
        .enumerate()
        .map(|(p, &v)| (problem.param_label(p), v))
        .collect();
    let file = EstimationFile {
        coefficients,
        noise: &result.sigma,
        multipliers: &result.lambda,
        objective: result.objective,
        gram_condition: result.gram_condition,
        constraint_residual: result.constraint_residual,
    };
    write_json(path, &file)
}

/// Reproducibility record written next to every CLI run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that produced the outputs.
    pub command: String,
    /// FNV-1a hash of the configuration file bytes.
    pub config_hash: u64,
    /// Seed actually used (after any command-line override).
    pub seed: u64,
    /// Crate version that produced the run.
    pub version: String,
    /// Output files written by the run, relative to the manifest.
    pub outputs: Vec<String>,
}

/// Writes the run manifest as `manifest.json` inside `dir`.
pub fn write_run_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&dir.join("manifest.json"), manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| format_err(path, format!("serializing: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, "writing", e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, "reading", e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}
