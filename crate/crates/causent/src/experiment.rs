//! File-driven experiment runs behind the CLI: the TOML configuration
//! schema, the benchmark presets, and the four operations `simulate`,
//! `learn`, `compare`, and `stats`.
//!
//! Every operation writes its artifacts into one output directory together
//! with a manifest (configuration hash, effective seeds, crate version) so a
//! run can be reproduced byte for byte from the manifest and the
//! configuration file alone.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::causality::IndicatorMatrix;
use crate::dynamics::{
    self, simulate, CoefficientModel, SimOptions, StateLayout, TermLibrary, TrajectorySet,
};
use crate::error::{Error, Result};
use crate::io;
use crate::learning::{self, EvalOptions, LearnConfig};
use crate::stats;

/// One experiment, as declared in a TOML file.
///
/// `horizon`, `dt`, and `seed` govern data generation; the optional
/// sections refine the candidate library, the learning loop, and the
/// model-comparison statistics. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark preset: `lorenz84`, `lorenz96-regime1`, `lorenz96-regime2`,
    /// or `fhn`.
    pub preset: String,
    /// Recorded data span in time units.
    pub horizon: f64,
    /// Recorded sampling interval of the data.
    pub dt: f64,
    /// Data-generation seed.
    pub seed: u64,
    /// Time units integrated and discarded before recording starts.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Integration substeps per recorded point; defaults to the preset's
    /// value (the excitable lattice is stiff and integrates on a finer grid
    /// than it records).
    #[serde(default)]
    pub substeps: Option<usize>,
    /// Path to a model JSON used as the starting model instead of the
    /// preset's catalog guess.
    #[serde(default)]
    pub initial_guess: Option<PathBuf>,
    /// Path to an observed trajectory CSV; when set, `learn` reads it
    /// instead of simulating fresh data.
    #[serde(default)]
    pub observed_data: Option<PathBuf>,
    /// Candidate-library overrides (ring presets only).
    #[serde(default)]
    pub library: Option<LibrarySection>,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_burn_in() -> f64 {
    10.0
}

/// Candidate-library generation knobs for the ring presets.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySection {
    /// Locality radius of the candidate terms around each site.
    #[serde(default = "default_stencil_radius")]
    pub stencil_radius: usize,
    /// Highest monomial degree; degrees above two contribute pure powers
    /// only. Defaults to the preset's value.
    #[serde(default)]
    pub max_degree: Option<u32>,
    /// Include the hidden closure terms in the observed equations.
    #[serde(default = "default_true")]
    pub hidden_feedback: bool,
}

fn default_stencil_radius() -> usize {
    2
}

fn default_true() -> bool {
    true
}

/// Learning-loop settings; every field defaults to the library's defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    pub threshold: f64,
    pub hidden_threshold: Option<f64>,
    pub max_iterations: usize,
    pub structure_patience: usize,
    pub param_tol: f64,
    pub seed: u64,
    pub burn_in_fraction: f64,
    /// Fixed hidden-equation noise amplitudes; empty means take them from
    /// the starting model.
    pub hidden_noise: Vec<f64>,
}

impl Default for LearnSection {
    fn default() -> Self {
        let c = LearnConfig::default();
        LearnSection {
            threshold: c.threshold,
            hidden_threshold: c.hidden_threshold,
            max_iterations: c.max_iterations,
            structure_patience: c.structure_patience,
            param_tol: c.param_tol,
            seed: c.seed,
            burn_in_fraction: c.burn_in_fraction,
            hidden_noise: c.hidden_noise,
        }
    }
}

/// Long-run comparison settings for `compare` and the learn-stage plot data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Simulated span per model.
    pub horizon: f64,
    /// Discarded lead-in per simulation.
    pub burn_in: f64,
    /// Simulation seed shared by both models.
    pub seed: u64,
    /// Histogram bins for density distances.
    pub bins: usize,
    /// Autocorrelation window in time units.
    pub max_lag_units: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        let e = EvalOptions::default();
        CompareSection {
            horizon: e.horizon,
            burn_in: e.burn_in,
            seed: e.seed,
            bins: e.bins,
            max_lag_units: e.max_lag_units,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; overridden by the command line when given there.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Command-line overrides applied on top of a loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    /// Applies command-line overrides in place.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threshold {
            self.learn.threshold = t;
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::Config("burn_in must be nonnegative".into()));
        }
        if self.substeps == Some(0) {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a preset contributes: the data-generating model, the learning
/// layout with its candidate library and starting model, the structural
/// reference, and the mapping from generator variables to the learning
/// variables.
struct Preset {
    /// Model that generates the data (full layout; may be larger than the
    /// learning layout).
    truth: CoefficientModel,
    /// Candidate library on the learning layout.
    library: TermLibrary,
    /// Default starting model.
    guess: CoefficientModel,
    /// Reference model on the learning layout for structure scoring and
    /// comparison.
    reference: CoefficientModel,
    /// Observed column names, shared between generator and learning layouts.
    observed: Vec<String>,
    /// Hidden learning variable -> generator columns summed to produce its
    /// withheld truth.
    withheld: Vec<(String, Vec<String>)>,
    /// Default integration substeps per recorded point.
    substeps: usize,
}

fn build_preset(cfg: &ExperimentConfig) -> Result<Preset> {
    let lib_over = cfg.library.as_ref();
    let custom = |default_degree: u32| -> (usize, u32, bool) {
        match lib_over {
            Some(l) => (
                l.stencil_radius,
                l.max_degree.unwrap_or(default_degree),
                l.hidden_feedback,
            ),
            None => (2, default_degree, true),
        }
    };
    let is_default = |radius: usize, degree: u32, default_degree: u32, feedback: bool| {
        radius == 2 && degree == default_degree && feedback
    };

    match cfg.preset.as_str() {
        "lorenz84" => {
            if lib_over.is_some() {
                return Err(Error::Config(
                    "the lorenz84 candidate library is fixed; remove the [library] section".into(),
                ));
            }
            let truth = dynamics::lorenz84_truth()?;
            Ok(Preset {
                library: truth.library().clone(),
                guess: dynamics::lorenz84_guess()?,
                reference: truth.clone(),
                observed: vec!["y".into(), "z".into()],
                withheld: vec![("x".into(), vec!["x".into()])],
                substeps: 1,
                truth,
            })
        }
        "lorenz96-regime1" | "lorenz96-regime2" => {
            let regime = if cfg.preset.ends_with('1') {
                dynamics::Lorenz96Regime::I
            } else {
                dynamics::Lorenz96Regime::II
            };
            let (radius, degree, feedback) = custom(2);
            let library = if is_default(radius, degree, 2, feedback) {
                dynamics::lorenz96_library()?
            } else {
                dynamics::lorenz96_library_custom(radius, degree, feedback)?
            };
            let truth = dynamics::lorenz96_truth(regime)?;
            let sites = library.layout().sites().expect("ring layout");
            let per_site = 4;
            let withheld = (1..=sites)
                .map(|i| {
                    (
                        format!("w{i}"),
                        (1..=per_site).map(|j| format!("v{i}_{j}")).collect(),
                    )
                })
                .collect();
            Ok(Preset {
                truth,
                guess: dynamics::lorenz96_guess(regime)?,
                reference: dynamics::lorenz96_reduced_truth(regime)?,
                observed: (1..=sites).map(|i| format!("u{i}")).collect(),
                withheld,
                substeps: 1,
                library,
            })
        }
        "fhn" => {
            let (radius, degree, feedback) = custom(3);
            let library = if is_default(radius, degree, 3, feedback) {
                dynamics::fhn_library()?
            } else {
                dynamics::fhn_library_custom(radius, degree, feedback)?
            };
            let truth = dynamics::fhn_truth()?;
            let sites = library.layout().sites().expect("ring layout");
            Ok(Preset {
                truth,
                guess: dynamics::fhn_guess()?,
                reference: dynamics::fhn_truth()?,
                observed: (1..=sites).map(|i| format!("u{i}")).collect(),
                withheld: (1..=sites)
                    .map(|i| (format!("v{i}"), vec![format!("v{i}")]))
                    .collect(),
                substeps: 40,
                library,
            })
        }
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (expected lorenz84, lorenz96-regime1, lorenz96-regime2, or fhn)"
        ))),
    }
}

/// Initial state for an experiment simulation: a small Gaussian scatter
/// around the origin, deterministic in the seed. The burn-in absorbs the
/// transient before recording starts.
fn draw_initial(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

fn sim_options(cfg: &ExperimentConfig, preset: &Preset, seed: u64, horizon: f64) -> SimOptions {
    let substeps = cfg.substeps.unwrap_or(preset.substeps);
    SimOptions {
        horizon,
        dt: cfg.dt / substeps as f64,
        record_every: substeps,
        burn_in: cfg.burn_in,
        seed,
        initial: draw_initial(preset.truth.layout().len(), seed),
    }
}

/// Truth data split for one run: the full generator output, the observed
/// columns, and the withheld hidden truth (aggregated where the learning
/// variable sums generator variables).
struct GeneratedData {
    full: TrajectorySet,
    observed: TrajectorySet,
    withheld: TrajectorySet,
}

fn generate_data(cfg: &ExperimentConfig, preset: &Preset) -> Result<GeneratedData> {
    let opts = sim_options(cfg, preset, cfg.seed, cfg.horizon);
    let full = simulate(&preset.truth, &opts)?;
    let observed_names: Vec<&str> = preset.observed.iter().map(String::as_str).collect();
    let observed = full.select(&observed_names)?;
    let withheld = stats::aggregate_layer(&full, &preset.withheld)?;
    Ok(GeneratedData {
        full,
        observed,
        withheld,
    })
}

/// Files written by one run, relative paths included for the manifest.
pub struct RunOutputs {
    pub dir: PathBuf,
    pub files: Vec<String>,
    /// Human-readable remarks (blow-ups, skipped artifacts).
    pub notes: Vec<String>,
}

fn finish_run(
    dir: &Path,
    command: &str,
    config_hash: u64,
    seed: u64,
    files: Vec<String>,
    notes: Vec<String>,
) -> Result<RunOutputs> {
    let manifest = io::RunManifest {
        command: command.into(),
        config_hash,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: files.clone(),
    };
    io::write_run_manifest(dir, &manifest)?;
    Ok(RunOutputs {
        dir: dir.to_path_buf(),
        files,
        notes,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("creating {}: {e}", dir.display())))
}

/// Generates truth data and writes the trajectory artifacts: the full
/// generator output, the observed columns fed to learning, the withheld
/// hidden truth for evaluation, and the generating model.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    dir: &Path,
    config_hash: u64,
) -> Result<RunOutputs> {
    cfg.validate()?;
    let preset = build_preset(cfg)?;
    ensure_dir(dir)?;
    let data = generate_data(cfg, &preset)?;
    io::write_trajectory(&dir.join("truth.csv"), &data.full)?;
    io::write_trajectory(&dir.join("observed.csv"), &data.observed)?;
    io::write_trajectory(&dir.join("withheld.csv"), &data.withheld)?;
    io::write_model(&dir.join("model_truth.json"), &preset.truth)?;
    let files = vec![
        "truth.csv".into(),
        "observed.csv".into(),
        "withheld.csv".into(),
        "model_truth.json".into(),
    ];
    finish_run(dir, "simulate", config_hash, cfg.seed, files, Vec::new())
}

fn load_observed(cfg: &ExperimentConfig, preset: &Preset) -> Result<TrajectorySet> {
    match &cfg.observed_data {
        Some(path) => {
            let traj = io::read_trajectory(path).map_err(|e| match e {
                Error::Io(inner) => Error::Config(format!("observed_data: {inner}")),
                other => other,
            })?;
            for name in &preset.observed {
                if traj.col_index(name).is_none() {
                    return Err(Error::Config(format!(
                        "observed_data lacks required column '{name}'"
                    )));
                }
            }
            Ok(traj)
        }
        None => Ok(generate_data(cfg, preset)?.observed),
    }
}

fn load_guess(cfg: &ExperimentConfig, preset: &Preset) -> Result<CoefficientModel> {
    match &cfg.initial_guess {
        Some(path) => {
            let model = io::read_model(path).map_err(|e| match e {
                Error::Io(inner) => Error::Config(format!("initial_guess: {inner}")),
                other => other,
            })?;
            let want = preset.library.layout();
            let got = model.layout();
            if got.names() != want.names()
                || (0..want.len()).any(|n| got.is_observed(n) != want.is_observed(n))
            {
                return Err(Error::Config(
                    "initial_guess layout does not match the preset's learning layout".into(),
                ));
            }
            Ok(model)
        }
        None => Ok(preset.guess.clone()),
    }
}

fn learn_config(cfg: &ExperimentConfig, preset: &Preset) -> LearnConfig {
    let s = &cfg.learn;
    let reference_indicator = IndicatorMatrix::from_model(&preset.reference);
    let shapes_match = preset.reference.library().rows().len() == preset.library.rows().len()
        && preset
            .reference
            .library()
            .rows()
            .iter()
            .zip(preset.library.rows())
            .all(|(a, b)| a.len() == b.len());
    LearnConfig {
        max_iterations: s.max_iterations,
        threshold: s.threshold,
        hidden_threshold: s.hidden_threshold,
        structure_patience: s.structure_patience,
        param_tol: s.param_tol,
        hidden_noise: s.hidden_noise.clone(),
        seed: s.seed,
        burn_in_fraction: s.burn_in_fraction,
        reference: shapes_match
            .then(|| reference_indicator.with_forced_constants(&preset.library)),
        ..LearnConfig::default()
    }
}

/// Writes density and autocorrelation curves for each observed variable of
/// a trajectory under `<prefix><var>_pdf.csv` / `<prefix><var>_acf.csv`.
fn write_stat_curves(
    dir: &Path,
    prefix: &str,
    traj: &TrajectorySet,
    names: &[String],
    bins: usize,
    max_lag_units: f64,
    files: &mut Vec<String>,
) -> Result<()> {
    let max_lag = ((max_lag_units / traj.dt()).round() as usize).min(traj.n_steps() - 1);
    for name in names {
        let Some(c) = traj.col_index(name) else {
            continue;
        };
        let series = traj.col(c);
        let density = stats::pdf(&series, bins)?;
        let pdf_name = format!("{prefix}{name}_pdf.csv");
        io::write_curve_csv(
            &dir.join(&pdf_name),
            "value",
            "density",
            density.centers().into_iter().zip(density.density().iter().copied()),
        )?;
        files.push(pdf_name);
        let acf = stats::acf(&series, max_lag)?;
        let dt = traj.dt();
        let acf_name = format!("{prefix}{name}_acf.csv");
        io::write_curve_csv(
            &dir.join(&acf_name),
            "lag",
            "acf",
            acf.iter().enumerate().map(|(k, &v)| (k as f64 * dt, v)),
        )?;
        files.push(acf_name);
    }
    Ok(())
}

/// Writes the wide coefficient CSV per family (`coefficients.csv` for
/// single-family layouts, `coefficients_<family>.csv` otherwise).
fn write_model_matrices(
    dir: &Path,
    model: &CoefficientModel,
    files: &mut Vec<String>,
) -> Result<()> {
    let groups = model.layout().family_groups();
    for (family, rows) in &groups {
        let name = if groups.len() == 1 {
            "coefficients.csv".to_string()
        } else {
            format!("coefficients_{family}.csv")
        };
        io::write_coefficient_csv(&dir.join(&name), model, rows)?;
        files.push(name);
    }
    Ok(())
}

/// Runs the identification loop and writes the identified model, the
/// iteration trace, the coefficient matrices, and density/autocorrelation
/// comparison curves for the observed variables (data vs identified model).
pub fn run_learn(cfg: &ExperimentConfig, dir: &Path, config_hash: u64) -> Result<RunOutputs> {
    cfg.validate()?;
    let preset = build_preset(cfg)?;
    ensure_dir(dir)?;
    let observed = load_observed(cfg, &preset)?;
    let guess = load_guess(cfg, &preset)?;
    let config = learn_config(cfg, &preset);
    let (model, trace) = learning::learn(&observed, &preset.library, &guess, &config)?;

    let mut files = Vec::new();
    let mut notes = Vec::new();
    io::write_model(&dir.join("model.json"), &model)?;
    files.push("model.json".into());
    io::write_trace_csv(&dir.join("trace.csv"), &trace)?;
    files.push("trace.csv".into());
    write_model_matrices(dir, &model, &mut files)?;
    notes.push(format!("stop: {:?}", trace.stop));

    // Long-run statistics of the identified model against the data it was
    // trained on, for the observed variables.
    write_stat_curves(
        dir,
        "data_",
        &observed,
        &preset.observed,
        cfg.compare.bins,
        cfg.compare.max_lag_units,
        &mut files,
    )?;
    let eval_opts = sim_options(cfg, &preset, cfg.compare.seed, cfg.compare.horizon);
    match simulate(&model, &eval_opts) {
        Ok(sim) => {
            write_stat_curves(
                dir,
                "model_",
                &sim,
                &preset.observed,
                cfg.compare.bins,
                cfg.compare.max_lag_units,
                &mut files,
            )?;
        }
        Err(e) => notes.push(format!("identified-model simulation failed: {e}")),
    }
    finish_run(dir, "learn", config_hash, cfg.seed, files, notes)
}

/// Compares two saved models (or a saved model against the preset's
/// reference) by long-run statistics and aligned coefficients, writing the
/// report as JSON.
pub fn run_compare(
    cfg: &ExperimentConfig,
    dir: &Path,
    config_hash: u64,
    identified: &Path,
    reference: Option<&Path>,
) -> Result<RunOutputs> {
    cfg.validate()?;
    let preset = build_preset(cfg)?;
    ensure_dir(dir)?;
    let identified_model = io::read_model(identified)?;
    let reference_model = match reference {
        Some(p) => io::read_model(p)?,
        None => preset.reference.clone(),
    };
    let substeps = cfg.substeps.unwrap_or(preset.substeps);
    let opts = EvalOptions {
        horizon: cfg.compare.horizon,
        dt: cfg.dt / substeps as f64,
        record_every: substeps,
        burn_in: cfg.compare.burn_in,
        seed: cfg.compare.seed,
        bins: cfg.compare.bins,
        max_lag_units: cfg.compare.max_lag_units,
    };
    let report = learning::evaluate_identified(&identified_model, &reference_model, &opts)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("serializing report: {e}")))?;
    std::fs::write(dir.join("compare.json"), text + "\n")
        .map_err(|e| Error::Config(format!("writing {}: {e}", dir.display())))?;
    let mut notes = Vec::new();
    if report.identified_blew_up || report.reference_blew_up {
        notes.push("a model simulation blew up; distances cover the surviving prefix".into());
    }
    finish_run(
        dir,
        "compare",
        config_hash,
        cfg.compare.seed,
        vec!["compare.json".into()],
        notes,
    )
}

/// Writes density and autocorrelation curves for every column of a
/// trajectory file.
pub fn run_stats(
    input: &Path,
    dir: &Path,
    bins: usize,
    max_lag_units: f64,
    config_hash: u64,
) -> Result<RunOutputs> {
    let traj = io::read_trajectory(input)?;
    ensure_dir(dir)?;
    let mut files = Vec::new();
    let names = traj.names().to_vec();
    write_stat_curves(dir, "", &traj, &names, bins, max_lag_units, &mut files)?;
    finish_run(dir, "stats", config_hash, 0, files, Vec::new())
}
