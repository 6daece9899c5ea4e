//! Iterative identification loop: conditional sampling of hidden variables,
//! causation-entropy structure selection, then constrained maximum
//! likelihood, repeated until the structure freezes and the coefficients
//! settle.
//!
//! Each pass consumes the model produced by the previous one: the sampler
//! draws hidden trajectories from the current model's conditional
//! distribution, the selection and estimation stages run on the combined
//! observed/sampled data, and the resulting coefficients become the next
//! model. With no hidden variables the sampling stage is a no-op and the
//! loop settles after two passes.
//!
//! The early stretch of every sampled hidden trajectory carries the filter
//! initialization transient, so a leading fraction of the combined data is
//! excluded from the selection/estimation accumulations.

use crate::causality::{build_causation_matrix, frobenius_distance, IndicatorMatrix};
use crate::cgns::{filter_forward, sample_hidden, smooth_backward, FilterInit};
use crate::dynamics::{
    simulate, CoefficientModel, ColumnRole, SimOptions, TermLibrary, TrajectorySet,
};
use crate::error::{Error, Result};
use crate::estimation::{assemble_regression, build_energy_constraints, mle_constrained};
use crate::stats::{acf, pdf_l1_distance};
use crate::util::derive_seed;

/// Knobs of the identification loop.
#[derive(Debug, Clone)]
pub struct LearnConfig {
    /// Hard cap on the number of passes.
    pub max_iterations: usize,
    /// Causation-entropy retention threshold (nats).
    pub threshold: f64,
    /// Optional override of the threshold for hidden-equation rows; `None`
    /// applies `threshold` to every row.
    pub hidden_threshold: Option<f64>,
    /// Number of consecutive passes with an unchanged indicator required
    /// before the structure counts as frozen.
    pub structure_patience: usize,
    /// Relative parameter-change tolerance; both this and the frozen
    /// structure are required to stop early.
    pub param_tol: f64,
    /// Fixed noise amplitudes for the hidden equations, in hidden layout
    /// order. Empty means take them from the initial model.
    pub hidden_noise: Vec<f64>,
    /// Filter initialization for the sampling stage.
    pub filter_init: FilterInit,
    /// Master seed; each pass derives its own sampling stream from it.
    pub seed: u64,
    /// Leading fraction of steps excluded from selection/estimation to
    /// suppress the filter-initialization transient. Ignored when there is
    /// nothing to sample.
    pub burn_in_fraction: f64,
    /// Optional reference structure; when set, every trace record carries
    /// the Frobenius distance of the pass indicator to it. Constant columns
    /// are always retained, so a reference derived from a model should force
    /// its constants on first.
    pub reference: Option<IndicatorMatrix>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            max_iterations: 120,
            threshold: crate::causality::DEFAULT_THRESHOLD,
            hidden_threshold: None,
            structure_patience: 3,
            param_tol: 1e-3,
            hidden_noise: Vec::new(),
            filter_init: FilterInit::default(),
            seed: 0,
            burn_in_fraction: 0.01,
            reference: None,
        }
    }
}

impl LearnConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.threshold > 0.0) || self.hidden_threshold.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("causation thresholds must be positive".into()));
        }
        if !(self.param_tol > 0.0) {
            return Err(Error::Config("param_tol must be positive".into()));
        }
        if self.structure_patience == 0 {
            return Err(Error::Config("structure_patience must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.burn_in_fraction) {
            return Err(Error::Config(
                "burn_in_fraction must lie in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    /// Structure frozen and parameter change below tolerance.
    Converged,
    /// Iteration cap reached without meeting the convergence criterion.
    MaxIterations,
    /// A pass failed (sampler divergence, estimation failure); the trace
    /// covers the completed passes and the returned model is the last good
    /// one.
    Aborted(String),
}

/// One completed pass of the loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based pass number.
    pub iteration: usize,
    /// Sampling seed used by this pass.
    pub seed: u64,
    /// Structure selected by this pass.
    pub indicator: IndicatorMatrix,
    /// Frobenius distance of the indicator to the configured reference.
    pub frobenius: Option<f64>,
    /// Estimated coefficients labeled `row:term`.
    pub params: Vec<(String, f64)>,
    /// Noise amplitudes per equation row.
    pub sigma: Vec<f64>,
    /// Gaussian log-likelihood of the one-step increments at the estimate.
    pub log_likelihood: f64,
    /// Relative infinity-norm change of the coefficients against the
    /// previous pass; `None` when the structure differs from it.
    pub max_param_delta: Option<f64>,
    /// Checksum of the sampled hidden trajectories; `None` when fully
    /// observed.
    pub hidden_checksum: Option<u64>,
}

/// Complete history of a learning run.
#[derive(Debug, Clone)]
pub struct LearnTrace {
    /// One record per completed pass, in order.
    pub records: Vec<IterationRecord>,
    /// Terminal status of the run.
    pub stop: StopReason,
}

impl LearnTrace {
    /// Renders the per-pass summary as CSV with columns
    /// `iteration,frobenius,log_likelihood,max_param_delta`; optional fields
    /// render as empty cells. The output is deterministic for a fixed
    /// configuration and data, byte for byte.
    pub fn csv(&self) -> String {
        let mut out = String::from("iteration,frobenius,log_likelihood,max_param_delta\n");
        for r in &self.records {
            let frob = r
                .frobenius
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            let delta = r
                .max_param_delta
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.16e},{}\n",
                r.iteration, frob, r.log_likelihood, delta
            ));
        }
        out
    }

    /// Final indicator of the run, if any pass completed.
    pub fn final_indicator(&self) -> Option<&IndicatorMatrix> {
        self.records.last().map(|r| &r.indicator)
    }
}

/// Runs the full identification loop on observed data.
///
/// Per pass: (1) sample hidden trajectories conditioned on the observed path
/// under the current model; (2) score every library term on the combined
/// data and keep those above the threshold; (3) re-estimate coefficients for
/// the retained structure under the declared energy constraints. The loop
/// stops once the indicator has been unchanged for `structure_patience`
/// consecutive passes and the relative coefficient change falls below
/// `param_tol`, or at `max_iterations`.
///
/// The initial model supplies the first sampling distribution and the fixed
/// hidden noise amplitudes; it must be built on `library`. `observed` must
/// contain a column for every observed layout variable (extra columns,
/// including any withheld truth of hidden variables, are ignored).
///
/// Observed-row noise amplitudes of the initial model are treated as
/// placeholders: before the first pass they are recalibrated from the
/// quadratic variation of second differences of each observed column.
/// Sampling quality depends strongly on these weights, and the data pins
/// them tightly, so there is no reason to trust a hand-written starting
/// value.
///
/// Mid-loop failures do not discard progress: the trace ends with
/// [`StopReason::Aborted`] and the model of the last completed pass is
/// returned.
pub fn learn(
    observed: &TrajectorySet,
    library: &TermLibrary,
    initial_model: &CoefficientModel,
    config: &LearnConfig,
) -> Result<(CoefficientModel, LearnTrace)> {
    config.validate()?;
    if initial_model.library() != library {
        return Err(Error::Structure(
            "initial model is not built on the supplied term library".into(),
        ));
    }
    let layout = library.layout();
    let hidden = layout.hidden_indices();
    for n in layout.observed_indices() {
        if observed.col_index(layout.name(n)).is_none() {
            return Err(Error::Precondition(format!(
                "observed data lacks a column for '{}'",
                layout.name(n)
            )));
        }
    }
    if let Some(reference) = &config.reference {
        let shapes_match = reference.n_rows() == library.rows().len()
            && reference
                .rows()
                .iter()
                .enumerate()
                .all(|(n, row)| row.len() == library.row(n).len());
        if !shapes_match {
            return Err(Error::Structure(
                "reference indicator does not match the library shape".into(),
            ));
        }
    }

    let hidden_noise: Vec<f64> = if config.hidden_noise.is_empty() {
        hidden.iter().map(|&h| initial_model.noise()[h]).collect()
    } else {
        config.hidden_noise.clone()
    };
    if hidden_noise.len() != hidden.len() {
        return Err(Error::Config(format!(
            "{} hidden noise amplitudes supplied for {} hidden variables",
            hidden_noise.len(),
            hidden.len()
        )));
    }
    if hidden_noise.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Config(
            "hidden noise amplitudes must be positive".into(),
        ));
    }

    let mut model = initial_model.clone();
    {
        let mut noise = model.noise().to_vec();
        for (k, &h) in hidden.iter().enumerate() {
            noise[h] = hidden_noise[k];
        }
        // Observed amplitudes come straight from the data. Second differences
        // cancel the drift to leading order, so their quadratic variation is
        // 2 sigma^2 dt up to O(dt^3); plain increments would inflate the
        // estimate by dt * mean(drift^2), and a placeholder from the initial
        // model can distort the first sampling pass badly enough to derail
        // structure selection.
        let dt = observed.dt();
        let j = observed.n_steps() - 1;
        for n in layout.observed_indices() {
            let col = observed
                .col_index(layout.name(n))
                .expect("observed columns checked above");
            let qv: f64 = (1..j)
                .map(|s| {
                    let d = observed.value(s + 1, col) - 2.0 * observed.value(s, col)
                        + observed.value(s - 1, col);
                    d * d
                })
                .sum();
            if qv > 0.0 {
                noise[n] = (qv / (2.0 * (j - 1) as f64 * dt)).sqrt();
            }
        }
        model.set_noise(noise)?;
    }

    let n_steps = observed.n_steps();
    let skip = if hidden.is_empty() {
        0
    } else {
        (n_steps as f64 * config.burn_in_fraction) as usize
    };
    if n_steps.saturating_sub(skip) < 12 {
        return Err(Error::Precondition(
            "time series too short once the transient is excluded".into(),
        ));
    }
    let mut combined = combined_base(observed, library, skip)?;

    let effective_patience = if hidden.is_empty() {
        // Fully observed data never changes between passes, so the structure
        // cannot drift; one confirming pass suffices.
        1
    } else {
        config.structure_patience
    };

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut prev_indicator: Option<IndicatorMatrix> = None;
    let mut prev_theta: Vec<f64> = Vec::new();
    let mut stable = 0usize;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let seed = derive_seed(config.seed, iteration as u64);
        let pass = run_pass(
            observed,
            library,
            &model,
            config,
            &mut combined,
            &hidden,
            skip,
            seed,
        );
        let pass = match pass {
            Ok(p) => p,
            Err(e) => {
                stop = StopReason::Aborted(format!("pass {iteration}: {e}"));
                return Ok((
                    model,
                    LearnTrace {
                        records,
                        stop,
                    },
                ));
            }
        };

        let frobenius = match &config.reference {
            Some(reference) => Some(frobenius_distance(&pass.indicator, reference)?),
            None => None,
        };
        let same_structure = prev_indicator.as_ref() == Some(&pass.indicator);
        stable = if same_structure { stable + 1 } else { 0 };
        let max_param_delta = if same_structure {
            let scale = prev_theta
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            let diff = pass
                .theta
                .iter()
                .zip(&prev_theta)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Some(diff / scale)
        } else {
            None
        };

        records.push(IterationRecord {
            iteration,
            seed,
            indicator: pass.indicator.clone(),
            frobenius,
            params: pass.params,
            sigma: pass.model.noise().to_vec(),
            log_likelihood: pass.log_likelihood,
            max_param_delta,
            hidden_checksum: pass.hidden_checksum,
        });
        prev_indicator = Some(pass.indicator);
        prev_theta = pass.theta;
        model = pass.model;

        if stable >= effective_patience && max_param_delta.is_some_and(|d| d < config.param_tol)
        {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok((model, LearnTrace { records, stop }))
}

/// Output of one sampling/selection/estimation pass.
struct PassOutcome {
    indicator: IndicatorMatrix,
    theta: Vec<f64>,
    params: Vec<(String, f64)>,
    log_likelihood: f64,
    hidden_checksum: Option<u64>,
    model: CoefficientModel,
}

#[allow(clippy::too_many_arguments)]
fn run_pass(
    observed: &TrajectorySet,
    library: &TermLibrary,
    model: &CoefficientModel,
    config: &LearnConfig,
    combined: &mut TrajectorySet,
    hidden: &[usize],
    skip: usize,
    seed: u64,
) -> Result<PassOutcome> {
    let hidden_checksum = if hidden.is_empty() {
        None
    } else {
        let filter = filter_forward(model, observed, config.filter_init)?;
        let smoother = smooth_backward(model, observed, &filter)?;
        let sampled = sample_hidden(model, observed, &filter, &smoother, seed)?;
        for (k, &h) in hidden.iter().enumerate() {
            let col = sampled.col(k);
            combined.replace_col(h, &col[skip..], ColumnRole::Sampled)?;
        }
        Some(sampled.checksum())
    };

    let cm = build_causation_matrix(combined, library, config.threshold)?;
    let indicator = match config.hidden_threshold {
        None => cm.indicator().clone(),
        Some(ht) => {
            let layout = library.layout();
            let rows = cm
                .values()
                .iter()
                .enumerate()
                .map(|(n, row)| {
                    let tau = if layout.is_observed(n) {
                        config.threshold
                    } else {
                        ht
                    };
                    let constant = library.constant_index(n);
                    row.iter()
                        .enumerate()
                        .map(|(m, &v)| constant == Some(m) || v > tau)
                        .collect()
                })
                .collect();
            IndicatorMatrix::new(rows)
        }
    };

    let constraints = build_energy_constraints(library, &indicator)?;
    let problem = assemble_regression(combined, library, &indicator, &[])?;
    let est = mle_constrained(&problem, model.noise(), &constraints)?;

    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); library.rows().len()];
    for (p, &(n, m)) in problem.params().iter().enumerate() {
        entries[n].push((m, est.theta[p]));
    }
    let params = problem
        .params()
        .iter()
        .enumerate()
        .map(|(p, _)| (problem.param_label(p), est.theta[p]))
        .collect();
    let next = CoefficientModel::new(library.clone(), entries, est.sigma.clone())?;

    Ok(PassOutcome {
        indicator,
        theta: est.theta,
        params,
        log_likelihood: -est.objective,
        hidden_checksum,
        model: next,
    })
}

/// Builds the combined data set the selection/estimation stages run on:
/// every layout variable as a column, observed ones copied from the input
/// (minus the leading `skip` rows), hidden ones zeroed until the first
/// sampling pass fills them.
fn combined_base(
    observed: &TrajectorySet,
    library: &TermLibrary,
    skip: usize,
) -> Result<TrajectorySet> {
    let layout = library.layout();
    let d = layout.len();
    let rows = observed.n_steps() - skip;
    let mut values = vec![0.0; rows * d];
    let mut roles = Vec::with_capacity(d);
    for v in 0..d {
        if layout.is_observed(v) {
            let src = observed
                .col_index(layout.name(v))
                .expect("checked before the loop");
            for r in 0..rows {
                values[r * d + v] = observed.value(r + skip, src);
            }
            roles.push(ColumnRole::Observed);
        } else {
            roles.push(ColumnRole::Sampled);
        }
    }
    TrajectorySet::new(
        layout.names().to_vec(),
        roles,
        observed.dt(),
        values,
    )
}

/// Simulation settings for [`evaluate_identified`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Recorded comparison span per model.
    pub horizon: f64,
    /// Integration step.
    pub dt: f64,
    /// Integration steps per recorded point.
    pub record_every: usize,
    /// Time units discarded before recording starts.
    pub burn_in: f64,
    /// Shared simulation seed.
    pub seed: u64,
    /// Histogram bins for the density distance.
    pub bins: usize,
    /// Autocorrelation window, in time units.
    pub max_lag_units: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            horizon: 500.0,
            dt: 1e-3,
            record_every: 1,
            burn_in: 10.0,
            seed: 0,
            bins: 100,
            max_lag_units: 10.0,
        }
    }
}

/// Long-run statistical distances for one shared variable.
#[derive(Debug, Clone, serde::Serialize)]
pub struct VariableDistance {
    pub name: String,
    /// L1 distance between the empirical densities (bounded by 2).
    pub pdf_l1: f64,
    /// Relative L2 distance between the autocorrelation curves.
    pub acf_l2: f64,
}

/// One coefficient comparison row, aligned by equation and term label.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ParamEntry {
    pub row: String,
    pub term: String,
    pub reference: f64,
    pub identified: f64,
}

/// Outcome of comparing an identified model against a reference model.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    /// Distances per variable common to both layouts; empty when either
    /// simulation blew up.
    pub distances: Vec<VariableDistance>,
    pub mean_pdf_l1: Option<f64>,
    pub mean_acf_l2: Option<f64>,
    /// Coefficients of both models over the union of retained terms in the
    /// shared equation rows.
    pub parameter_table: Vec<ParamEntry>,
    /// True when the shared rows retain exactly the same term sets.
    pub structures_match: bool,
    pub reference_blew_up: bool,
    pub identified_blew_up: bool,
}

/// Simulates both models from rest with a shared seed and compares long-run
/// statistics (empirical density, autocorrelation) per shared variable, plus
/// a coefficient table aligned by term label. Blow-up of either simulation
/// is reported in the flags instead of failing the call.
pub fn evaluate_identified(
    identified: &CoefficientModel,
    reference: &CoefficientModel,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let run = |m: &CoefficientModel| -> Result<Option<TrajectorySet>> {
        let sim_opts = SimOptions {
            horizon: opts.horizon,
            dt: opts.dt,
            record_every: opts.record_every,
            burn_in: opts.burn_in,
            seed: opts.seed,
            initial: vec![0.0; m.layout().len()],
        };
        match simulate(m, &sim_opts) {
            Ok(t) => Ok(Some(t)),
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let ident_run = run(identified)?;
    let ref_run = run(reference)?;

    let (parameter_table, structures_match) = parameter_table(identified, reference);

    let mut distances = Vec::new();
    if let (Some(ident_t), Some(ref_t)) = (&ident_run, &ref_run) {
        let record_dt = opts.dt * opts.record_every as f64;
        let max_lag = ((opts.max_lag_units / record_dt).round() as usize)
            .min(ident_t.n_steps() / 2)
            .max(1);
        for (v, name) in identified.layout().names().iter().enumerate() {
            let Some(rv) = ref_t.col_index(name) else {
                continue;
            };
            let a = ident_t.col(v);
            let b = ref_t.col(rv);
            let pdf_l1 = pdf_l1_distance(&a, &b, opts.bins)?;
            let acf_a = acf(&a, max_lag)?;
            let acf_b = acf(&b, max_lag)?;
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, y) in acf_a.iter().zip(&acf_b) {
                num += (x - y) * (x - y);
                den += y * y;
            }
            distances.push(VariableDistance {
                name: name.clone(),
                pdf_l1,
                acf_l2: (num / den).sqrt(),
            });
        }
    }
    let mean = |f: fn(&VariableDistance) -> f64| -> Option<f64> {
        if distances.is_empty() {
            None
        } else {
            Some(distances.iter().map(f).sum::<f64>() / distances.len() as f64)
        }
    };
    Ok(EvalReport {
        mean_pdf_l1: mean(|d| d.pdf_l1),
        mean_acf_l2: mean(|d| d.acf_l2),
        distances,
        parameter_table,
        structures_match,
        reference_blew_up: ref_run.is_none(),
        identified_blew_up: ident_run.is_none(),
    })
}

/// Aligns retained coefficients of both models by row name and term label.
fn parameter_table(
    identified: &CoefficientModel,
    reference: &CoefficientModel,
) -> (Vec<ParamEntry>, bool) {
    let mut table = Vec::new();
    let mut structures_match = identified.layout().names() == reference.layout().names();
    for (ni, name) in identified.layout().names().iter().enumerate() {
        let Some(nr) = reference.layout().index_of(name) else {
            continue;
        };
        let ident_terms: Vec<(String, f64)> = identified
            .entries(ni)
            .iter()
            .map(|&(m, c)| (identified.library().term(ni, m).label().to_string(), c))
            .collect();
        let ref_terms: Vec<(String, f64)> = reference
            .entries(nr)
            .iter()
            .map(|&(m, c)| (reference.library().term(nr, m).label().to_string(), c))
            .collect();
        let mut labels: Vec<String> = ref_terms.iter().map(|(l, _)| l.clone()).collect();
        for (l, _) in &ident_terms {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        let lookup = |set: &[(String, f64)], l: &str| -> Option<f64> {
            set.iter().find(|(k, _)| k == l).map(|(_, c)| *c)
        };
        for l in labels {
            let r = lookup(&ref_terms, &l);
            let i = lookup(&ident_terms, &l);
            if r.is_none() != i.is_none() {
                structures_match = false;
            }
            table.push(ParamEntry {
                row: name.clone(),
                term: l,
                reference: r.unwrap_or(0.0),
                identified: i.unwrap_or(0.0),
            });
        }
    }
    (table, structures_match)
}
