//! Maximum-likelihood estimation of drift coefficients and noise
//! amplitudes, with optional linear equality constraints.
//!
//! The one-step discretization of the dynamics turns coefficient estimation
//! into weighted linear regression: each equation's next value is its
//! current value plus `dt` times a linear combination of candidate term
//! values, plus Gaussian noise. Noise variances are estimated first from
//! the quadratic variation of the increments (drift contributes at a higher
//! order in `dt`), then the coefficient normal equations are solved in one
//! shot; there is no inner alternation between the two.
//!
//! Physics constraints (energy-conserving quadratic pairs) enter as linear
//! equalities `H theta = g` handled by Lagrange multipliers, so conservation
//! holds exactly in the estimate rather than approximately through a
//! penalty.

use crate::causality::IndicatorMatrix;
use crate::dynamics::{Term, TermLibrary, TrajectorySet};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::ops::Range;

/// Condition-number gate on the per-equation Gram matrices.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Cap on alternations between the drift solve and the noise update.
const MAX_NOISE_REFINEMENTS: usize = 50;

/// Relative step-variance change below which the alternation stops.
const NOISE_REFINEMENT_TOL: f64 = 1e-12;

/// Linear equality constraints `H theta = g` on the flattened retained
/// parameters.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    h: DMatrix<f64>,
    g: DVector<f64>,
    labels: Vec<String>,
}

impl ConstraintSet {
    /// Validates shape and full row rank.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, labels: Vec<String>) -> Result<Self> {
        let k = h.nrows();
        if g.len() != k || labels.len() != k {
            return Err(Error::Structure(
                "constraint rows, right-hand side and labels disagree".into(),
            ));
        }
        if k > 0 {
            if k > h.ncols() {
                return Err(Error::Structure(
                    "more constraints than free parameters".into(),
                ));
            }
            let svd = h.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-12 * smax.max(1.0))
                .count();
            if rank < k {
                return Err(Error::Structure(
                    "constraint matrix is rank deficient".into(),
                ));
            }
        }
        Ok(ConstraintSet { h, g, labels })
    }

    pub fn empty(n_params: usize) -> Self {
        ConstraintSet {
            h: DMatrix::zeros(0, n_params),
            g: DVector::zeros(0),
            labels: Vec::new(),
        }
    }

    /// Number of constraint rows.
    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_params(&self) -> usize {
        self.h.ncols()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Outcome of one estimation pass.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Estimated coefficients in flattening order (see
    /// [`RegressionProblem::params`]).
    pub theta: Vec<f64>,
    /// Noise amplitudes per equation row. Observed rows carry the residual
    /// variance of the fitted drift, scaled back to a per-unit-time
    /// amplitude; hidden rows keep their configured values (the sampling
    /// noise there is not separately identifiable).
    pub sigma: Vec<f64>,
    /// Lagrange multipliers, one per constraint row; empty when
    /// unconstrained.
    pub lambda: Vec<f64>,
    /// Negative log-likelihood at the estimate.
    pub objective: f64,
    /// Worst per-equation Gram condition number.
    pub gram_condition: f64,
    /// `max |H theta - g|`; zero when unconstrained.
    pub constraint_residual: f64,
}

/// A regression view of one dataset: which parameters are free, which
/// coefficients are held fixed, and how features and offsets are read off
/// the trajectory.
pub struct RegressionProblem<'a> {
    data: &'a TrajectorySet,
    library: &'a TermLibrary,
    /// Flattened free parameters as `(row, term)`, grouped by row.
    params: Vec<(usize, usize)>,
    /// Range of parameter indices belonging to each row.
    row_range: Vec<Range<usize>>,
    /// Fixed `(term, value)` contributions per row.
    fixed: Vec<Vec<(usize, f64)>>,
    /// Data column per layout variable.
    col_of: Vec<usize>,
}

/// Flattening of retained, non-fixed terms into a parameter vector.
/// Shared by regression assembly and constraint construction so both agree
/// on parameter order.
fn flatten_params(
    library: &TermLibrary,
    indicator: &IndicatorMatrix,
    fixed: &[(usize, usize, f64)],
) -> (Vec<(usize, usize)>, Vec<Range<usize>>) {
    let n_rows = library.layout().len();
    let mut params = Vec::new();
    let mut row_range = Vec::with_capacity(n_rows);
    for n in 0..n_rows {
        let start = params.len();
        for m in 0..library.row(n).len() {
            let is_fixed = fixed.iter().any(|&(r, t, _)| (r, t) == (n, m));
            if indicator.get(n, m) && !is_fixed {
                params.push((n, m));
            }
        }
        row_range.push(start..params.len());
    }
    (params, row_range)
}

/// Evaluates a term on one data row through the column map.
#[inline]
fn eval_term(term: &Term, row: &[f64], col_of: &[usize]) -> f64 {
    let mut p = 1.0;
    for &(v, e) in term.obs_factors() {
        let x = row[col_of[v]];
        for _ in 0..e {
            p *= x;
        }
    }
    if let Some(h) = term.hidden_factor() {
        p *= row[col_of[h]];
    }
    p
}

/// Builds the regression view of a dataset under a structure indicator.
///
/// Free parameters are the indicator's true entries minus any `(row, term,
/// value)` triples in `fixed`; fixed coefficients contribute to the known
/// part of the one-step mean instead.
pub fn assemble_regression<'a>(
    data: &'a TrajectorySet,
    library: &'a TermLibrary,
    indicator: &IndicatorMatrix,
    fixed: &[(usize, usize, f64)],
) -> Result<RegressionProblem<'a>> {
    let layout = library.layout();
    if indicator.n_rows() != layout.len()
        || (0..layout.len()).any(|n| indicator.rows()[n].len() != library.row(n).len())
    {
        return Err(Error::Structure(
            "indicator shape does not match the library".into(),
        ));
    }
    for &(r, t, _) in fixed {
        if r >= layout.len() || t >= library.row(r).len() {
            return Err(Error::Structure("fixed coefficient out of range".into()));
        }
    }
    let mut col_of = vec![0usize; layout.len()];
    for v in 0..layout.len() {
        col_of[v] = data.col_index(layout.name(v)).ok_or_else(|| {
            Error::Structure(format!("data lacks a column for {}", layout.name(v)))
        })?;
    }
    let (params, row_range) = flatten_params(library, indicator, fixed);
    let mut fixed_rows = vec![Vec::new(); layout.len()];
    for &(r, t, v) in fixed {
        fixed_rows[r].push((t, v));
    }
    Ok(RegressionProblem {
        data,
        library,
        params,
        row_range,
        fixed: fixed_rows,
        col_of,
    })
}

impl RegressionProblem<'_> {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Flattened `(row, term)` pairs in parameter order.
    pub fn params(&self) -> &[(usize, usize)] {
        &self.params
    }

    /// Human-readable `equation:term` name of one parameter.
    pub fn param_label(&self, p: usize) -> String {
        let (n, m) = self.params[p];
        format!(
            "{}:{}",
            self.library.layout().name(n),
            self.library.term(n, m).label()
        )
    }

    /// Steps usable as regression samples (each needs a successor).
    pub fn n_samples(&self) -> usize {
        self.data.n_steps() - 1
    }

    /// Known part of the one-step mean of row `n` at step `j`: the current
    /// value plus `dt` times the fixed-coefficient drift.
    pub fn offset(&self, j: usize, n: usize) -> f64 {
        let row = self.data.row(j);
        let mut s = row[self.col_of[n]];
        for &(t, v) in &self.fixed[n] {
            s += self.data.dt() * v * eval_term(self.library.term(n, t), row, &self.col_of);
        }
        s
    }

    /// Multiplicative prefactor of parameter `p` in the one-step mean at
    /// step `j` (the `dt`-scaled term value).
    pub fn feature(&self, j: usize, p: usize) -> f64 {
        let (n, m) = self.params[p];
        self.data.dt() * eval_term(self.library.term(n, m), self.data.row(j), &self.col_of)
    }

    /// Parameter indices belonging to one equation row.
    pub fn row_params(&self, n: usize) -> Range<usize> {
        self.row_range[n].clone()
    }
}

/// Per-row accumulation products of one streaming pass over the data.
struct RowAccum {
    /// `dt^2 sum f f^T` over the row's free parameters.
    gram: DMatrix<f64>,
    /// `dt sum f r` with `r` the fixed-adjusted increment.
    moment: DVector<f64>,
    /// Sum of squared fixed-adjusted increments (quadratic variation with
    /// all free coefficients at zero; seeds the noise refinement).
    res0: f64,
}

impl RowAccum {
    /// Residual sum of squares at coefficients `th`, expanded around the
    /// fixed-adjusted increments: `res0 - 2 theta.b + theta.G theta`.
    fn rss(&self, th: &DVector<f64>) -> f64 {
        self.res0 - 2.0 * th.dot(&self.moment) + (&self.gram * th).dot(th)
    }
}

fn accumulate(problem: &RegressionProblem) -> Vec<RowAccum> {
    let data = problem.data;
    let dt = data.dt();
    let usable = problem.n_samples();
    let layout = problem.library.layout();
    (0..layout.len())
        .into_par_iter()
        .map(|n| {
            let prange = problem.row_range[n].clone();
            let terms: Vec<&Term> = problem.params[prange.clone()]
                .iter()
                .map(|&(_, m)| problem.library.term(n, m))
                .collect();
            let p = terms.len();
            let col = problem.col_of[n];
            let mut gram = DMatrix::zeros(p, p);
            let mut moment = DVector::zeros(p);
            let mut f = vec![0.0; p];
            let mut res0 = 0.0;
            for j in 0..usable {
                let row = data.row(j);
                let dz = data.value(j + 1, col) - row[col];
                let mut r = dz;
                for &(t, v) in &problem.fixed[n] {
                    r -= dt * v * eval_term(problem.library.term(n, t), row, &problem.col_of);
                }
                res0 += r * r;
                for (i, t) in terms.iter().enumerate() {
                    f[i] = eval_term(t, row, &problem.col_of);
                }
                for a in 0..p {
                    moment[a] += f[a] * r;
                    for b in a..p {
                        gram[(a, b)] += f[a] * f[b];
                    }
                }
            }
            for a in 0..p {
                moment[a] *= dt;
                for b in a..p {
                    gram[(a, b)] *= dt * dt;
                    gram[(b, a)] = gram[(a, b)];
                }
            }
            RowAccum { gram, moment, res0 }
        })
        .collect()
}

/// Starting per-step noise variances: quadratic variation (all free
/// coefficients at zero) for observed rows, the configured amplitude for
/// hidden rows. Observed rows are refined against the fitted drift by
/// [`refine_variances`] once coefficients are available.
fn step_variances(
    problem: &RegressionProblem,
    accums: &[RowAccum],
    prior_noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = problem.library.layout();
    if prior_noise.len() != layout.len() {
        return Err(Error::Structure(
            "prior noise length does not match the layout".into(),
        ));
    }
    let dt = problem.data.dt();
    let j = problem.n_samples() as f64;
    let mut step_var = vec![0.0; layout.len()];
    let mut sigma = vec![0.0; layout.len()];
    for n in 0..layout.len() {
        if layout.is_observed(n) {
            let var = accums[n].res0 / j;
            if var <= 0.0 {
                // Noiseless data: keep the weights finite; the estimate is
                // exact in this regime anyway.
                step_var[n] = f64::MIN_POSITIVE.sqrt();
                sigma[n] = 0.0;
            } else {
                step_var[n] = var;
                sigma[n] = (var / dt).sqrt();
            }
        } else {
            let s = prior_noise[n];
            if s <= 0.0 {
                return Err(Error::Config(format!(
                    "hidden equation {} needs a positive configured noise",
                    layout.name(n)
                )));
            }
            step_var[n] = s * s * dt;
            sigma[n] = s;
        }
    }
    Ok((step_var, sigma))
}

/// Re-estimates observed-row noise from the residual of the fitted drift
/// and reports the largest relative change in any step variance. Hidden
/// rows keep their prescribed amplitude.
fn refine_variances(
    problem: &RegressionProblem,
    accums: &[RowAccum],
    theta: &DVector<f64>,
    step_var: &mut [f64],
    sigma: &mut [f64],
) -> Result<f64> {
    let layout = problem.library.layout();
    let dt = problem.data.dt();
    let j = problem.n_samples() as f64;
    let mut worst = 0.0f64;
    for n in 0..layout.len() {
        if !layout.is_observed(n) {
            continue;
        }
        let range = problem.row_range[n].clone();
        let th = DVector::from_iterator(range.len(), range.clone().map(|i| theta[i]));
        let var = accums[n].rss(&th) / j;
        if !var.is_finite() {
            return Err(Error::Estimation(format!(
                "residual variance for {} is not finite",
                layout.name(n)
            )));
        }
        let new_step = if var <= 0.0 {
            // Noiseless data: keep the weights finite; the estimate is
            // exact in this regime anyway.
            sigma[n] = 0.0;
            f64::MIN_POSITIVE.sqrt()
        } else {
            sigma[n] = (var / dt).sqrt();
            var
        };
        worst = worst.max((new_step - step_var[n]).abs() / step_var[n].max(f64::MIN_POSITIVE));
        step_var[n] = new_step;
    }
    Ok(worst)
}

/// Factorization wrapper for the block-diagonal weighted Gram matrix.
struct BlockSolver {
    chols: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>>,
    ranges: Vec<Range<usize>>,
    condition: f64,
}

impl BlockSolver {
    fn new(problem: &RegressionProblem, accums: &[RowAccum], step_var: &[f64]) -> Result<Self> {
        let mut chols = Vec::with_capacity(accums.len());
        let mut condition = 1.0f64;
        for (n, acc) in accums.iter().enumerate() {
            let p = acc.gram.nrows();
            if p == 0 {
                chols.push(None);
                continue;
            }
            let d = &acc.gram / step_var[n];
            let eig = d.clone().symmetric_eigen();
            let lmax = eig.eigenvalues.max();
            let lmin = eig.eigenvalues.min();
            let cond = if lmin <= 0.0 {
                f64::INFINITY
            } else {
                lmax / lmin
            };
            condition = condition.max(cond);
            if cond > MAX_GRAM_CONDITION {
                return Err(Error::Estimation(format!(
                    "normal equations for {} are ill-conditioned ({:.2e}); raise the selection threshold to drop near-collinear terms",
                    problem.library.layout().name(n),
                    cond
                )));
            }
            let chol = d.clone().cholesky().or_else(|| {
                // PSD up to rounding; nudge and retry once.
                let mut dj = d.clone();
                let eps = 1e-12 * (dj.trace() / p as f64).max(1.0);
                for i in 0..p {
                    dj[(i, i)] += eps;
                }
                dj.cholesky()
            });
            match chol {
                Some(c) => chols.push(Some(c)),
                None => {
                    return Err(Error::Estimation(format!(
                        "normal equations for {} could not be factorized",
                        problem.library.layout().name(n)
                    )))
                }
            }
        }
        Ok(BlockSolver {
            chols,
            ranges: problem.row_range.clone(),
            condition,
        })
    }

    /// Solves `D x = v` blockwise.
    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (n, range) in self.ranges.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let chol = self.chols[n].as_ref().expect("factorized block");
            let sub = DVector::from_iterator(range.len(), range.clone().map(|i| v[i]));
            let sol = chol.solve(&sub);
            for (k, i) in range.clone().enumerate() {
                out[i] = sol[k];
            }
        }
        out
    }
}

fn finish(
    problem: &RegressionProblem,
    accums: &[RowAccum],
    step_var: &[f64],
    sigma: Vec<f64>,
    theta: DVector<f64>,
    lambda: Vec<f64>,
    constraints: &ConstraintSet,
    condition: f64,
) -> EstimationResult {
    let j = problem.n_samples() as f64;
    let mut objective = 0.0;
    for (n, acc) in accums.iter().enumerate() {
        let range = problem.row_range[n].clone();
        let th = DVector::from_iterator(range.len(), range.clone().map(|i| theta[i]));
        objective += 0.5 * j * (2.0 * std::f64::consts::PI * step_var[n]).ln()
            + 0.5 * acc.rss(&th) / step_var[n];
    }
    let constraint_residual = if constraints.is_empty() {
        0.0
    } else {
        (constraints.h() * &theta - constraints.g()).amax()
    };
    EstimationResult {
        theta: theta.iter().copied().collect(),
        sigma,
        lambda,
        objective,
        gram_condition: condition,
        constraint_residual,
    }
}

/// Unconstrained maximum-likelihood estimate: one weighted least-squares
/// solve per equation, with observed-row noise read from the residual of
/// the fitted drift.
pub fn mle_unconstrained(
    problem: &RegressionProblem,
    prior_noise: &[f64],
) -> Result<EstimationResult> {
    mle_constrained(problem, prior_noise, &ConstraintSet::empty(problem.n_params()))
}

/// Maximum-likelihood estimate subject to `H theta = g`.
///
/// Solves the stationarity system by eliminating theta: with `D` the
/// weighted Gram matrix and `c` the weighted moment vector,
/// `lambda = (H D^-1 H^T)^-1 (H D^-1 c - g)` and
/// `theta = D^-1 (c - H^T lambda)`.
pub fn mle_constrained(
    problem: &RegressionProblem,
    prior_noise: &[f64],
    constraints: &ConstraintSet,
) -> Result<EstimationResult> {
    let p = problem.n_params();
    if !constraints.is_empty() && constraints.n_params() != p {
        return Err(Error::Structure(
            "constraints are sized for a different parameter vector".into(),
        ));
    }
    if problem.n_samples() < 10 * p.max(1) {
        return Err(Error::Precondition(format!(
            "{} samples are too few for {} parameters",
            problem.n_samples(),
            p
        )));
    }
    let accums = accumulate(problem);
    let (mut step_var, mut sigma) = step_variances(problem, &accums, prior_noise)?;

    // The noise variances weight the drift fit while the fitted drift sets
    // the residual the variances are read from, so alternate the two
    // solves until the weights settle. Without constraints a single
    // refinement suffices because per-row weights cannot move a row's own
    // minimizer; with constraints the coupling is weak and the loop
    // contracts quickly.
    let mut theta = DVector::zeros(p);
    let mut lambda = Vec::new();
    let mut condition = 1.0;
    for _ in 0..MAX_NOISE_REFINEMENTS {
        let solver = BlockSolver::new(problem, &accums, &step_var)?;
        condition = solver.condition;

        // Weighted moment vector c.
        let mut c = DVector::zeros(p);
        for (n, acc) in accums.iter().enumerate() {
            for (k, i) in problem.row_range[n].clone().enumerate() {
                c[i] = acc.moment[k] / step_var[n];
            }
        }

        (theta, lambda) = if constraints.is_empty() {
            (solver.solve(&c), Vec::new())
        } else {
            let k = constraints.len();
            let dinv_c = solver.solve(&c);
            let mut dinv_ht = DMatrix::zeros(p, k);
            for ki in 0..k {
                let h_row = DVector::from_iterator(p, constraints.h().row(ki).iter().copied());
                dinv_ht.set_column(ki, &solver.solve(&h_row));
            }
            let a = constraints.h() * &dinv_ht;
            let rhs = constraints.h() * &dinv_c - constraints.g();
            let a_sym = 0.5 * (&a + a.transpose());
            let lam = a_sym.cholesky().map(|ch| ch.solve(&rhs)).ok_or_else(|| {
                Error::Estimation(
                    "constraint system is singular; constraints are redundant for the retained terms"
                        .into(),
                )
            })?;
            let adjusted = &c - constraints.h().transpose() * &lam;
            (solver.solve(&adjusted), lam.iter().copied().collect())
        };

        let drift = refine_variances(problem, &accums, &theta, &mut step_var, &mut sigma)?;
        if drift < NOISE_REFINEMENT_TOL {
            break;
        }
    }

    Ok(finish(
        problem,
        &accums,
        &step_var,
        sigma,
        theta,
        lambda,
        constraints,
        condition,
    ))
}

/// Builds sum-to-zero constraints for the retained members of the
/// library's declared energy-conserving quadratic pairs.
///
/// A pair with both members retained yields one row `theta_a + theta_b =
/// 0`. A pair with exactly one member retained pins that coefficient to
/// zero: its energy flux has no partner to cancel against. Fully absent
/// pairs contribute nothing. Parameters are flattened with no fixed terms,
/// matching [`assemble_regression`] called the same way.
pub fn build_energy_constraints(
    library: &TermLibrary,
    indicator: &IndicatorMatrix,
) -> Result<ConstraintSet> {
    let (params, _) = flatten_params(library, indicator, &[]);
    let index_of = |rt: (usize, usize)| params.iter().position(|&p| p == rt);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for pair in library.energy_pairs() {
        let ia = index_of(pair.a);
        let ib = index_of(pair.b);
        let label_of = |rt: (usize, usize)| {
            format!(
                "{}:{}",
                library.layout().name(rt.0),
                library.term(rt.0, rt.1).label()
            )
        };
        let entry = match (ia, ib) {
            (Some(a), Some(b)) => Some((
                vec![(a, 1.0), (b, 1.0)],
                format!("{} + {} = 0", label_of(pair.a), label_of(pair.b)),
            )),
            (Some(a), None) => Some((
                vec![(a, 1.0)],
                format!("{} = 0 (pair partner absent)", label_of(pair.a)),
            )),
            (None, Some(b)) => Some((
                vec![(b, 1.0)],
                format!("{} = 0 (pair partner absent)", label_of(pair.b)),
            )),
            (None, None) => None,
        };
        if let Some((row, label)) = entry {
            let key: Vec<usize> = row.iter().map(|&(i, _)| i).collect();
            if seen.insert(key) {
                rows.push(row);
                labels.push(label);
            }
        }
    }
    let k = rows.len();
    let mut h = DMatrix::zeros(k, params.len());
    for (ki, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            h[(ki, i)] = v;
        }
    }
    ConstraintSet::new(h, DVector::zeros(k), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        simulate, CoefficientModel, SimOptions, StateLayout, Term, TrajectorySet,
    };
    use approx::assert_relative_eq;

    /// One-variable observed model dz = theta z dt + sigma dW.
    fn scalar_model(theta: f64, sigma: f64) -> CoefficientModel {
        let layout = StateLayout::dense(&[("z", true)]).unwrap();
        let rows = vec![vec![
            Term::new(&layout, 0, &[(0, 1)]).unwrap(),
            Term::constant(),
        ]];
        let lib = TermLibrary::new(layout, rows).unwrap();
        CoefficientModel::from_labels(lib, &[vec![("z", theta)]], vec![sigma]).unwrap()
    }

    fn full_indicator(lib: &TermLibrary) -> IndicatorMatrix {
        IndicatorMatrix::new(
            (0..lib.layout().len())
                .map(|n| vec![true; lib.row(n).len()])
                .collect(),
        )
    }

    #[test]
    fn empty_structure_reduces_to_quadratic_variation() {
        let model = scalar_model(-1.0, 0.5);
        let opts = SimOptions::new(50.0, 1e-3, 7, vec![0.3]);
        let data = simulate(&model, &opts).unwrap();
        let none = IndicatorMatrix::new(vec![vec![false, false]]);
        let problem = assemble_regression(&data, model.library(), &none, &[]).unwrap();
        assert_eq!(problem.n_params(), 0);
        let res = mle_unconstrained(&problem, &[0.5]).unwrap();
        assert!(res.theta.is_empty());
        // Independent quadratic-variation oracle.
        let j = data.n_steps() - 1;
        let qv: f64 = (0..j)
            .map(|i| {
                let d = data.value(i + 1, 0) - data.value(i, 0);
                d * d
            })
            .sum();
        let sigma_oracle = (qv / (j as f64 * 1e-3)).sqrt();
        assert_relative_eq!(res.sigma[0], sigma_oracle, epsilon = 1e-12);
        assert_relative_eq!(res.sigma[0], 0.5, max_relative = 0.02);
    }

    #[test]
    fn features_and_offsets_expand_the_one_step_mean() {
        let model = scalar_model(0.7, 0.1);
        let opts = SimOptions::new(1.0, 1e-3, 9, vec![0.4]);
        let data = simulate(&model, &opts).unwrap();
        let only_z = IndicatorMatrix::new(vec![vec![true, false]]);
        let problem = assemble_regression(&data, model.library(), &only_z, &[]).unwrap();
        assert_eq!(problem.n_params(), 1);
        // Predicted mean with coefficient theta is z (1 + theta dt).
        let j = 123;
        let z = data.value(j, 0);
        let theta = 0.7;
        let predicted = problem.offset(j, 0) + theta * problem.feature(j, 0);
        assert_relative_eq!(predicted, z * (1.0 + theta * 1e-3), epsilon = 1e-14);
        // A fixed coefficient moves the same contribution into the offset.
        let fixed = [(0usize, 0usize, theta)];
        let pf = assemble_regression(&data, model.library(), &only_z, &fixed).unwrap();
        assert_eq!(pf.n_params(), 0);
        assert_relative_eq!(pf.offset(j, 0), predicted, epsilon = 1e-14);
    }

    #[test]
    fn benchmark_indicator_flattens_to_twelve_parameters() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let indicator = IndicatorMatrix::from_model(&truth)
            .with_forced_constants(truth.library());
        let opts = SimOptions::new(1.0, 1e-3, 2, vec![1.0, 0.5, -0.5]);
        let data = simulate(&truth, &opts).unwrap();
        let problem = assemble_regression(&data, truth.library(), &indicator, &[]).unwrap();
        assert_eq!(problem.n_params(), 12);
    }

    #[test]
    fn recovers_ornstein_uhlenbeck_parameters() {
        let model = scalar_model(-1.0, 0.5);
        let opts = SimOptions::new(500.0, 1e-3, 11, vec![0.0]);
        let data = simulate(&model, &opts).unwrap();
        let only_z = IndicatorMatrix::new(vec![vec![true, false]]);
        let problem = assemble_regression(&data, model.library(), &only_z, &[]).unwrap();
        let res = mle_unconstrained(&problem, &[1.0]).unwrap();
        // Independent one-regressor oracle: theta = sum z dz / (dt sum z^2).
        let j = data.n_steps() - 1;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..j {
            let z = data.value(i, 0);
            num += z * (data.value(i + 1, 0) - z);
            den += z * z;
        }
        let oracle = num / (1e-3 * den);
        assert_relative_eq!(res.theta[0], oracle, max_relative = 1e-10);
        assert_relative_eq!(res.theta[0], -1.0, max_relative = 0.05);
        assert_relative_eq!(res.sigma[0], 0.5, max_relative = 0.02);
    }

    #[test]
    fn noiseless_linear_data_is_recovered_exactly() {
        let model = scalar_model(-0.8, 0.0);
        let opts = SimOptions::new(20.0, 1e-3, 13, vec![1.0]);
        let data = simulate(&model, &opts).unwrap();
        let only_z = IndicatorMatrix::new(vec![vec![true, false]]);
        let problem = assemble_regression(&data, model.library(), &only_z, &[]).unwrap();
        let res = mle_unconstrained(&problem, &[1.0]).unwrap();
        assert_relative_eq!(res.theta[0], -0.8, epsilon = 1e-9);
        // The fitted drift explains a noiseless path completely, so the
        // residual-based amplitude collapses to rounding error.
        assert!(res.sigma[0] < 1e-6, "sigma {}", res.sigma[0]);
    }

    #[test]
    fn recovers_chaotic_benchmark_coefficients() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions {
            horizon: 500.0,
            dt: 1e-3,
            record_every: 1,
            burn_in: 10.0,
            seed: 17,
            initial: vec![1.0, 0.5, -0.5],
        };
        let data = simulate(&truth, &opts).unwrap();
        let indicator = IndicatorMatrix::from_model(&truth)
            .with_forced_constants(truth.library());
        let problem = assemble_regression(&data, truth.library(), &indicator, &[]).unwrap();
        let res = mle_unconstrained(&problem, truth.noise()).unwrap();
        for (p, &(n, m)) in problem.params().iter().enumerate() {
            let target = truth.coef(n, m).unwrap_or(0.0);
            let got = res.theta[p];
            if target.abs() < 0.25 {
                assert!(
                    (got - target).abs() < 0.01,
                    "{}: {got} vs {target}",
                    problem.param_label(p)
                );
            } else {
                assert_relative_eq!(got, target, max_relative = 0.02);
            }
        }
        // Subtracting the fitted drift leaves the pure noise increments, so
        // the observed-row amplitudes land on the generating value.
        for n in 0..3 {
            if !truth.layout().is_observed(n) {
                // Hidden rows keep the configured amplitude untouched.
                assert_eq!(res.sigma[n], truth.noise()[n]);
                continue;
            }
            assert_relative_eq!(res.sigma[n], truth.noise()[n], max_relative = 0.01);
        }
    }

    #[test]
    fn matches_explicit_normal_equations() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions::new(30.0, 1e-3, 19, vec![1.0, 0.5, -0.5]);
        let data = simulate(&truth, &opts).unwrap();
        let indicator = full_indicator(truth.library());
        let problem = assemble_regression(&data, truth.library(), &indicator, &[]).unwrap();
        let res = mle_unconstrained(&problem, truth.noise()).unwrap();
        // Per equation, build the dense design matrix through the public
        // feature/offset accessors and solve with a QR factorization.
        for n in 0..3 {
            let range = problem.row_params(n);
            let cols: Vec<usize> = range.collect();
            let j = problem.n_samples();
            let mut design = DMatrix::zeros(j, cols.len());
            let mut rhs = DVector::zeros(j);
            for step in 0..j {
                for (k, &p) in cols.iter().enumerate() {
                    design[(step, k)] = problem.feature(step, p);
                }
                rhs[step] = data.value(step + 1, n) - problem.offset(step, n);
            }
            let sol = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
            for (k, &p) in cols.iter().enumerate() {
                assert_relative_eq!(res.theta[p], sol[k], max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn satisfied_constraints_leave_the_optimum_alone() {
        // Truth theta = (2, -2) already satisfies theta_1 + theta_2 = 0.
        let layout = StateLayout::dense(&[("z1", true), ("z2", true)]).unwrap();
        let rows = vec![
            vec![
                Term::new(&layout, 0, &[(0, 1)]).unwrap(),
                Term::new(&layout, 0, &[(1, 1)]).unwrap(),
            ],
            vec![Term::new(&layout, 1, &[(1, 1)]).unwrap()],
        ];
        let lib = TermLibrary::new(layout, rows).unwrap();
        let model = CoefficientModel::from_labels(
            lib,
            &[vec![("z1", -2.0), ("z2", 2.0)], vec![("z2", -1.0)]],
            vec![0.3, 0.3],
        )
        .unwrap();
        let opts = SimOptions::new(200.0, 1e-3, 23, vec![0.5, -0.5]);
        let data = simulate(&model, &opts).unwrap();
        let indicator = full_indicator(model.library());
        let problem = assemble_regression(&data, model.library(), &indicator, &[]).unwrap();
        let free = mle_unconstrained(&problem, model.noise()).unwrap();
        let mut h = DMatrix::zeros(1, 3);
        h[(0, 0)] = 1.0;
        h[(0, 1)] = 1.0;
        // Pin the constraint at the value the free optimum already attains:
        // the constrained solve must then reproduce the free solution.
        let attained = free.theta[0] + free.theta[1];
        let cs = ConstraintSet::new(
            h.clone(),
            DVector::from_element(1, attained),
            vec!["z1+z2 pinned".into()],
        )
        .unwrap();
        let tied = mle_constrained(&problem, model.noise(), &cs).unwrap();
        assert_eq!(tied.lambda.len(), 1);
        assert!(tied.constraint_residual < 1e-10);
        for k in 0..3 {
            assert_relative_eq!(tied.theta[k], free.theta[k], epsilon = 1e-8);
        }
        // Forcing the exact sum to zero perturbs the fit only within the
        // sampling scatter of the free estimate, since the truth satisfies
        // the constraint, and it can never improve the objective.
        let zero = ConstraintSet::new(h, DVector::zeros(1), vec!["z1+z2".into()]).unwrap();
        let snapped = mle_constrained(&problem, model.noise(), &zero).unwrap();
        assert!((snapped.theta[0] + snapped.theta[1]).abs() < 1e-10);
        assert!(snapped.objective >= free.objective - 1e-6);
        for k in 0..3 {
            assert_relative_eq!(snapped.theta[k], free.theta[k], epsilon = 0.1);
        }
        assert_relative_eq!(snapped.theta[0], -2.0, max_relative = 0.05);
    }

    #[test]
    fn constrained_solution_matches_elimination_oracle() {
        // dz1 = (2 z1 - 2 z2) dt + noise with the constraint
        // theta_1 + theta_2 = 0 eliminated by substitution:
        // theta_1 = sum (f1 - f2) r / (dt sum (f1 - f2)^2).
        let layout = StateLayout::dense(&[("z1", true), ("z2", true)]).unwrap();
        let rows = vec![
            vec![
                Term::new(&layout, 0, &[(0, 1)]).unwrap(),
                Term::new(&layout, 0, &[(1, 1)]).unwrap(),
            ],
            vec![Term::new(&layout, 1, &[(1, 1)]).unwrap()],
        ];
        let lib = TermLibrary::new(layout, rows).unwrap();
        let model = CoefficientModel::from_labels(
            lib,
            &[vec![("z1", -2.0), ("z2", 2.0)], vec![("z2", -1.0)]],
            vec![0.4, 0.4],
        )
        .unwrap();
        let opts = SimOptions::new(100.0, 1e-3, 29, vec![0.2, -0.1]);
        let data = simulate(&model, &opts).unwrap();
        let indicator = full_indicator(model.library());
        let problem = assemble_regression(&data, model.library(), &indicator, &[]).unwrap();
        let mut h = DMatrix::zeros(1, 3);
        h[(0, 0)] = 1.0;
        h[(0, 1)] = 1.0;
        let cs = ConstraintSet::new(h, DVector::zeros(1), vec!["tie".into()]).unwrap();
        let res = mle_constrained(&problem, model.noise(), &cs).unwrap();

        let dt = 1e-3;
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..data.n_steps() - 1 {
            let f1 = data.value(j, 0);
            let f2 = data.value(j, 1);
            let r = data.value(j + 1, 0) - f1;
            num += (f1 - f2) * r;
            den += (f1 - f2) * (f1 - f2);
        }
        let oracle = num / (dt * den);
        assert_relative_eq!(res.theta[0], oracle, max_relative = 1e-8);
        assert_relative_eq!(res.theta[1], -oracle, max_relative = 1e-8);
        assert!(res.constraint_residual < 1e-10);
    }

    #[test]
    fn estimate_never_beats_itself_on_the_objective() {
        let model = scalar_model(-1.2, 0.6);
        let opts = SimOptions::new(60.0, 1e-3, 31, vec![0.4]);
        let data = simulate(&model, &opts).unwrap();
        let only_z = IndicatorMatrix::new(vec![vec![true, false]]);
        let problem = assemble_regression(&data, model.library(), &only_z, &[]).unwrap();
        let fit = mle_unconstrained(&problem, &[1.0]).unwrap();
        // Theta = 0 objective computed by fixing the coefficient at zero.
        let none = IndicatorMatrix::new(vec![vec![false, false]]);
        let p0 = assemble_regression(&data, model.library(), &none, &[]).unwrap();
        let base = mle_unconstrained(&p0, &[1.0]).unwrap();
        assert!(fit.objective <= base.objective);
    }

    #[test]
    fn collinear_features_are_rejected_with_advice() {
        // Duplicate the sole feature: the Gram matrix is exactly singular.
        let layout = StateLayout::dense(&[("z", true)]).unwrap();
        let rows = vec![vec![
            Term::new(&layout, 0, &[(0, 1)]).unwrap(),
            Term::new(&layout, 0, &[(0, 2)]).unwrap(),
            Term::new(&layout, 0, &[(0, 3)]).unwrap(),
        ]];
        let lib = TermLibrary::new(layout, rows).unwrap();
        let model =
            CoefficientModel::from_labels(lib, &[vec![("z", -1.0)]], vec![0.2]).unwrap();
        let opts = SimOptions::new(20.0, 1e-3, 37, vec![1.0]);
        let mut data = simulate(&model, &opts).unwrap();
        // Overwrite with a constant column: z, z^2, z^3 become collinear.
        let n = data.n_steps();
        data.replace_col(0, &vec![2.0; n], crate::dynamics::ColumnRole::Observed)
            .unwrap();
        let indicator = full_indicator(model.library());
        let problem = assemble_regression(&data, model.library(), &indicator, &[]).unwrap();
        let err = mle_unconstrained(&problem, &[1.0]).unwrap_err();
        match err {
            Error::Estimation(msg) => assert!(msg.contains("threshold"), "got: {msg}"),
            other => panic!("expected estimation error, got {other:?}"),
        }
    }

    #[test]
    fn energy_pair_constraints_follow_the_indicator() {
        let lib_model = crate::dynamics::lorenz96_guess(crate::dynamics::Lorenz96Regime::I)
            .unwrap();
        let library = lib_model.library();
        // No quadratic terms retained: empty set.
        let none = IndicatorMatrix::new(
            (0..library.layout().len())
                .map(|n| vec![false; library.row(n).len()])
                .collect(),
        );
        let cs = build_energy_constraints(library, &none).unwrap();
        assert!(cs.is_empty());

        // The initial guess retains both advection pairs per site.
        let guess_ind = IndicatorMatrix::from_model(&lib_model);
        let cs = build_energy_constraints(library, &guess_ind).unwrap();
        assert_eq!(cs.len(), 40);
        for ki in 0..cs.len() {
            let row = cs.h().row(ki);
            let nonzero: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nonzero, vec![1.0, 1.0]);
            assert_eq!(cs.g()[ki], 0.0);
        }

        let fhn = crate::dynamics::fhn_guess().unwrap();
        let cs = build_energy_constraints(fhn.library(), &IndicatorMatrix::from_model(&fhn))
            .unwrap();
        // Three advection pairs per site within the activator equations
        // plus one cross-equation pair per site.
        assert_eq!(cs.len(), 160);
        let advection_only = cs.labels().iter().filter(|l| !l.contains("v_")).count();
        assert_eq!(advection_only, 120);

        // Dropping one pair member turns its row into a pin-to-zero row.
        let mut rows = lib_model.retained_mask();
        let pair = library.energy_pairs()[0];
        rows[pair.a.0][pair.a.1] = false;
        let cs =
            build_energy_constraints(library, &IndicatorMatrix::new(rows)).unwrap();
        assert_eq!(cs.len(), 40);
        let single_rows = (0..cs.len())
            .filter(|&ki| cs.h().row(ki).iter().filter(|v| **v != 0.0).count() == 1)
            .count();
        assert_eq!(single_rows, 1);
    }

    #[test]
    fn constraint_set_rejects_rank_deficiency() {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(0, 1)] = 1.0;
        h[(1, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        assert!(matches!(
            ConstraintSet::new(h, DVector::zeros(2), vec!["a".into(), "b".into()]),
            Err(Error::Structure(_))
        ));
    }
}
