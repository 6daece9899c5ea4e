//! Causation-entropy based structure selection.
//!
//! For each candidate term of each equation, the causation entropy measures
//! the information the term carries about the equation's next value beyond
//! what the remaining candidates already provide. Under a Gaussian
//! approximation of all joint distributions it reduces to a difference of
//! log-determinants of empirical covariance matrices, which is cheap and
//! robust at the sample counts produced by long simulations.
//!
//! The Gaussian approximation deliberately ignores causal relationships
//! visible only in higher-order moments; for drift discovery this trades a
//! small amount of sensitivity for a large amount of statistical stability.
//! Entries above a user threshold define a boolean indicator of the model
//! structure; the constant term is always kept, since mean-centering the
//! samples absorbs it.

use crate::dynamics::{CoefficientModel, TermLibrary, TrajectorySet};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Cap on samples entering covariance accumulation; estimates saturate well
/// below this, so longer trajectories are strided down to it.
pub const MAX_COV_SAMPLES: usize = 200_000;

/// Default selection threshold on causation entropy (nats).
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Boolean structure of a model: one flag per library term per equation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorMatrix {
    rows: Vec<Vec<bool>>,
}

impl IndicatorMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Self {
        IndicatorMatrix { rows }
    }

    /// Structure retained by a model: true where a coefficient is present
    /// (including structurally present zeros).
    pub fn from_model(model: &CoefficientModel) -> Self {
        IndicatorMatrix {
            rows: model.retained_mask(),
        }
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn get(&self, row: usize, term: usize) -> bool {
        self.rows[row][term]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of retained terms across all rows.
    pub fn count_true(&self) -> usize {
        self.rows.iter().flatten().filter(|&&b| b).count()
    }

    /// Copy with every constant-term entry forced true, matching the
    /// convention of thresholded indicators. Needed when comparing a
    /// selected structure against a model whose constant coefficient is
    /// genuinely zero.
    pub fn with_forced_constants(&self, library: &TermLibrary) -> IndicatorMatrix {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(n, row)| {
                let constant = library.constant_index(n);
                row.iter()
                    .enumerate()
                    .map(|(m, &b)| b || Some(m) == constant)
                    .collect()
            })
            .collect();
        IndicatorMatrix::new(rows)
    }

    fn same_shape(&self, other: &IndicatorMatrix) -> bool {
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Square root of the number of mismatched entries between two indicators.
pub fn frobenius_distance(a: &IndicatorMatrix, b: &IndicatorMatrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Structure(
            "indicator matrices have different shapes".into(),
        ));
    }
    let mismatches = a
        .rows
        .iter()
        .zip(&b.rows)
        .flat_map(|(ra, rb)| ra.iter().zip(rb))
        .filter(|(x, y)| x != y)
        .count();
    Ok((mismatches as f64).sqrt())
}

/// Causation entropies of every candidate term, with the thresholded
/// indicator derived from them.
#[derive(Debug, Clone)]
pub struct CausationMatrix {
    /// Per equation row, one entry per library term. Constant-term slots
    /// hold 0 (the constant is retained unconditionally).
    values: Vec<Vec<f64>>,
    threshold: f64,
    indicator: IndicatorMatrix,
    /// Conditioning diagnostics (near-collinear feature sets).
    notes: Vec<String>,
}

impl CausationMatrix {
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value(&self, row: usize, term: usize) -> f64 {
        self.values[row][term]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn indicator(&self) -> &IndicatorMatrix {
        &self.indicator
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Rebuilds the indicator at a different threshold without recomputing
    /// any entropies.
    pub fn with_threshold(&self, library: &TermLibrary, threshold: f64) -> CausationMatrix {
        CausationMatrix {
            values: self.values.clone(),
            threshold,
            indicator: indicator_of(&self.values, library, threshold),
            notes: self.notes.clone(),
        }
    }
}

fn indicator_of(values: &[Vec<f64>], library: &TermLibrary, threshold: f64) -> IndicatorMatrix {
    let rows = values
        .iter()
        .enumerate()
        .map(|(n, vals)| {
            let constant = library.constant_index(n);
            vals.iter()
                .enumerate()
                .map(|(m, &v)| Some(m) == constant || v > threshold)
                .collect()
        })
        .collect();
    IndicatorMatrix::new(rows)
}

/// Differential entropy of a Gaussian with the given covariance, in nats.
///
/// A tiny diagonal jitter keeps the factorization stable when the
/// covariance is singular to rounding.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    let s = cov.nrows();
    if cov.ncols() != s {
        return Err(Error::Structure("covariance must be square".into()));
    }
    let scale = cov.diagonal().amax().max(1.0);
    for i in 0..s {
        for j in (i + 1)..s {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Structure("covariance must be symmetric".into()));
            }
        }
    }
    let (lndet, _) = lndet_jittered(cov)?;
    Ok(0.5 * s as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 0.5 * lndet)
}

/// Log-determinant of `cov + eps I` via Cholesky, with the conditioning
/// estimate `(max diag L / min diag L)^2`.
fn lndet_jittered(cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let s = cov.nrows();
    let mean_diag = cov.diagonal().sum() / s as f64;
    let mut eps = 1e-10 * (1.0 + mean_diag);
    for _ in 0..3 {
        let mut m = cov.clone();
        for i in 0..s {
            m[(i, i)] += eps;
        }
        if let Some(chol) = m.cholesky() {
            let l = chol.l_dirty();
            let mut lndet = 0.0;
            let mut dmin = f64::INFINITY;
            let mut dmax = 0.0f64;
            for i in 0..s {
                let d = l[(i, i)];
                lndet += 2.0 * d.ln();
                dmin = dmin.min(d);
                dmax = dmax.max(d);
            }
            let cond = (dmax / dmin) * (dmax / dmin);
            return Ok((lndet, cond));
        }
        eps *= 1e4;
    }
    Err(Error::Precondition(
        "covariance could not be factorized even after jitter".into(),
    ))
}

/// Residual variance of the target (index 0 of the joint covariance) after
/// regressing on the feature subset `keep`, with a shared ridge `eps`.
/// Also returns a conditioning estimate of the regularized feature block.
fn residual_variance(cov: &DMatrix<f64>, keep: &[usize], eps: f64) -> Result<(f64, f64)> {
    if keep.is_empty() {
        return Ok((cov[(0, 0)].max(f64::MIN_POSITIVE), 1.0));
    }
    let p = keep.len();
    let mut s = DMatrix::from_fn(p, p, |i, j| cov[(keep[i], keep[j])]);
    for i in 0..p {
        s[(i, i)] += eps;
    }
    let chol = s.cholesky().ok_or_else(|| {
        Error::Precondition("feature covariance could not be factorized".into())
    })?;
    let l = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..p {
        dmin = dmin.min(l[(i, i)]);
        dmax = dmax.max(l[(i, i)]);
    }
    let b = DVector::from_fn(p, |i, _| cov[(0, keep[i])]);
    let sol = chol.solve(&b);
    let rv = (cov[(0, 0)] - b.dot(&sol)).max(f64::MIN_POSITIVE);
    Ok((rv, (dmax / dmin) * (dmax / dmin)))
}

/// Causation entropy of feature `m` on the target, conditioned on all other
/// features.
///
/// `features` holds one sample per row and one feature per column; the
/// target pairs with the feature rows one-to-one. Samples are mean-centered
/// internally, so a constant offset in either carries no information.
///
/// The value is the four-log-determinant combination
/// `[ln det R_XY - ln det R_Y - ln det R_XYZ + ln det R_YZ] / 2`, but it is
/// evaluated through the block-determinant identity
/// `ln det R_XY - ln det R_Y = ln residvar(X | Y)` as half the log-ratio of
/// two residual variances. One shared ridge then regularizes both
/// regressions identically, so near-collinear features do not leak spurious
/// entropy. Negative results (possible in finite samples) are clipped to
/// zero.
pub fn causation_entropy(target: &[f64], features: &DMatrix<f64>, m: usize) -> Result<f64> {
    let n = target.len();
    let k = features.ncols();
    if features.nrows() != n {
        return Err(Error::Structure(
            "target and features disagree on sample count".into(),
        ));
    }
    if m >= k {
        return Err(Error::Structure("feature index out of range".into()));
    }
    if n < 10 * (k + 1).max(2) {
        return Err(Error::Precondition(format!(
            "causation entropy needs at least {} samples for {} features, got {n}",
            10 * (k + 1),
            k
        )));
    }
    let cov = joint_covariance(target, features);
    let (c, _) = entropy_terms(&cov, k, m)?;
    Ok(c)
}

/// Empirical covariance of `[target, features]`, mean-centered in two
/// passes. Index 0 is the target.
fn joint_covariance(target: &[f64], features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = target.len();
    let k = features.ncols();
    let mut d = DMatrix::zeros(n, k + 1);
    d.column_mut(0).copy_from_slice(target);
    d.columns_mut(1, k).copy_from(features);
    let means: Vec<f64> = (0..k + 1).map(|c| d.column(c).sum() / n as f64).collect();
    for c in 0..k + 1 {
        d.column_mut(c).add_scalar_mut(-means[c]);
    }
    let mut cov = DMatrix::zeros(k + 1, k + 1);
    cov.gemm_tr(1.0 / (n as f64 - 1.0), &d, &d, 0.0);
    cov
}

/// Clipped causation entropy of feature `m` given the joint covariance
/// (target at index 0), plus the worst conditioning estimate seen.
fn entropy_terms(cov: &DMatrix<f64>, k: usize, m: usize) -> Result<(f64, f64)> {
    let feats: Vec<usize> = (1..k + 1).collect();
    let eps = feature_jitter(cov, k);
    let (rv_full, c1) = residual_variance(cov, &feats, eps)?;
    let reduced: Vec<usize> = feats.iter().copied().filter(|&i| i != m + 1).collect();
    let (rv_wo, c2) = residual_variance(cov, &reduced, eps)?;
    let c = 0.5 * (rv_wo.ln() - rv_full.ln());
    Ok((c.max(0.0), c1.max(c2)))
}

/// Ridge scale for the feature block of a joint covariance.
fn feature_jitter(cov: &DMatrix<f64>, k: usize) -> f64 {
    let mean_diag = (1..k + 1).map(|i| cov[(i, i)]).sum::<f64>() / k.max(1) as f64;
    1e-10 * (1.0 + mean_diag)
}

/// Computes the causation entropy of every non-constant library term on its
/// equation's next value and thresholds the result into an indicator.
///
/// The target for row `n` is the raw value `z_n` one step ahead; features
/// are the row's candidate terms evaluated on the current full state
/// (observed and sampled-hidden columns together). Long trajectories are
/// strided down to [`MAX_COV_SAMPLES`] samples.
pub fn build_causation_matrix(
    data: &TrajectorySet,
    library: &TermLibrary,
    threshold: f64,
) -> Result<CausationMatrix> {
    if threshold <= 0.0 {
        return Err(Error::Config("threshold must be positive".into()));
    }
    let layout = library.layout();
    let mut col_of = vec![0usize; layout.len()];
    for v in 0..layout.len() {
        col_of[v] = data.col_index(layout.name(v)).ok_or_else(|| {
            Error::Precondition(format!("data lacks a column for {}", layout.name(v)))
        })?;
    }
    let usable = data.n_steps() - 1;
    let stride = usable.div_ceil(MAX_COV_SAMPLES).max(1);
    let samples: Vec<usize> = (0..usable).step_by(stride).collect();
    let n_samp = samples.len();

    let max_terms = (0..layout.len())
        .map(|n| library.row(n).len())
        .max()
        .unwrap_or(0);
    if n_samp < 10 * (max_terms + 1) {
        return Err(Error::Precondition(format!(
            "{} samples are too few for {} candidate terms",
            n_samp, max_terms
        )));
    }

    let per_row: Result<Vec<(Vec<f64>, Option<String>)>> = (0..layout.len())
        .into_par_iter()
        .map(|n| {
            let terms = library.row(n);
            let k = terms.len();
            let constant = library.constant_index(n);
            // Sample matrix: target in column 0, one column per term.
            let mut d = DMatrix::zeros(n_samp, k + 1);
            let mut state = vec![0.0; layout.len()];
            for (si, &j) in samples.iter().enumerate() {
                let row = data.row(j);
                for v in 0..layout.len() {
                    state[v] = row[col_of[v]];
                }
                d[(si, 0)] = data.value(j + 1, col_of[n]);
                for (m, t) in terms.iter().enumerate() {
                    d[(si, m + 1)] = t.eval(&state);
                }
            }
            let means: Vec<f64> = (0..k + 1)
                .map(|c| d.column(c).sum() / n_samp as f64)
                .collect();
            for c in 0..k + 1 {
                d.column_mut(c).add_scalar_mut(-means[c]);
            }
            let mut cov = DMatrix::zeros(k + 1, k + 1);
            cov.gemm_tr(1.0 / (n_samp as f64 - 1.0), &d, &d, 0.0);
            drop(d);

            let mut vals = vec![0.0; k];
            let mut worst = 1.0f64;
            for m in 0..k {
                if Some(m) == constant {
                    continue;
                }
                let (c, cond) = entropy_terms(&cov, k, m)?;
                vals[m] = c;
                worst = worst.max(cond);
            }
            let note = (worst > 1e12).then(|| {
                format!(
                    "row {}: near-collinear features (condition estimate {:.2e})",
                    layout.name(n),
                    worst
                )
            });
            Ok((vals, note))
        })
        .collect();

    let mut values = Vec::with_capacity(layout.len());
    let mut notes = Vec::new();
    for (vals, note) in per_row? {
        values.push(vals);
        notes.extend(note);
    }
    let indicator = indicator_of(&values, library, threshold);
    Ok(CausationMatrix {
        values,
        threshold,
        indicator,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, ColumnRole, SimOptions};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn normals(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn entropy_of_reference_gaussians() {
        let half = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(gaussian_entropy(&one).unwrap(), half, epsilon = 1e-8);
        let e2 = DMatrix::from_element(1, 1, std::f64::consts::E.powi(2));
        assert_relative_eq!(
            gaussian_entropy(&e2).unwrap(),
            half + 1.0,
            epsilon = 1e-8
        );
        let id2 = DMatrix::identity(2, 2);
        assert_relative_eq!(
            gaussian_entropy(&id2).unwrap(),
            2.0 * half,
            epsilon = 1e-8
        );
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            gaussian_entropy(&skew),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn bivariate_dependence_matches_closed_form() {
        // X = Z + eta with unit variances: the entropy reduction from
        // knowing Z is ln(2)/2.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let z = normals(&mut rng, n);
        let eta = normals(&mut rng, n);
        let x: Vec<f64> = z.iter().zip(&eta).map(|(a, b)| a + b).collect();
        let features = DMatrix::from_column_slice(n, 1, &z);
        let c = causation_entropy(&x, &features, 0).unwrap();
        assert_relative_eq!(c, 0.5 * 2.0f64.ln(), epsilon = 0.01);
    }

    #[test]
    fn independent_feature_scores_near_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 100_000;
        let z = normals(&mut rng, n);
        let y = normals(&mut rng, n);
        // X depends on Y only; Z is pure noise.
        let x: Vec<f64> = y
            .iter()
            .map(|v| 0.8 * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut features = DMatrix::zeros(n, 2);
        features.column_mut(0).copy_from_slice(&z);
        features.column_mut(1).copy_from_slice(&y);
        let c = causation_entropy(&x, &features, 0).unwrap();
        assert!(c < 1e-3, "independent feature scored {c}");
    }

    #[test]
    fn duplicated_feature_is_redundant() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let n = 50_000;
        let z = normals(&mut rng, n);
        let x: Vec<f64> = z
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut features = DMatrix::zeros(n, 2);
        features.column_mut(0).copy_from_slice(&z);
        features.column_mut(1).copy_from_slice(&z);
        let c = causation_entropy(&x, &features, 0).unwrap();
        assert!(c < 1e-4, "duplicated feature scored {c}");
    }

    #[test]
    fn conditioning_set_order_is_irrelevant() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let n = 20_000;
        let a = normals(&mut rng, n);
        let b = normals(&mut rng, n);
        let z = normals(&mut rng, n);
        let x: Vec<f64> = (0..n)
            .map(|i| 0.5 * a[i] - 0.3 * b[i] + 0.7 * z[i] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut f1 = DMatrix::zeros(n, 3);
        f1.column_mut(0).copy_from_slice(&z);
        f1.column_mut(1).copy_from_slice(&a);
        f1.column_mut(2).copy_from_slice(&b);
        let mut f2 = DMatrix::zeros(n, 3);
        f2.column_mut(0).copy_from_slice(&z);
        f2.column_mut(1).copy_from_slice(&b);
        f2.column_mut(2).copy_from_slice(&a);
        let c1 = causation_entropy(&x, &f1, 0).unwrap();
        let c2 = causation_entropy(&x, &f2, 0).unwrap();
        assert_relative_eq!(c1, c2, epsilon = 1e-10);
    }

    #[test]
    fn entropy_grows_with_coupling_strength() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let n = 100_000;
        let z = normals(&mut rng, n);
        let w = normals(&mut rng, n);
        let mut last = -1.0;
        for beta in [0.1, 0.5, 1.0] {
            let x: Vec<f64> = (0..n)
                .map(|i| beta * z[i] + 0.4 * w[i] + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut features = DMatrix::zeros(n, 2);
            features.column_mut(0).copy_from_slice(&z);
            features.column_mut(1).copy_from_slice(&w);
            let c = causation_entropy(&x, &features, 0).unwrap();
            assert!(c > last, "entropy not monotone at beta {beta}: {c} <= {last}");
            last = c;
        }
    }

    #[test]
    fn sample_count_preconditions() {
        let target = vec![0.0; 15];
        let features = DMatrix::zeros(15, 2);
        assert!(matches!(
            causation_entropy(&target, &features, 0),
            Err(Error::Precondition(_))
        ));
        let features = DMatrix::zeros(10, 2);
        assert!(matches!(
            causation_entropy(&vec![0.0; 12], &features, 0),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn recovers_chaotic_benchmark_structure_from_full_data() {
        // With every variable present in the data, thresholding the
        // causation entropies of the three-variable chaotic benchmark must
        // reproduce its structure exactly.
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions {
            horizon: 500.0,
            dt: 1e-3,
            record_every: 1,
            burn_in: 10.0,
            seed: 31,
            initial: vec![1.0, 0.5, -0.5],
        };
        let data = simulate(&truth, &opts).unwrap();
        let cm =
            build_causation_matrix(&data, truth.library(), DEFAULT_THRESHOLD).unwrap();
        let found = cm.indicator();
        // The constant is retained unconditionally, so force it onto the
        // reference too (one equation genuinely lacks it).
        let expected = IndicatorMatrix::from_model(&truth).with_forced_constants(truth.library());
        assert_eq!(
            frobenius_distance(found, &expected).unwrap(),
            0.0,
            "selected structure differs; entropies: {:?}",
            cm.values()
        );
    }

    #[test]
    fn residual_form_equals_log_determinant_form() {
        // On a well-conditioned problem the residual-variance evaluation
        // must agree with the literal four-log-determinant combination.
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let n = 20_000;
        let a = normals(&mut rng, n);
        let b = normals(&mut rng, n);
        let z = normals(&mut rng, n);
        let x: Vec<f64> = (0..n)
            .map(|i| 0.6 * a[i] + 0.3 * z[i] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut features = DMatrix::zeros(n, 3);
        features.column_mut(0).copy_from_slice(&z);
        features.column_mut(1).copy_from_slice(&a);
        features.column_mut(2).copy_from_slice(&b);
        let produced = causation_entropy(&x, &features, 0).unwrap();

        let cov = joint_covariance(&x, &features);
        let lndet = |keep: &[usize]| -> f64 {
            let sub =
                DMatrix::from_fn(keep.len(), keep.len(), |i, j| cov[(keep[i], keep[j])]);
            sub.cholesky()
                .unwrap()
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| 2.0 * d.ln())
                .sum()
        };
        let literal = 0.5
            * (lndet(&[0, 2, 3]) - lndet(&[2, 3]) - lndet(&[0, 1, 2, 3]) + lndet(&[1, 2, 3]));
        assert_relative_eq!(produced, literal, epsilon = 1e-8);
    }

    #[test]
    fn noise_target_selects_nothing() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions::new(40.0, 1e-3, 37, vec![1.0, 0.5, -0.5]);
        let mut data = simulate(&truth, &opts).unwrap();
        // Replace one column with i.i.d. noise: nothing predicts it.
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let n = data.n_steps();
        let col = data.col_index("x").unwrap();
        data.replace_col(col, &normals(&mut rng, n), ColumnRole::Observed)
            .unwrap();
        let cm = build_causation_matrix(&data, truth.library(), DEFAULT_THRESHOLD).unwrap();
        let constant = truth.library().constant_index(0);
        for (m, &v) in cm.values()[0].iter().enumerate() {
            if Some(m) == constant {
                continue;
            }
            assert!(
                v < DEFAULT_THRESHOLD,
                "term {m} scored {v} on a noise target"
            );
        }
    }

    #[test]
    fn threshold_only_removes_terms_as_it_rises() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions::new(60.0, 1e-3, 43, vec![1.0, 0.5, -0.5]);
        let data = simulate(&truth, &opts).unwrap();
        let low = build_causation_matrix(&data, truth.library(), 1e-5).unwrap();
        let high = low.with_threshold(truth.library(), 1e-2);
        for (rl, rh) in low.indicator().rows().iter().zip(high.indicator().rows()) {
            for (a, b) in rl.iter().zip(rh) {
                assert!(*a || !*b, "raising the threshold added a term");
            }
        }
        assert!(high.indicator().count_true() <= low.indicator().count_true());
    }
}
