//! Descriptive statistics for trajectories: empirical densities, temporal
//! autocorrelation and layer aggregation.
//!
//! These are the summaries used to judge an identified model against the
//! system that produced the data: chaotic trajectories never match pointwise,
//! so models are compared through their stationary statistics instead.

use crate::dynamics::TrajectorySet;
use crate::error::{Error, Result};

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 100;

/// Default autocorrelation window, in time units.
pub const DEFAULT_ACF_WINDOW: f64 = 10.0;

/// Normalized histogram over equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    /// `bins + 1` ascending edges.
    bin_edges: Vec<f64>,
    /// Density per bin; integrates to one over the covered range.
    density: Vec<f64>,
}

impl EmpiricalPdf {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Bin midpoints, the natural abscissa for plotting.
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// Total integrated mass; one up to floating rounding.
    pub fn total_mass(&self) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(&self.density)
            .map(|(w, d)| d * (w[1] - w[0]))
            .sum()
    }

    /// Density at a point, zero outside the covered range.
    pub fn density_at(&self, x: f64) -> f64 {
        let lo = self.bin_edges[0];
        let hi = *self.bin_edges.last().unwrap();
        if x < lo || x > hi {
            return 0.0;
        }
        let width = (hi - lo) / self.bins() as f64;
        let k = (((x - lo) / width) as usize).min(self.bins() - 1);
        self.density[k]
    }
}

/// Equal-width normalized histogram over the sample range.
///
/// A constant series degenerates to a single unit-width bin carrying all the
/// mass, so downstream consumers still see a unit integral.
pub fn pdf(series: &[f64], bins: usize) -> Result<EmpiricalPdf> {
    if bins == 0 {
        return Err(Error::Precondition("histogram needs at least one bin".into()));
    }
    if series.len() < bins.max(1) {
        return Err(Error::Precondition(format!(
            "series of length {} is shorter than {} bins",
            series.len(),
            bins
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("series contains non-finite values".into()));
    }
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(EmpiricalPdf {
            bin_edges: vec![lo - 0.5, lo + 0.5],
            density: vec![1.0],
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in series {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let norm = series.len() as f64 * width;
    let density = counts.iter().map(|&c| c as f64 / norm).collect();
    let bin_edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
    Ok(EmpiricalPdf { bin_edges, density })
}

/// Normalized autocovariance at lags `0..=max_lag`; `acf[0] == 1`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::Precondition(format!(
            "series of length {n} cannot support lag {max_lag}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var <= 0.0 {
        return Err(Error::Precondition(
            "autocorrelation of a zero-variance series is undefined".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut acc = 0.0;
        for j in 0..n - k {
            acc += (series[j] - mean) * (series[j + k] - mean);
        }
        out.push(acc / var);
    }
    Ok(out)
}

/// Sums groups of trajectory columns into new columns.
///
/// Each mapping entry is `(output name, input column names)`; the output
/// trajectory holds the columnwise sums in the given order and keeps the
/// source sampling interval. The operation is linear in the input values.
pub fn aggregate_layer(
    traj: &TrajectorySet,
    mapping: &[(String, Vec<String>)],
) -> Result<TrajectorySet> {
    if mapping.is_empty() {
        return Err(Error::Precondition("aggregation mapping is empty".into()));
    }
    let mut groups = Vec::with_capacity(mapping.len());
    for (out, ins) in mapping {
        let mut cols = Vec::with_capacity(ins.len());
        for name in ins {
            cols.push(traj.col_index(name).ok_or_else(|| {
                Error::Structure(format!("aggregation references missing column {name}"))
            })?);
        }
        if cols.is_empty() {
            return Err(Error::Precondition(format!(
                "aggregation group {out} has no inputs"
            )));
        }
        groups.push(cols);
    }
    let steps = traj.n_steps();
    let mut values = Vec::with_capacity(steps * mapping.len());
    for j in 0..steps {
        let row = traj.row(j);
        for cols in &groups {
            values.push(cols.iter().map(|&c| row[c]).sum());
        }
    }
    let roles = groups
        .iter()
        .map(|cols| traj.roles()[cols[0]])
        .collect();
    TrajectorySet::new(
        mapping.iter().map(|(out, _)| out.clone()).collect(),
        roles,
        traj.dt(),
        values,
    )
}

/// L1 distance between the empirical densities of two sample sets, computed
/// on a shared equal-width grid spanning both ranges. Bounded by 2.
pub fn pdf_l1_distance(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins == 0 || a.is_empty() || b.is_empty() {
        return Err(Error::Precondition(
            "density distance needs non-empty samples and at least one bin".into(),
        ));
    }
    let lo = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Precondition("samples contain non-finite values".into()));
    }
    if lo == hi {
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let hist = |s: &[f64]| -> Vec<f64> {
        let mut counts = vec![0.0; bins];
        for &x in s {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1.0;
        }
        let n = s.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n * width);
        counts
    };
    let pa = hist(a);
    let pb = hist(b);
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).abs() * width)
        .sum())
}

/// Relative L2 distance of an autocorrelation curve against a reference:
/// `||a - b|| / ||b||`.
pub fn acf_rel_l2_distance(a: &[f64], reference: &[f64]) -> Result<f64> {
    if a.len() != reference.len() || a.is_empty() {
        return Err(Error::Precondition(
            "autocorrelation curves must share a non-empty lag grid".into(),
        ));
    }
    let num: f64 = a
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = reference.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Precondition(
            "reference autocorrelation curve is identically zero".into(),
        ));
    }
    Ok(num / den)
}
