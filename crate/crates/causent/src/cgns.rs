//! Conditional-Gaussian filtering, smoothing and backward sampling of the
//! hidden variables given an observed trajectory.
//!
//! For a model whose hidden variables enter every drift term at most
//! linearly, the hidden-state posterior conditioned on the observed path is
//! exactly Gaussian. The conditional mean and covariance obey closed
//! recursions: a forward filter driven by the observed increments, a
//! backward smoother, and a backward stochastic recursion that draws entire
//! hidden trajectories from the joint smoothing distribution.
//!
//! Hidden variables that never interact (directly or through a shared
//! equation) split into independent blocks. Each block is filtered,
//! smoothed and sampled separately; the covariance storage is
//! block-diagonal and blocks run in parallel.

use crate::dynamics::{CoefficientModel, ColumnRole, TrajectorySet};
use crate::error::{Error, Result};
use crate::util::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Which conditional distribution a [`GaussianPath`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// Conditioned on observations up to the current time.
    Filter,
    /// Conditioned on the full observation window.
    Smoother,
}

/// Initial condition of the forward filter pass.
///
/// The mean is broadcast to every hidden variable and the covariance starts
/// as `cov_scale` times the identity. The data assimilated over the first
/// stretch of the pass washes the choice out; downstream consumers exclude
/// the early transient anyway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterInit {
    pub mean: f64,
    pub cov_scale: f64,
}

impl Default for FilterInit {
    fn default() -> Self {
        FilterInit {
            mean: 0.0,
            cov_scale: 1.0,
        }
    }
}

/// Gaussian conditional moments of the hidden variables along a trajectory.
///
/// Means are stored per block, covariances as dense per-block matrices, so
/// the full covariance is block-diagonal by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    kind: PathKind,
    dt: f64,
    steps: usize,
    /// Hidden layout variable indices, ascending.
    hidden: Vec<usize>,
    /// Per block: positions into `hidden`.
    blocks: Vec<Vec<usize>>,
    /// Position in `hidden` -> (block, offset within block).
    locate: Vec<(usize, usize)>,
    /// Per block: `steps x d` means, row-major.
    mean: Vec<Vec<f64>>,
    /// Per block: `steps x d*d` covariances, row-major.
    cov: Vec<Vec<f64>>,
}

impl GaussianPath {
    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.steps
    }

    /// Hidden layout variable indices covered by this path, ascending.
    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden.len()
    }

    /// Mean of one hidden variable (by position in [`Self::hidden`]).
    pub fn mean_of(&self, step: usize, pos: usize) -> f64 {
        let (b, k) = self.locate[pos];
        let d = self.blocks[b].len();
        self.mean[b][step * d + k]
    }

    /// Marginal variance of one hidden variable.
    pub fn var_of(&self, step: usize, pos: usize) -> f64 {
        let (b, k) = self.locate[pos];
        let d = self.blocks[b].len();
        self.cov[b][step * d * d + k * d + k]
    }

    /// Covariance matrix of one block at one step.
    pub fn block_cov(&self, block: usize, step: usize) -> DMatrix<f64> {
        let d = self.blocks[block].len();
        DMatrix::from_row_slice(d, d, &self.cov[block][step * d * d..(step + 1) * d * d])
    }

    /// Copies the full mean row at one step, ordered like [`Self::hidden`].
    pub fn mean_row(&self, step: usize) -> Vec<f64> {
        (0..self.hidden.len())
            .map(|p| self.mean_of(step, p))
            .collect()
    }

    fn compatible_with(&self, other: &GaussianPath) -> bool {
        self.steps == other.steps && self.hidden == other.hidden && self.blocks == other.blocks
    }
}

/// One independent group of hidden variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// Hidden layout variable indices in this block, ascending.
    pub hidden: Vec<usize>,
    /// Observed equation rows coupled to the block through hidden-bearing
    /// terms, ascending.
    pub observed_rows: Vec<usize>,
}

/// Partition of the hidden variables into independent blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Block>,
}

impl BlockPartition {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Size of the largest block.
    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(|b| b.hidden.len()).max().unwrap_or(0)
    }
}

/// Groups the hidden variables into connected components of the structural
/// coupling graph.
///
/// Two hidden variables are coupled when they appear in the same equation
/// (any row whose structural terms reference both) or when one's equation
/// references the other. Structurally present zero coefficients count:
/// presence, not magnitude, defines the graph.
pub fn partition_blocks(model: &CoefficientModel) -> BlockPartition {
    let layout = model.layout();
    let hidden = layout.hidden_indices();
    if hidden.is_empty() {
        return BlockPartition { blocks: Vec::new() };
    }
    let pos_of = |var: usize| hidden.binary_search(&var).expect("hidden variable");

    // Union-find over hidden positions.
    let mut parent: Vec<usize> = (0..hidden.len()).collect();
    fn root(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (root(parent, a), root(parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };

    for (row, entries) in (0..layout.len()).map(|n| (n, model.entries(n))) {
        let mut touched: Vec<usize> = entries
            .iter()
            .filter_map(|&(m, _)| model.library().term(row, m).hidden_factor())
            .map(pos_of)
            .collect();
        if !layout.is_observed(row) {
            touched.push(pos_of(row));
        }
        for w in touched.windows(2) {
            union(&mut parent, w[0], w[1]);
        }
    }

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); hidden.len()];
    for p in 0..hidden.len() {
        let r = root(&mut parent, p);
        groups[r].push(p);
    }
    let mut blocks = Vec::new();
    for g in groups.into_iter().filter(|g| !g.is_empty()) {
        let vars: Vec<usize> = g.iter().map(|&p| hidden[p]).collect();
        let mut observed_rows = Vec::new();
        for &n in &layout.observed_indices() {
            let couples = model.entries(n).iter().any(|&(m, _)| {
                model
                    .library()
                    .term(n, m)
                    .hidden_factor()
                    .map(|h| vars.binary_search(&h).is_ok())
                    .unwrap_or(false)
            });
            if couples {
                observed_rows.push(n);
            }
        }
        blocks.push(Block {
            hidden: vars,
            observed_rows,
        });
    }
    blocks.sort_by_key(|b| b.hidden[0]);
    BlockPartition { blocks }
}

// ---------------------------------------------------------------------------
// Structural cast shared by the three passes
// ---------------------------------------------------------------------------

/// One equation row split into its hidden-free part and its hidden-bearing
/// part: `(coefficient, term index)` for the base and
/// `(coefficient, term index, block offset of the hidden factor)` for the
/// coupled terms.
struct RowSplit {
    row: usize,
    base: Vec<(f64, usize)>,
    coupled: Vec<(f64, usize, usize)>,
}

/// Everything one block needs per time step.
struct BlockCast {
    /// Hidden layout variables (size d).
    hidden: Vec<usize>,
    /// Splits of the hidden equations, in `hidden` order.
    hid: Vec<RowSplit>,
    /// Splits of the coupled observed equations.
    obs: Vec<RowSplit>,
    /// Data columns of the coupled observed equations, aligned with `obs`.
    obs_cols: Vec<usize>,
    /// `(layout variable, data column)` pairs to load into the state buffer.
    touched: Vec<(usize, usize)>,
    /// Inverse observed noise variances, aligned with `obs`.
    inv_obs_var: Vec<f64>,
    /// Hidden noise variances, in `hidden` order.
    hid_var: Vec<f64>,
}

struct Cast<'m> {
    model: &'m CoefficientModel,
    blocks: Vec<BlockCast>,
    dt: f64,
    steps: usize,
    hidden: Vec<usize>,
    /// Per block: positions into `hidden`.
    block_positions: Vec<Vec<usize>>,
}

impl<'m> Cast<'m> {
    fn new(model: &'m CoefficientModel, observed: &TrajectorySet) -> Result<Self> {
        let layout = model.layout();
        let hidden = layout.hidden_indices();
        if hidden.is_empty() {
            return Err(Error::Precondition(
                "model has no hidden variables to condition on".into(),
            ));
        }
        for &n in &layout.observed_indices() {
            if model.noise()[n] <= 0.0 {
                return Err(Error::Config(format!(
                    "observed equation {} needs positive noise for conditioning",
                    layout.name(n)
                )));
            }
        }
        let mut col_of = vec![usize::MAX; layout.len()];
        for &v in &layout.observed_indices() {
            col_of[v] = observed.col_index(layout.name(v)).ok_or_else(|| {
                Error::Precondition(format!(
                    "observed data lacks a column for {}",
                    layout.name(v)
                ))
            })?;
        }
        if observed.n_steps() < 2 {
            return Err(Error::Precondition(
                "observed data needs at least two steps".into(),
            ));
        }

        let partition = partition_blocks(model);
        let mut blocks = Vec::with_capacity(partition.len());
        let mut block_positions = Vec::with_capacity(partition.len());
        for b in partition.blocks() {
            let offset_of = |var: usize| b.hidden.binary_search(&var).expect("block member");
            let split = |row: usize| -> RowSplit {
                let mut base = Vec::new();
                let mut coupled = Vec::new();
                for &(m, v) in model.entries(row) {
                    match model.library().term(row, m).hidden_factor() {
                        None => base.push((v, m)),
                        Some(h) => coupled.push((v, m, offset_of(h))),
                    }
                }
                RowSplit { row, base, coupled }
            };
            let hid: Vec<RowSplit> = b.hidden.iter().map(|&r| split(r)).collect();
            let obs: Vec<RowSplit> = b.observed_rows.iter().map(|&r| split(r)).collect();
            let mut touched = Vec::new();
            for s in hid.iter().chain(&obs) {
                for &(_, m) in &s.base {
                    for &(v, _) in model.library().term(s.row, m).obs_factors() {
                        touched.push(v);
                    }
                }
                for &(_, m, _) in &s.coupled {
                    for &(v, _) in model.library().term(s.row, m).obs_factors() {
                        touched.push(v);
                    }
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let touched: Vec<(usize, usize)> =
                touched.into_iter().map(|v| (v, col_of[v])).collect();
            blocks.push(BlockCast {
                hidden: b.hidden.clone(),
                hid,
                obs,
                obs_cols: b.observed_rows.iter().map(|&r| col_of[r]).collect(),
                touched,
                inv_obs_var: b
                    .observed_rows
                    .iter()
                    .map(|&r| 1.0 / (model.noise()[r] * model.noise()[r]))
                    .collect(),
                hid_var: b
                    .hidden
                    .iter()
                    .map(|&r| model.noise()[r] * model.noise()[r])
                    .collect(),
            });
            block_positions.push(
                b.hidden
                    .iter()
                    .map(|&v| hidden.binary_search(&v).unwrap())
                    .collect(),
            );
        }
        Ok(Cast {
            model,
            blocks,
            dt: observed.dt(),
            steps: observed.n_steps(),
            hidden,
            block_positions,
        })
    }

    fn empty_path(&self, kind: PathKind) -> GaussianPath {
        let mut locate = vec![(0usize, 0usize); self.hidden.len()];
        for (bi, ps) in self.block_positions.iter().enumerate() {
            for (k, &p) in ps.iter().enumerate() {
                locate[p] = (bi, k);
            }
        }
        GaussianPath {
            kind,
            dt: self.dt,
            steps: self.steps,
            hidden: self.hidden.clone(),
            blocks: self.block_positions.clone(),
            locate,
            mean: Vec::new(),
            cov: Vec::new(),
        }
    }

    /// Loads the observed values a block needs at one step.
    fn load_state(&self, bc: &BlockCast, observed: &TrajectorySet, step: usize, buf: &mut [f64]) {
        let row = observed.row(step);
        for &(v, c) in &bc.touched {
            buf[v] = row[c];
        }
    }

    fn eval_base(&self, s: &RowSplit, buf: &[f64]) -> f64 {
        s.base
            .iter()
            .map(|&(v, m)| v * self.model.library().term(s.row, m).eval_observed(buf))
            .sum()
    }

    /// Writes the hidden-coupling row of one equation into `out` (length d).
    fn eval_coupling(&self, s: &RowSplit, buf: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &(v, m, q) in &s.coupled {
            out[q] += v * self.model.library().term(s.row, m).eval_observed(buf);
        }
    }
}

/// Regularized inverse scale for a covariance, tiny relative to its trace.
fn jitter(trace: f64, d: usize) -> f64 {
    1e-8 * (1.0 + trace / d as f64)
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues, after symmetrizing in place.
fn symmetrize_psd(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    if m.clone().cholesky().is_some() {
        return;
    }
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let mut rebuilt = DMatrix::zeros(d, d);
    for k in 0..d {
        let v = eig.eigenvectors.column(k);
        rebuilt.syger(vals[k], &v, &v, 1.0);
    }
    m.copy_from(&rebuilt);
}

// ---------------------------------------------------------------------------
// Forward filter
// ---------------------------------------------------------------------------

/// Runs the forward conditional-mean/covariance recursion at the data step.
///
/// Per step, with coefficients evaluated at the step's start state and the
/// observed increment `dX = X(j+1) - X(j)`:
///
/// ```text
///     mu'  = mu + dt (a0 + a1 mu) + R A1^T (B1 B1^T)^-1 [dX - (A0 + A1 mu) dt]
///     R'   = R + dt [a1 R + R a1^T + b2 b2^T - R A1^T (B1 B1^T)^-1 A1 R]
/// ```
///
/// Covariances are symmetrized and projected to PSD every step.
pub fn filter_forward(
    model: &CoefficientModel,
    observed: &TrajectorySet,
    init: FilterInit,
) -> Result<GaussianPath> {
    let cast = Cast::new(model, observed)?;
    let mut path = cast.empty_path(PathKind::Filter);
    let dt = cast.dt;
    let steps = cast.steps;

    let results: Result<Vec<(Vec<f64>, Vec<f64>)>> = cast
        .blocks
        .par_iter()
        .map(|bc| {
            let d = bc.hidden.len();
            let o = bc.obs.len();
            let mut mean = vec![0.0; steps * d];
            let mut cov = vec![0.0; steps * d * d];
            let mut buf = vec![0.0; model.layout().len()];

            if d == 1 {
                // Scalar fast path: every production block is one variable.
                let mut mu = init.mean;
                let mut r = init.cov_scale.max(0.0);
                mean[0] = mu;
                cov[0] = r;
                let mut a1c = [0.0];
                for j in 0..steps - 1 {
                    cast.load_state(bc, observed, j, &mut buf);
                    let a0 = cast.eval_base(&bc.hid[0], &buf);
                    cast.eval_coupling(&bc.hid[0], &buf, &mut a1c);
                    let a1 = a1c[0];
                    let b2 = bc.hid_var[0];
                    let mut gain_update = 0.0;
                    let mut info = 0.0;
                    for (k, s) in bc.obs.iter().enumerate() {
                        let a0n = cast.eval_base(s, &buf);
                        cast.eval_coupling(s, &buf, &mut a1c);
                        let a1n = a1c[0];
                        let dx = observed.value(j + 1, bc.obs_cols[k])
                            - observed.value(j, bc.obs_cols[k]);
                        let innov = dx - (a0n + a1n * mu) * dt;
                        gain_update += a1n * bc.inv_obs_var[k] * innov;
                        info += a1n * a1n * bc.inv_obs_var[k];
                    }
                    mu += dt * (a0 + a1 * mu) + r * gain_update;
                    r += dt * (2.0 * a1 * r + b2 - r * r * info);
                    // Check the raw update: clamping first would let a NaN
                    // masquerade as 0 (f64::max ignores NaN).
                    if !(mu.is_finite() && r.is_finite()) {
                        return Err(Error::Divergence {
                            what: "forward filter".into(),
                            step: j + 1,
                        });
                    }
                    r = r.max(0.0);
                    mean[j + 1] = mu;
                    cov[j + 1] = r;
                }
            } else {
                let mut mu = DVector::from_element(d, init.mean);
                let mut r = DMatrix::from_diagonal_element(d, d, init.cov_scale.max(0.0));
                let b2 = DMatrix::from_diagonal(&DVector::from_vec(bc.hid_var.clone()));
                mean[..d].copy_from_slice(mu.as_slice());
                cov[..d * d].copy_from_slice(r.transpose().as_slice());
                let mut crow = vec![0.0; d];
                for j in 0..steps - 1 {
                    cast.load_state(bc, observed, j, &mut buf);
                    let mut a0 = DVector::zeros(d);
                    let mut a1 = DMatrix::zeros(d, d);
                    for (i, s) in bc.hid.iter().enumerate() {
                        a0[i] = cast.eval_base(s, &buf);
                        cast.eval_coupling(s, &buf, &mut crow);
                        for q in 0..d {
                            a1[(i, q)] = crow[q];
                        }
                    }
                    let mut cap_a0 = DVector::zeros(o);
                    let mut cap_a1 = DMatrix::zeros(o, d);
                    for (k, s) in bc.obs.iter().enumerate() {
                        cap_a0[k] = cast.eval_base(s, &buf);
                        cast.eval_coupling(s, &buf, &mut crow);
                        for q in 0..d {
                            cap_a1[(k, q)] = crow[q];
                        }
                    }
                    let mut innov = DVector::zeros(o);
                    for k in 0..o {
                        let dx = observed.value(j + 1, bc.obs_cols[k])
                            - observed.value(j, bc.obs_cols[k]);
                        innov[k] = dx - (cap_a0[k] + cap_a1.row(k).transpose().dot(&mu)) * dt;
                    }
                    let binv = DMatrix::from_diagonal(&DVector::from_vec(bc.inv_obs_var.clone()));
                    let gain = &r * cap_a1.transpose() * &binv;
                    let mu_next = &mu + (&a0 + &a1 * &mu) * dt + &gain * &innov;
                    let mut r_next = &r
                        + (&a1 * &r + &r * a1.transpose() + &b2 - &gain * &cap_a1 * &r) * dt;
                    // Check before the PSD projection: its eigenvalue clamp
                    // would turn NaN into 0 and hide the divergence.
                    if mu_next.iter().any(|v| !v.is_finite())
                        || r_next.iter().any(|v| !v.is_finite())
                    {
                        return Err(Error::Divergence {
                            what: "forward filter".into(),
                            step: j + 1,
                        });
                    }
                    symmetrize_psd(&mut r_next);
                    mu = mu_next;
                    r = r_next;
                    mean[(j + 1) * d..(j + 2) * d].copy_from_slice(mu.as_slice());
                    cov[(j + 1) * d * d..(j + 2) * d * d]
                        .copy_from_slice(r.transpose().as_slice());
                }
            }
            Ok((mean, cov))
        })
        .collect();

    for (mean, cov) in results? {
        path.mean.push(mean);
        path.cov.push(cov);
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// Backward smoother
// ---------------------------------------------------------------------------

/// Runs the backward smoothing recursion from the filter's terminal state.
///
/// Per backward step, with coefficients and filter moments at the step's end
/// state (`G = b2 b2^T Rf^-1`, jitter-regularized):
///
/// ```text
///     mu_s  = mu_s' + dt [-a0 - a1 mu_s' + b2 b2^T Rf^-1 (mu_f - mu_s')]
///     R_s   = R_s' + dt [-(a1 + G) R_s' - R_s' (a1 + G)^T + b2 b2^T]
/// ```
pub fn smooth_backward(
    model: &CoefficientModel,
    observed: &TrajectorySet,
    filter: &GaussianPath,
) -> Result<GaussianPath> {
    if filter.kind() != PathKind::Filter {
        return Err(Error::Precondition(
            "smoothing needs a forward filter path".into(),
        ));
    }
    let cast = Cast::new(model, observed)?;
    let mut path = cast.empty_path(PathKind::Smoother);
    if !path.compatible_with(filter) {
        return Err(Error::Precondition(
            "filter path does not match the model/data pair".into(),
        ));
    }
    let dt = cast.dt;
    let steps = cast.steps;

    let results: Result<Vec<(Vec<f64>, Vec<f64>)>> = cast
        .blocks
        .par_iter()
        .enumerate()
        .map(|(bi, bc)| {
            let d = bc.hidden.len();
            let mut mean = vec![0.0; steps * d];
            let mut cov = vec![0.0; steps * d * d];
            let mut buf = vec![0.0; model.layout().len()];
            let fmean = &filter.mean[bi];
            let fcov = &filter.cov[bi];
            let last = steps - 1;
            mean[last * d..].copy_from_slice(&fmean[last * d..]);
            cov[last * d * d..].copy_from_slice(&fcov[last * d * d..]);

            if d == 1 {
                let b2 = bc.hid_var[0];
                let mut a1c = [0.0];
                for j in (0..last).rev() {
                    cast.load_state(bc, observed, j + 1, &mut buf);
                    let a0 = cast.eval_base(&bc.hid[0], &buf);
                    cast.eval_coupling(&bc.hid[0], &buf, &mut a1c);
                    let a1 = a1c[0];
                    let rf = fcov[j + 1];
                    let rf_inv = 1.0 / (rf + jitter(rf, 1));
                    let g = b2 * rf_inv;
                    let ms = mean[(j + 1) * d];
                    let rs = cov[(j + 1) * d * d];
                    let mu = ms + dt * (-a0 - a1 * ms + b2 * rf_inv * (fmean[j + 1] - ms));
                    let mut r = rs + dt * (-2.0 * (a1 + g) * rs + b2);
                    // Raw values first; clamping would launder NaN into 0.
                    if !(mu.is_finite() && r.is_finite()) {
                        return Err(Error::Divergence {
                            what: "backward smoother".into(),
                            step: j,
                        });
                    }
                    r = r.max(0.0);
                    mean[j] = mu;
                    cov[j] = r;
                }
            } else {
                let b2 = DMatrix::from_diagonal(&DVector::from_vec(bc.hid_var.clone()));
                let mut crow = vec![0.0; d];
                for j in (0..last).rev() {
                    cast.load_state(bc, observed, j + 1, &mut buf);
                    let mut a0 = DVector::zeros(d);
                    let mut a1 = DMatrix::zeros(d, d);
                    for (i, s) in bc.hid.iter().enumerate() {
                        a0[i] = cast.eval_base(s, &buf);
                        cast.eval_coupling(s, &buf, &mut crow);
                        for q in 0..d {
                            a1[(i, q)] = crow[q];
                        }
                    }
                    let mut rf = DMatrix::from_row_slice(
                        d,
                        d,
                        &fcov[(j + 1) * d * d..(j + 2) * d * d],
                    );
                    let eps = jitter(rf.trace(), d);
                    for i in 0..d {
                        rf[(i, i)] += eps;
                    }
                    let rf_inv = rf
                        .clone()
                        .cholesky()
                        .map(|c| c.inverse())
                        .or_else(|| rf.try_inverse())
                        .ok_or_else(|| Error::Divergence {
                            what: "filter covariance inversion".into(),
                            step: j + 1,
                        })?;
                    let g = &b2 * &rf_inv;
                    let mf = DVector::from_row_slice(&fmean[(j + 1) * d..(j + 2) * d]);
                    let ms = DVector::from_row_slice(&mean[(j + 1) * d..(j + 2) * d]);
                    let rs = DMatrix::from_row_slice(
                        d,
                        d,
                        &cov[(j + 1) * d * d..(j + 2) * d * d],
                    );
                    let ag = &a1 + &g;
                    let mu = &ms + (-&a0 - &a1 * &ms + &b2 * &rf_inv * (&mf - &ms)) * dt;
                    let mut r = &rs + (-&ag * &rs - &rs * ag.transpose() + &b2) * dt;
                    // Check before the PSD projection; see the filter note.
                    if mu.iter().any(|v| !v.is_finite()) || r.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence {
                            what: "backward smoother".into(),
                            step: j,
                        });
                    }
                    symmetrize_psd(&mut r);
                    mean[j * d..(j + 1) * d].copy_from_slice(mu.as_slice());
                    cov[j * d * d..(j + 1) * d * d].copy_from_slice(r.transpose().as_slice());
                }
            }
            Ok((mean, cov))
        })
        .collect();

    for (mean, cov) in results? {
        path.mean.push(mean);
        path.cov.push(cov);
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// Backward sampler
// ---------------------------------------------------------------------------

/// Draws one hidden trajectory from the joint smoothing distribution.
///
/// The terminal value is drawn from the smoother's terminal Gaussian; the
/// path then follows the backward stochastic recursion
///
/// ```text
///     Y = Y' + (mu_s - mu_s') - dt (a1 + G)(Y' - mu_s') + b2 sqrt(dt) z
/// ```
///
/// with fresh standard normal draws `z`. Each block consumes its own
/// deterministic RNG stream derived from the seed, so results do not depend
/// on thread scheduling. With zero hidden noise the draw collapses onto the
/// smoother mean exactly.
pub fn sample_hidden(
    model: &CoefficientModel,
    observed: &TrajectorySet,
    filter: &GaussianPath,
    smoother: &GaussianPath,
    seed: u64,
) -> Result<TrajectorySet> {
    if filter.kind() != PathKind::Filter || smoother.kind() != PathKind::Smoother {
        return Err(Error::Precondition(
            "sampling needs one filter and one smoother path".into(),
        ));
    }
    let cast = Cast::new(model, observed)?;
    let probe = cast.empty_path(PathKind::Filter);
    if !probe.compatible_with(filter) || !probe.compatible_with(smoother) {
        return Err(Error::Precondition(
            "paths do not match the model/data pair".into(),
        ));
    }
    let dt = cast.dt;
    let steps = cast.steps;
    let layout = model.layout();

    let draws: Result<Vec<Vec<f64>>> = cast
        .blocks
        .par_iter()
        .enumerate()
        .map(|(bi, bc)| {
            let d = bc.hidden.len();
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, bi as u64));
            let mut out = vec![0.0; steps * d];
            let mut buf = vec![0.0; model.layout().len()];
            let fcov = &filter.cov[bi];
            let smean = &smoother.mean[bi];
            let scov = &smoother.cov[bi];
            let last = steps - 1;

            if d == 1 {
                let b2 = bc.hid_var[0];
                let noise = (b2 * dt).sqrt();
                let zeta: f64 = rng.sample(StandardNormal);
                out[last] = smean[last] + scov[last].max(0.0).sqrt() * zeta;
                let mut a1c = [0.0];
                for j in (0..last).rev() {
                    cast.load_state(bc, observed, j + 1, &mut buf);
                    cast.eval_coupling(&bc.hid[0], &buf, &mut a1c);
                    let a1 = a1c[0];
                    let rf = fcov[j + 1];
                    let g = b2 / (rf + jitter(rf, 1));
                    let y = out[j + 1];
                    let zeta: f64 = rng.sample(StandardNormal);
                    let v = y + (smean[j] - smean[j + 1])
                        - dt * (a1 + g) * (y - smean[j + 1])
                        + noise * zeta;
                    if !v.is_finite() {
                        return Err(Error::Divergence {
                            what: "backward sampler".into(),
                            step: j,
                        });
                    }
                    out[j] = v;
                }
            } else {
                let b2 = DMatrix::from_diagonal(&DVector::from_vec(bc.hid_var.clone()));
                let noise_scale: Vec<f64> =
                    bc.hid_var.iter().map(|&v| (v * dt).sqrt()).collect();
                // Terminal draw through the Cholesky factor of the clipped
                // terminal covariance.
                let mut rterm =
                    DMatrix::from_row_slice(d, d, &scov[last * d * d..(last + 1) * d * d]);
                symmetrize_psd(&mut rterm);
                let chol = rterm.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
                    // PSD projection can still leave a zero eigenvalue;
                    // fall back to the diagonal amplitude.
                    DMatrix::from_diagonal(
                        &rterm.diagonal().map(|v: f64| v.max(0.0).sqrt()),
                    )
                });
                let z = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
                let mut y =
                    DVector::from_row_slice(&smean[last * d..(last + 1) * d]) + &chol * z;
                out[last * d..].copy_from_slice(y.as_slice());
                let mut crow = vec![0.0; d];
                for j in (0..last).rev() {
                    cast.load_state(bc, observed, j + 1, &mut buf);
                    let mut a1 = DMatrix::zeros(d, d);
                    for (i, s) in bc.hid.iter().enumerate() {
                        cast.eval_coupling(s, &buf, &mut crow);
                        for q in 0..d {
                            a1[(i, q)] = crow[q];
                        }
                    }
                    let mut rf = DMatrix::from_row_slice(
                        d,
                        d,
                        &fcov[(j + 1) * d * d..(j + 2) * d * d],
                    );
                    let eps = jitter(rf.trace(), d);
                    for i in 0..d {
                        rf[(i, i)] += eps;
                    }
                    let rf_inv = rf
                        .clone()
                        .cholesky()
                        .map(|c| c.inverse())
                        .or_else(|| rf.try_inverse())
                        .ok_or_else(|| Error::Divergence {
                            what: "filter covariance inversion".into(),
                            step: j + 1,
                        })?;
                    let g = &b2 * &rf_inv;
                    let ms_now = DVector::from_row_slice(&smean[j * d..(j + 1) * d]);
                    let ms_next = DVector::from_row_slice(&smean[(j + 1) * d..(j + 2) * d]);
                    let z = DVector::from_fn(d, |i, _| {
                        let e: f64 = rng.sample(StandardNormal);
                        noise_scale[i] * e
                    });
                    let y_next = y.clone();
                    y = &y_next + (&ms_now - &ms_next)
                        - (&a1 + &g) * (&y_next - &ms_next) * dt
                        + z;
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence {
                            what: "backward sampler".into(),
                            step: j,
                        });
                    }
                    out[j * d..(j + 1) * d].copy_from_slice(y.as_slice());
                }
            }
            Ok(out)
        })
        .collect();
    let draws = draws?;

    // Gather per-block columns into one row-major trajectory over the
    // hidden variables, ordered like the layout.
    let n_hidden = cast.hidden.len();
    let mut values = vec![0.0; steps * n_hidden];
    for (bi, bc) in cast.blocks.iter().enumerate() {
        let d = bc.hidden.len();
        for (k, &p) in cast.block_positions[bi].iter().enumerate() {
            for j in 0..steps {
                values[j * n_hidden + p] = draws[bi][j * d + k];
            }
        }
    }
    TrajectorySet::new(
        cast.hidden
            .iter()
            .map(|&v| layout.name(v).to_string())
            .collect(),
        vec![ColumnRole::Sampled; n_hidden],
        dt,
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        simulate, CoefficientModel, SimOptions, StateLayout, Term, TermLibrary,
    };
    use approx::assert_relative_eq;

    /// One observed, one hidden variable with constant linear coefficients:
    /// dx = (p0 + p1 y) dt + s1 dW, dy = (q0 + q1 y) dt + s2 dW.
    fn linear_pair(p0: f64, p1: f64, q0: f64, q1: f64, s1: f64, s2: f64) -> CoefficientModel {
        let layout = StateLayout::dense(&[("x", true), ("y", false)]).unwrap();
        let rows = vec![
            vec![
                Term::constant(),
                Term::new(&layout, 0, &[(1, 1)]).unwrap(),
            ],
            vec![
                Term::constant(),
                Term::new(&layout, 1, &[(1, 1)]).unwrap(),
            ],
        ];
        let lib = TermLibrary::new(layout, rows).unwrap();
        CoefficientModel::from_labels(
            lib,
            &[
                vec![("1", p0), ("y", p1)],
                vec![("1", q0), ("y", q1)],
            ],
            vec![s1, s2],
        )
        .unwrap()
    }

    fn observed_of(model: &CoefficientModel, horizon: f64, dt: f64, seed: u64) -> TrajectorySet {
        let opts = SimOptions::new(horizon, dt, seed, vec![0.0; model.layout().len()]);
        let full = simulate(model, &opts).unwrap();
        full.select(&["x"]).unwrap()
    }

    #[test]
    fn decoupled_hidden_reaches_stationary_variance() {
        // Hidden OU with rate 1 and noise 0.7, no feedback to x: the filter
        // variance must settle at b^2 / 2 = 0.245 regardless of the data.
        let model = linear_pair(0.0, 0.0, 0.0, -1.0, 1.0, 0.7);
        let names = vec!["x".to_string()];
        let roles = vec![ColumnRole::Observed];
        let data = TrajectorySet::new(names, roles, 1e-3, vec![0.0; 10_000]).unwrap();
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let last = f.n_steps() - 1;
        assert_relative_eq!(f.var_of(last, 0), 0.245, max_relative = 1e-6);
        // Without observation coupling the smoother adds nothing. The
        // backward pass sees the filter covariance only through its
        // regularized inverse, so allow jitter-scale slack.
        let s = smooth_backward(&model, &data, &f).unwrap();
        for j in 0..f.n_steps() {
            assert!(s.var_of(j, 0) <= f.var_of(j, 0) + 1e-6);
        }
    }

    /// Scalar transcription of the forward/backward recursions, written
    /// directly from their displayed form, with no block machinery.
    fn scalar_reference(
        model: &CoefficientModel,
        data: &TrajectorySet,
        init: FilterInit,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let dt = data.dt();
        let n = data.n_steps();
        // Coefficients for linear_pair models: x row (p0, p1), y row (q0, q1).
        let p0 = model.coef(0, 0).unwrap();
        let p1 = model.coef(0, 1).unwrap();
        let q0 = model.coef(1, 0).unwrap();
        let q1 = model.coef(1, 1).unwrap();
        let s1 = model.noise()[0];
        let s2 = model.noise()[1];
        let (mut mf, mut rf) = (vec![init.mean; n], vec![init.cov_scale; n]);
        for j in 0..n - 1 {
            let dx = data.value(j + 1, 0) - data.value(j, 0);
            let innov = dx - (p0 + p1 * mf[j]) * dt;
            mf[j + 1] = mf[j] + dt * (q0 + q1 * mf[j]) + rf[j] * p1 / (s1 * s1) * innov;
            rf[j + 1] =
                rf[j] + dt * (2.0 * q1 * rf[j] + s2 * s2 - rf[j] * rf[j] * p1 * p1 / (s1 * s1));
            rf[j + 1] = rf[j + 1].max(0.0);
        }
        let (mut ms, mut rs) = (vec![0.0; n], vec![0.0; n]);
        ms[n - 1] = mf[n - 1];
        rs[n - 1] = rf[n - 1];
        for j in (0..n - 1).rev() {
            let rinv = 1.0 / (rf[j + 1] + 1e-8 * (1.0 + rf[j + 1]));
            let g = s2 * s2 * rinv;
            ms[j] = ms[j + 1]
                + dt * (-q0 - q1 * ms[j + 1] + s2 * s2 * rinv * (mf[j + 1] - ms[j + 1]));
            rs[j] = (rs[j + 1] + dt * (-2.0 * (q1 + g) * rs[j + 1] + s2 * s2)).max(0.0);
        }
        (mf, rf, ms, rs)
    }

    #[test]
    fn matches_direct_scalar_transcription() {
        let model = linear_pair(0.3, 1.2, -0.1, -0.8, 0.4, 0.5);
        let data = observed_of(&model, 20.0, 1e-3, 42);
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();
        let (mf, rf, ms, rs) = scalar_reference(&model, &data, FilterInit::default());
        for j in (0..data.n_steps()).step_by(977) {
            assert_relative_eq!(f.mean_of(j, 0), mf[j], epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(f.var_of(j, 0), rf[j], epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(s.mean_of(j, 0), ms[j], epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(s.var_of(j, 0), rs[j], epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    /// Discrete Kalman filter and Rauch-Tung-Striebel smoother on the exact
    /// one-step linear-Gaussian data model. The continuous-form recursions
    /// differ from the exact discrete solution by one order of the step
    /// size, so agreement is asserted at that scale.
    #[test]
    fn near_exact_discrete_kalman_solution() {
        let (p0, p1, q0, q1, s1, s2) = (0.3, 1.2, -0.1, -0.8, 0.4, 0.5);
        let model = linear_pair(p0, p1, q0, q1, s1, s2);
        let dt = 1e-3;
        let data = observed_of(&model, 20.0, dt, 99);
        let n = data.n_steps();
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();

        // Exact discrete filter: y' = y + (q0 + q1 y) dt + s2 sqrt(dt) e,
        // observation dx = (p0 + p1 y) dt + s1 sqrt(dt) e.
        let phi = 1.0 + q1 * dt;
        let qv = s2 * s2 * dt;
        let rv = s1 * s1 * dt;
        let mut m = vec![0.0; n];
        let mut p = vec![1.0; n];
        for j in 0..n - 1 {
            // Update with the increment observed over [j, j+1], which
            // depends on y_j: first condition y_j on dx_j, then predict.
            let dx = data.value(j + 1, 0) - data.value(j, 0);
            let hy = p1 * dt;
            let innov = dx - (p0 * dt + hy * m[j]);
            let sgain = p[j] * hy / (hy * hy * p[j] + rv);
            let mu = m[j] + sgain * innov;
            let pu = (1.0 - sgain * hy) * p[j];
            m[j + 1] = q0 * dt + phi * mu;
            p[j + 1] = phi * phi * pu + qv;
        }
        // The filter state at j here is y_j | increments up to j-1; compare
        // marginal variances late in the pass where both are stationary.
        let last = n - 1;
        let tol = 30.0 * dt; // one-order-in-dt scheme difference
        assert_relative_eq!(f.var_of(last, 0), p[last], max_relative = tol);
        assert_relative_eq!(f.mean_of(last, 0), m[last], epsilon = 3.0 * p[last].sqrt());

        // RTS backward pass for the smoother marginals.
        let mut ms = vec![0.0; n];
        let mut ps = vec![0.0; n];
        ms[last] = m[last];
        ps[last] = p[last];
        for j in (0..last).rev() {
            // One more conditioning step to align with the prediction used
            // above.
            let dx = data.value(j + 1, 0) - data.value(j, 0);
            let hy = p1 * dt;
            let innov = dx - (p0 * dt + hy * m[j]);
            let sgain = p[j] * hy / (hy * hy * p[j] + rv);
            let mu = m[j] + sgain * innov;
            let pu = (1.0 - sgain * hy) * p[j];
            let ck = pu * phi / p[j + 1];
            ms[j] = mu + ck * (ms[j + 1] - m[j + 1]);
            ps[j] = pu + ck * ck * (ps[j + 1] - p[j + 1]);
        }
        let probes: Vec<usize> = (1000..n - 1000).step_by(1777).collect();
        for &j in &probes {
            assert_relative_eq!(s.var_of(j, 0), ps[j], max_relative = tol);
            assert!(
                (s.mean_of(j, 0) - ms[j]).abs() < tol * (ms[j].abs() + ps[j].sqrt()),
                "smoother mean at {j}: {} vs {}",
                s.mean_of(j, 0),
                ms[j]
            );
        }
        // Smoothing conditions on strictly more data than filtering.
        for &j in &probes {
            assert!(s.var_of(j, 0) <= f.var_of(j, 0) + 1e-12);
        }
    }

    #[test]
    fn smoother_terminal_equals_filter() {
        let model = linear_pair(0.0, 0.9, 0.1, -0.5, 0.3, 0.6);
        let data = observed_of(&model, 2.0, 1e-3, 5);
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();
        let last = data.n_steps() - 1;
        assert_eq!(s.mean_of(last, 0), f.mean_of(last, 0));
        assert_eq!(s.var_of(last, 0), f.var_of(last, 0));
    }

    #[test]
    fn zero_hidden_noise_collapses_draws_onto_smoother_mean() {
        let model = linear_pair(0.2, 1.0, 0.05, -0.7, 0.5, 0.0);
        let data = observed_of(&model, 1.0, 1e-3, 8);
        let init = FilterInit {
            mean: 0.0,
            cov_scale: 0.0,
        };
        let f = filter_forward(&model, &data, init).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();
        let draw = sample_hidden(&model, &data, &f, &s, 1234).unwrap();
        for j in 0..data.n_steps() {
            assert_relative_eq!(draw.value(j, 0), s.mean_of(j, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_moments_match_smoother_within_monte_carlo_error() {
        let model = linear_pair(0.3, 1.2, -0.1, -0.8, 0.4, 0.5);
        let data = observed_of(&model, 2.0, 1e-3, 77);
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();
        let n_draws = 1000usize;
        let steps = data.n_steps();
        let probes = [0usize, 500, 1000, 1500, steps - 1];
        let mut acc = vec![(0.0f64, 0.0f64); probes.len()];
        for k in 0..n_draws {
            let draw = sample_hidden(&model, &data, &f, &s, 50_000 + k as u64).unwrap();
            for (i, &j) in probes.iter().enumerate() {
                let v = draw.value(j, 0);
                acc[i].0 += v;
                acc[i].1 += v * v;
            }
        }
        for (i, &j) in probes.iter().enumerate() {
            let mean = acc[i].0 / n_draws as f64;
            let var = acc[i].1 / n_draws as f64 - mean * mean;
            let rs = s.var_of(j, 0);
            let se_mean = (rs / n_draws as f64).sqrt();
            let se_var = rs * (2.0 / (n_draws as f64 - 1.0)).sqrt();
            assert!(
                (mean - s.mean_of(j, 0)).abs() <= 3.0 * se_mean + 1e-12,
                "step {j}: ensemble mean {mean} vs {}",
                s.mean_of(j, 0)
            );
            assert!(
                (var - rs).abs() <= 3.0 * se_var + 1e-12,
                "step {j}: ensemble var {var} vs {rs}"
            );
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let model = linear_pair(0.3, 1.2, -0.1, -0.8, 0.4, 0.5);
        let data = observed_of(&model, 1.0, 1e-3, 3);
        let f = filter_forward(&model, &data, FilterInit::default()).unwrap();
        let s = smooth_backward(&model, &data, &f).unwrap();
        let a = sample_hidden(&model, &data, &f, &s, 9).unwrap();
        let b = sample_hidden(&model, &data, &f, &s, 9).unwrap();
        let c = sample_hidden(&model, &data, &f, &s, 10).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn partition_examples() {
        let l84 = crate::dynamics::lorenz84_truth().unwrap();
        let p = partition_blocks(&l84);
        assert_eq!(p.len(), 1);
        assert_eq!(p.blocks()[0].hidden, vec![0]);
        assert_eq!(p.blocks()[0].observed_rows, vec![1, 2]);

        let l96 = crate::dynamics::lorenz96_guess(crate::dynamics::Lorenz96Regime::I).unwrap();
        let p = partition_blocks(&l96);
        assert_eq!(p.len(), 20);
        assert!(p.blocks().iter().all(|b| b.hidden.len() == 1));
        assert_eq!(p.blocks()[3].hidden, vec![23]);
        assert_eq!(p.blocks()[3].observed_rows, vec![3]);

        let fhn = crate::dynamics::fhn_guess().unwrap();
        let p = partition_blocks(&fhn);
        assert_eq!(p.len(), 40);
        assert_eq!(p.max_block(), 1);

        // Fully observed model: nothing to partition.
        let btm = crate::dynamics::lorenz96_btm_guess().unwrap();
        assert!(partition_blocks(&btm).is_empty());
    }

    /// Two independent hidden variables filtered as singleton blocks must
    /// agree with the same system forced into one two-variable block by a
    /// structurally present zero coupling.
    #[test]
    fn block_equivalence_dense_vs_partitioned() {
        let layout = StateLayout::dense(&[
            ("x1", true),
            ("x2", true),
            ("y1", false),
            ("y2", false),
        ])
        .unwrap();
        let mk_rows = |layout: &StateLayout| {
            vec![
                vec![
                    Term::constant(),
                    Term::new(layout, 0, &[(2, 1)]).unwrap(),
                ],
                vec![
                    Term::constant(),
                    Term::new(layout, 1, &[(3, 1)]).unwrap(),
                ],
                vec![
                    Term::new(layout, 2, &[(2, 1)]).unwrap(),
                    Term::new(layout, 2, &[(3, 1)]).unwrap(),
                ],
                vec![Term::new(layout, 3, &[(3, 1)]).unwrap()],
            ]
        };
        let lib = TermLibrary::new(layout.clone(), mk_rows(&layout)).unwrap();
        let split = CoefficientModel::from_labels(
            lib.clone(),
            &[
                vec![("1", 0.1), ("y1", 1.0)],
                vec![("1", -0.2), ("y2", 0.8)],
                vec![("y1", -0.6)],
                vec![("y2", -0.9)],
            ],
            vec![0.4, 0.5, 0.3, 0.6],
        )
        .unwrap();
        // Same dynamics with a structural zero coupling y2 -> y1, which
        // merges the two blocks without changing any number.
        let merged = CoefficientModel::from_labels(
            lib,
            &[
                vec![("1", 0.1), ("y1", 1.0)],
                vec![("1", -0.2), ("y2", 0.8)],
                vec![("y1", -0.6), ("y2", 0.0)],
                vec![("y2", -0.9)],
            ],
            vec![0.4, 0.5, 0.3, 0.6],
        )
        .unwrap();
        assert_eq!(partition_blocks(&split).len(), 2);
        assert_eq!(partition_blocks(&merged).len(), 1);

        let opts = SimOptions::new(5.0, 1e-3, 21, vec![0.0; 4]);
        let full = simulate(&split, &opts).unwrap();
        let data = full.select(&["x1", "x2"]).unwrap();
        let fa = filter_forward(&split, &data, FilterInit::default()).unwrap();
        let fb = filter_forward(&merged, &data, FilterInit::default()).unwrap();
        let sa = smooth_backward(&split, &data, &fa).unwrap();
        let sb = smooth_backward(&merged, &data, &fb).unwrap();
        for j in (0..data.n_steps()).step_by(499) {
            for pos in 0..2 {
                assert_relative_eq!(
                    fa.mean_of(j, pos),
                    fb.mean_of(j, pos),
                    epsilon = 1e-10
                );
                assert_relative_eq!(fa.var_of(j, pos), fb.var_of(j, pos), epsilon = 1e-10);
                // The backward pass regularizes the filter covariance
                // inverse per block, and the regularization scale depends
                // on the block trace, so the smoothers agree only to
                // jitter accuracy.
                assert_relative_eq!(
                    sa.mean_of(j, pos),
                    sb.mean_of(j, pos),
                    epsilon = 1e-6,
                    max_relative = 1e-5
                );
                assert_relative_eq!(
                    sa.var_of(j, pos),
                    sb.var_of(j, pos),
                    epsilon = 1e-6,
                    max_relative = 1e-5
                );
            }
            // Off-diagonal stays zero in the merged block.
            let c = fb.block_cov(0, j);
            assert!(c[(0, 1)].abs() < 1e-12);
        }
    }

    #[test]
    fn tracks_hidden_variable_of_chaotic_benchmark() {
        let truth = crate::dynamics::lorenz84_truth().unwrap();
        let opts = SimOptions {
            horizon: 50.0,
            dt: 1e-3,
            record_every: 1,
            burn_in: 5.0,
            seed: 4242,
            initial: vec![1.0, 0.5, -0.5],
        };
        let full = simulate(&truth, &opts).unwrap();
        let data = full.select(&["y", "z"]).unwrap();
        let f = filter_forward(&truth, &data, FilterInit::default()).unwrap();
        let n = data.n_steps();
        let x_true: Vec<f64> = full.col(0);
        let mean_x = x_true.iter().sum::<f64>() / n as f64;
        let std_x = (x_true.iter().map(|v| (v - mean_x) * (v - mean_x)).sum::<f64>()
            / n as f64)
            .sqrt();
        // Skip the transient from the artificial filter initialization.
        let start = n / 10;
        let rmse = (x_true[start..]
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let e = f.mean_of(start + k, 0) - v;
                e * e
            })
            .sum::<f64>()
            / (n - start) as f64)
            .sqrt();
        assert!(
            rmse < 0.35 * std_x,
            "filter loses the hidden variable: rmse {rmse}, std {std_x}"
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = linear_pair(0.0, 1.0, 0.0, -1.0, 0.0, 0.5);
        let names = vec!["x".to_string()];
        let data = TrajectorySet::new(
            names,
            vec![ColumnRole::Observed],
            1e-3,
            vec![0.0; 100],
        )
        .unwrap();
        // Zero observed noise makes the conditioning ill-posed.
        assert!(matches!(
            filter_forward(&model, &data, FilterInit::default()),
            Err(Error::Config(_))
        ));
        // Missing observed column.
        let model = linear_pair(0.0, 1.0, 0.0, -1.0, 0.4, 0.5);
        let bad = TrajectorySet::new(
            vec!["q".to_string()],
            vec![ColumnRole::Observed],
            1e-3,
            vec![0.0; 100],
        )
        .unwrap();
        assert!(filter_forward(&model, &bad, FilterInit::default()).is_err());
        // Fully observed model has nothing to condition.
        let btm = crate::dynamics::lorenz96_btm_guess().unwrap();
        let any = TrajectorySet::new(
            vec!["u1".to_string()],
            vec![ColumnRole::Observed],
            1e-3,
            vec![0.0; 10],
        )
        .unwrap();
        assert!(filter_forward(&btm, &any, FilterInit::default()).is_err());
    }
}
