//! State layouts, term libraries, coefficient models and trajectories.
//!
//! A model is a sparse linear combination of monomial terms per state
//! equation, plus a diagonal noise amplitude per equation:
//!
//! ```text
//!     dz_n/dt = sum_m  xi[n][m] * f_m(z)  +  noise[n] * dW_n
//! ```
//!
//! Layouts tag each variable as observed or hidden. Libraries attached to a
//! layout with hidden variables must be conditionally linear: no candidate
//! term may carry hidden degree above one. That restriction is what makes the
//! hidden-state posterior Gaussian and the whole learning loop closed-form.
//! Ring layouts (single or two-layer) get periodic index resolution so stencil
//! term patterns can be instantiated at every site.

mod catalog;
mod label;
mod simulate;

pub use catalog::{
    fhn_guess, fhn_library, fhn_library_custom, fhn_truth, lorenz84_guess, lorenz84_library,
    lorenz84_truth, lorenz96_btm_guess, lorenz96_btm_library, lorenz96_guess, lorenz96_library,
    lorenz96_library_custom, lorenz96_reduced_truth, lorenz96_truth, Lorenz96Regime,
};
pub use simulate::{simulate, SimOptions};

use crate::error::{Error, Result};
use crate::util::fnv64_f64;
use serde::{Deserialize, Serialize};

/// Spatial wiring of the state variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Topology {
    /// Unstructured collection of named variables.
    Dense,
    /// One or more variable families living on a periodic ring of `sites` sites.
    Ring { sites: usize },
    /// A ring of `sites` sites where the second family has `per_site` members
    /// per site, flattened to a single periodic layer of `sites * per_site`.
    TwoLayerRing { sites: usize, per_site: usize },
}

/// Contiguous block of variables belonging to one named family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Family {
    name: String,
    start: usize,
    /// Variables per site; the family's flat ring has `sites * per_site` slots.
    per_site: usize,
}

/// Named state variables with an observed/hidden mask and a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    names: Vec<String>,
    observed: Vec<bool>,
    topology: Topology,
    families: Vec<Family>,
}

impl StateLayout {
    /// Dense layout from `(name, observed)` pairs.
    pub fn dense(vars: &[(&str, bool)]) -> Result<Self> {
        let names: Vec<String> = vars.iter().map(|(n, _)| n.to_string()).collect();
        let observed = vars.iter().map(|(_, o)| *o).collect();
        let layout = StateLayout {
            names,
            observed,
            topology: Topology::Dense,
            families: Vec::new(),
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Ring layout with one variable per site for each `(family, observed)` entry.
    ///
    /// Variables are laid out family-major with 1-based site suffixes, so
    /// `ring(3, &[("u", true), ("w", false)])` produces `u1 u2 u3 w1 w2 w3`.
    pub fn ring(sites: usize, families: &[(&str, bool)]) -> Result<Self> {
        if sites < 3 {
            return Err(Error::Structure(format!(
                "ring layout needs at least 3 sites, got {sites}"
            )));
        }
        let mut names = Vec::new();
        let mut observed = Vec::new();
        let mut fams = Vec::new();
        for (fam, obs) in families {
            fams.push(Family {
                name: fam.to_string(),
                start: names.len(),
                per_site: 1,
            });
            for i in 1..=sites {
                names.push(format!("{fam}{i}"));
                observed.push(*obs);
            }
        }
        let layout = StateLayout {
            names,
            observed,
            topology: Topology::Ring { sites },
            families: fams,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Two-layer ring: a top family with one variable per site and a layer
    /// family with `per_site` variables per site, flattened to one periodic
    /// layer (`layer(i, j + per_site) = layer(i + 1, j)`).
    pub fn two_layer_ring(
        sites: usize,
        per_site: usize,
        top: (&str, bool),
        layer: (&str, bool),
    ) -> Result<Self> {
        if sites < 3 || per_site == 0 {
            return Err(Error::Structure(format!(
                "two-layer ring needs sites >= 3 and per_site >= 1, got {sites}/{per_site}"
            )));
        }
        let mut names = Vec::new();
        let mut observed = Vec::new();
        let mut fams = Vec::new();
        fams.push(Family {
            name: top.0.to_string(),
            start: 0,
            per_site: 1,
        });
        for i in 1..=sites {
            names.push(format!("{}{}", top.0, i));
            observed.push(top.1);
        }
        fams.push(Family {
            name: layer.0.to_string(),
            start: names.len(),
            per_site,
        });
        for i in 1..=sites {
            for j in 1..=per_site {
                names.push(format!("{}{}_{}", layer.0, i, j));
                observed.push(layer.1);
            }
        }
        let layout = StateLayout {
            names,
            observed,
            topology: Topology::TwoLayerRing { sites, per_site },
            families: fams,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::Structure("layout has no variables".into()));
        }
        if self.names.len() != self.observed.len() {
            return Err(Error::Structure("layout mask length mismatch".into()));
        }
        let mut sorted = self.names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.names.len() {
            return Err(Error::Structure("duplicate variable names in layout".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, var: usize) -> &str {
        &self.names[var]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_observed(&self, var: usize) -> bool {
        self.observed[var]
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.observed[v]).collect()
    }

    pub fn hidden_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| !self.observed[v]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    pub fn n_hidden(&self) -> usize {
        self.len() - self.n_observed()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Number of ring sites, if the topology is periodic.
    pub fn sites(&self) -> Option<usize> {
        match self.topology {
            Topology::Dense => None,
            Topology::Ring { sites } | Topology::TwoLayerRing { sites, .. } => Some(sites),
        }
    }

    /// Family index and flat ring position of a variable, for ring layouts.
    pub(crate) fn family_of(&self, var: usize) -> Option<(usize, usize)> {
        for (fi, f) in self.families.iter().enumerate() {
            let span = self.family_ring_len(fi);
            if var >= f.start && var < f.start + span {
                return Some((fi, var - f.start));
            }
        }
        None
    }

    pub(crate) fn family_index(&self, name: &str) -> Option<usize> {
        self.families.iter().position(|f| f.name == name)
    }

    /// Variable indices grouped by family, in declaration order. Dense
    /// layouts have no families and return one unnamed group covering all
    /// variables.
    pub fn family_groups(&self) -> Vec<(String, Vec<usize>)> {
        if self.families.is_empty() {
            return vec![(String::new(), (0..self.names.len()).collect())];
        }
        self.families
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let span = self.family_ring_len(fi);
                (f.name.clone(), (f.start..f.start + span).collect())
            })
            .collect()
    }

    pub(crate) fn family_name(&self, fi: usize) -> &str {
        &self.families[fi].name
    }

    pub(crate) fn family_ring_len(&self, fi: usize) -> usize {
        let sites = self.sites().unwrap_or(0);
        sites * self.families[fi].per_site
    }

    /// Variable at `flat + offset` on family `fi`'s ring, with wraparound.
    pub(crate) fn family_var(&self, fi: usize, flat: usize, offset: i64) -> usize {
        let len = self.family_ring_len(fi) as i64;
        let pos = (flat as i64 + offset).rem_euclid(len) as usize;
        self.families[fi].start + pos
    }

    /// Anchor position on family `target`'s flat ring for a row variable.
    ///
    /// Rows reference same-site variables of other families through offset 0;
    /// families with more members per site anchor at the first member of the
    /// row's site.
    pub(crate) fn anchor(&self, row: usize, target: usize) -> Option<usize> {
        let (rf, rflat) = self.family_of(row)?;
        let site = rflat / self.families[rf].per_site;
        Some(site * self.families[target].per_site)
    }
}

/// One candidate drift term: a monomial in observed variables times an
/// optional single hidden factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    /// `(variable, exponent)` for observed factors, sorted by variable index.
    obs_factors: Vec<(usize, u32)>,
    /// At most one hidden variable, always to the first power.
    hidden_factor: Option<usize>,
    /// Canonical display label, offset-form on ring layouts.
    label: String,
}

impl Term {
    /// Builds a term for an equation row from raw `(variable, exponent)` factors.
    ///
    /// Degrees of repeated variables are merged. Terms with total hidden
    /// degree above one are rejected: they would break the conditional
    /// linearity the filter relies on.
    pub fn new(layout: &StateLayout, row: usize, factors: &[(usize, u32)]) -> Result<Self> {
        let mut merged: Vec<(usize, u32)> = Vec::new();
        for &(v, e) in factors {
            if v >= layout.len() {
                return Err(Error::Structure(format!(
                    "term references variable {v} outside layout of size {}",
                    layout.len()
                )));
            }
            if e == 0 {
                continue;
            }
            match merged.iter_mut().find(|(mv, _)| *mv == v) {
                Some((_, me)) => *me += e,
                None => merged.push((v, e)),
            }
        }
        merged.sort_by_key(|&(v, _)| v);
        let mut obs_factors = Vec::new();
        let mut hidden_factor = None;
        for (v, e) in merged {
            if layout.is_observed(v) {
                obs_factors.push((v, e));
            } else if hidden_factor.is_none() && e == 1 {
                hidden_factor = Some(v);
            } else {
                return Err(Error::Structure(format!(
                    "term has hidden degree above 1 (variable {})",
                    layout.name(v)
                )));
            }
        }
        let label = label::format_term(layout, row, &obs_factors, hidden_factor);
        Ok(Term {
            obs_factors,
            hidden_factor,
            label,
        })
    }

    /// The constant term `1`.
    pub fn constant() -> Self {
        Term {
            obs_factors: Vec::new(),
            hidden_factor: None,
            label: "1".into(),
        }
    }

    /// Parses a canonical label (`"x*y^2"`, `"u_{i-1}*u_i"`, `"w_i"`, `"1"`)
    /// in the context of an equation row.
    pub fn parse(layout: &StateLayout, row: usize, text: &str) -> Result<Self> {
        let factors = label::parse_term(layout, row, text)?;
        Term::new(layout, row, &factors)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_constant(&self) -> bool {
        self.obs_factors.is_empty() && self.hidden_factor.is_none()
    }

    pub fn hidden_factor(&self) -> Option<usize> {
        self.hidden_factor
    }

    pub fn obs_factors(&self) -> &[(usize, u32)] {
        &self.obs_factors
    }

    /// Total polynomial degree.
    pub fn degree(&self) -> u32 {
        let obs: u32 = self.obs_factors.iter().map(|&(_, e)| e).sum();
        obs + u32::from(self.hidden_factor.is_some())
    }

    /// Structural equality ignoring the display label.
    pub fn same_monomial(&self, other: &Term) -> bool {
        self.obs_factors == other.obs_factors && self.hidden_factor == other.hidden_factor
    }

    /// Evaluates the full term on a state row covering every layout variable.
    #[inline]
    pub fn eval(&self, state: &[f64]) -> f64 {
        let mut p = self.eval_observed(state);
        if let Some(h) = self.hidden_factor {
            p *= state[h];
        }
        p
    }

    /// Evaluates only the observed monomial part on a state row.
    #[inline]
    pub fn eval_observed(&self, state: &[f64]) -> f64 {
        let mut p = 1.0;
        for &(v, e) in &self.obs_factors {
            let x = state[v];
            for _ in 0..e {
                p *= x;
            }
        }
        p
    }
}

/// Energy-conserving pair of library entries, addressed as `(row, term index)`.
///
/// The conservation condition enforced at estimation time is that the two
/// coefficients sum to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyPair {
    pub a: (usize, usize),
    pub b: (usize, usize),
}

/// Candidate terms per equation row, plus declared energy pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TermLibrary {
    layout: StateLayout,
    rows: Vec<Vec<Term>>,
    energy_pairs: Vec<EnergyPair>,
}

impl TermLibrary {
    pub fn new(layout: StateLayout, rows: Vec<Vec<Term>>) -> Result<Self> {
        if rows.len() != layout.len() {
            return Err(Error::Structure(format!(
                "library has {} rows for a layout of {} variables",
                rows.len(),
                layout.len()
            )));
        }
        for (n, row) in rows.iter().enumerate() {
            for (m, term) in row.iter().enumerate() {
                if row[..m].iter().any(|t| t.same_monomial(term)) {
                    return Err(Error::Structure(format!(
                        "duplicate term {} in library row {}",
                        term.label(),
                        layout.name(n)
                    )));
                }
            }
        }
        Ok(TermLibrary {
            layout,
            rows,
            energy_pairs: Vec::new(),
        })
    }

    /// Attaches declared energy pairs, validating the indices.
    pub fn with_energy_pairs(mut self, pairs: Vec<EnergyPair>) -> Result<Self> {
        for p in &pairs {
            for (row, term) in [p.a, p.b] {
                if row >= self.rows.len() || term >= self.rows[row].len() {
                    return Err(Error::Structure(format!(
                        "energy pair references ({row}, {term}) outside the library"
                    )));
                }
            }
        }
        self.energy_pairs = pairs;
        Ok(self)
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn rows(&self) -> &[Vec<Term>] {
        &self.rows
    }

    pub fn row(&self, n: usize) -> &[Term] {
        &self.rows[n]
    }

    pub fn term(&self, n: usize, m: usize) -> &Term {
        &self.rows[n][m]
    }

    pub fn energy_pairs(&self) -> &[EnergyPair] {
        &self.energy_pairs
    }

    /// Index of a term in row `n` by canonical label.
    pub fn find(&self, n: usize, label: &str) -> Option<usize> {
        self.rows[n].iter().position(|t| t.label() == label)
    }

    /// Index of the constant term in row `n`, if present.
    pub fn constant_index(&self, n: usize) -> Option<usize> {
        self.rows[n].iter().position(|t| t.is_constant())
    }

    pub fn n_terms_total(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }
}

/// Sparse coefficients over a [`TermLibrary`] plus per-equation noise.
///
/// The stored entries define the model structure: an entry with value zero is
/// still a structurally present term (it occupies a column in the indicator
/// and participates in block detection), while an absent entry is excluded
/// from the model entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    library: TermLibrary,
    /// Per row: `(term index, coefficient)`, sorted by term index.
    entries: Vec<Vec<(usize, f64)>>,
    /// Diagonal noise amplitude per equation, non-negative.
    noise: Vec<f64>,
}

impl CoefficientModel {
    pub fn new(
        library: TermLibrary,
        entries: Vec<Vec<(usize, f64)>>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let n = library.layout().len();
        if entries.len() != n || noise.len() != n {
            return Err(Error::Structure(
                "model entry/noise rows do not match the layout".into(),
            ));
        }
        for (row, es) in entries.iter().enumerate() {
            for (k, &(m, v)) in es.iter().enumerate() {
                if m >= library.row(row).len() {
                    return Err(Error::Structure(format!(
                        "model row {row} references term {m} outside its library row"
                    )));
                }
                if k > 0 && es[k - 1].0 >= m {
                    return Err(Error::Structure(format!(
                        "model row {row} entries not strictly sorted by term index"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::Structure(format!(
                        "non-finite coefficient in model row {row}"
                    )));
                }
            }
        }
        for (row, &s) in noise.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Structure(format!(
                    "noise amplitude for row {row} must be finite and non-negative"
                )));
            }
        }
        Ok(CoefficientModel {
            library,
            entries,
            noise,
        })
    }

    /// Builds a model by naming terms per row as `(label, coefficient)`.
    pub fn from_labels(
        library: TermLibrary,
        rows: &[Vec<(&str, f64)>],
        noise: Vec<f64>,
    ) -> Result<Self> {
        let mut entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(rows.len());
        if rows.len() != library.layout().len() {
            return Err(Error::Structure(
                "label rows do not match the layout size".into(),
            ));
        }
        for (n, row) in rows.iter().enumerate() {
            let mut es = Vec::with_capacity(row.len());
            for (lbl, v) in row {
                let m = library.find(n, lbl).ok_or_else(|| {
                    Error::Structure(format!(
                        "term {lbl} not present in library row {}",
                        library.layout().name(n)
                    ))
                })?;
                es.push((m, *v));
            }
            es.sort_by_key(|&(m, _)| m);
            for w in es.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Structure(format!(
                        "duplicate term label in model row {n}"
                    )));
                }
            }
            entries.push(es);
        }
        CoefficientModel::new(library, entries, noise)
    }

    pub fn library(&self) -> &TermLibrary {
        &self.library
    }

    pub fn layout(&self) -> &StateLayout {
        self.library.layout()
    }

    pub fn entries(&self, row: usize) -> &[(usize, f64)] {
        &self.entries[row]
    }

    pub fn coef(&self, row: usize, term: usize) -> Option<f64> {
        self.entries[row]
            .iter()
            .find(|&&(m, _)| m == term)
            .map(|&(_, v)| v)
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn set_noise(&mut self, noise: Vec<f64>) -> Result<()> {
        if noise.len() != self.noise.len() || noise.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Structure("invalid noise vector".into()));
        }
        self.noise = noise;
        Ok(())
    }

    /// Structural retention mask aligned with the library rows.
    pub fn retained_mask(&self) -> Vec<Vec<bool>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(n, es)| {
                let mut mask = vec![false; self.library.row(n).len()];
                for &(m, _) in es {
                    mask[m] = true;
                }
                mask
            })
            .collect()
    }

    /// Drift vector at a state row, written into `out`.
    pub fn drift_into(&self, state: &[f64], out: &mut [f64]) {
        for (n, es) in self.entries.iter().enumerate() {
            let mut acc = 0.0;
            for &(m, v) in es {
                acc += v * self.library.term(n, m).eval(state);
            }
            out[n] = acc;
        }
    }
}

/// Role of a trajectory column, recorded in sidecar manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// Produced by forward simulation of a model.
    Simulated,
    /// Treated as measured data.
    Observed,
    /// Drawn from the conditional hidden-state distribution.
    Sampled,
}

/// Uniformly spaced multivariate time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    names: Vec<String>,
    roles: Vec<ColumnRole>,
    dt: f64,
    n_cols: usize,
    /// Row-major `[step][column]` values, all finite.
    values: Vec<f64>,
}

impl TrajectorySet {
    pub fn new(
        names: Vec<String>,
        roles: Vec<ColumnRole>,
        dt: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n_cols = names.len();
        if n_cols == 0 || roles.len() != n_cols {
            return Err(Error::Structure(
                "trajectory needs matching non-empty names and roles".into(),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Structure("trajectory dt must be positive".into()));
        }
        if values.len() % n_cols != 0 || values.len() / n_cols < 2 {
            return Err(Error::Structure(
                "trajectory needs at least two complete rows".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structure(format!(
                "non-finite trajectory value at step {} column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(TrajectorySet {
            names,
            roles,
            dt,
            n_cols,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.n_cols
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    #[inline]
    pub fn row(&self, step: usize) -> &[f64] {
        &self.values[step * self.n_cols..(step + 1) * self.n_cols]
    }

    #[inline]
    pub fn value(&self, step: usize, col: usize) -> f64 {
        self.values[step * self.n_cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copies one column out.
    pub fn col(&self, col: usize) -> Vec<f64> {
        (0..self.n_steps()).map(|j| self.value(j, col)).collect()
    }

    /// New trajectory holding the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<TrajectorySet> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push(self.col_index(n).ok_or_else(|| {
                Error::Structure(format!("trajectory has no column named {n}"))
            })?);
        }
        let steps = self.n_steps();
        let mut values = Vec::with_capacity(steps * cols.len());
        for j in 0..steps {
            let row = self.row(j);
            for &c in &cols {
                values.push(row[c]);
            }
        }
        TrajectorySet::new(
            cols.iter().map(|&c| self.names[c].clone()).collect(),
            cols.iter().map(|&c| self.roles[c]).collect(),
            self.dt,
            values,
        )
    }

    /// Overwrites one column in place; the replacement must be finite and full length.
    pub fn replace_col(&mut self, col: usize, data: &[f64], role: ColumnRole) -> Result<()> {
        if data.len() != self.n_steps() || col >= self.n_cols {
            return Err(Error::Structure(
                "column replacement has the wrong length".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure(
                "column replacement contains non-finite values".into(),
            ));
        }
        for (j, &v) in data.iter().enumerate() {
            self.values[j * self.n_cols + col] = v;
        }
        self.roles[col] = role;
        Ok(())
    }

    /// Order-sensitive content hash over the raw IEEE-754 bits.
    pub fn checksum(&self) -> u64 {
        fnv64_f64(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l84_layout() -> StateLayout {
        StateLayout::dense(&[("x", false), ("y", true), ("z", true)]).unwrap()
    }

    #[test]
    fn dense_layout_masks() {
        let l = l84_layout();
        assert_eq!(l.len(), 3);
        assert_eq!(l.observed_indices(), vec![1, 2]);
        assert_eq!(l.hidden_indices(), vec![0]);
        assert_eq!(l.index_of("z"), Some(2));
    }

    #[test]
    fn ring_layout_names_and_wraparound() {
        let l = StateLayout::ring(20, &[("u", true), ("w", false)]).unwrap();
        assert_eq!(l.len(), 40);
        assert_eq!(l.name(0), "u1");
        assert_eq!(l.name(20), "w1");
        let (fi, flat) = l.family_of(19).unwrap();
        assert_eq!(l.family_name(fi), "u");
        assert_eq!(l.family_var(fi, flat, 2), 1); // u20 + 2 wraps to u2
        assert_eq!(l.family_var(fi, 0, -1), 19);
    }

    #[test]
    fn two_layer_ring_flattening() {
        let l = StateLayout::two_layer_ring(20, 4, ("u", true), ("v", true)).unwrap();
        assert_eq!(l.len(), 100);
        assert_eq!(l.name(20), "v1_1");
        assert_eq!(l.name(24), "v2_1");
        // v_{i, j+J} == v_{i+1, j} through the flat ring.
        let vf = l.family_index("v").unwrap();
        assert_eq!(l.family_var(vf, 0, 4), l.index_of("v2_1").unwrap());
        // u-row anchors at the first layer member of its site.
        assert_eq!(l.anchor(1, vf), Some(4));
    }

    #[test]
    fn term_merges_and_validates_hidden_degree() {
        let l = l84_layout();
        let t = Term::new(&l, 0, &[(1, 1), (1, 1)]).unwrap();
        assert_eq!(t.label(), "y^2");
        assert_eq!(t.degree(), 2);
        let t = Term::new(&l, 1, &[(0, 1), (1, 1)]).unwrap();
        assert_eq!(t.label(), "x*y");
        assert_eq!(t.hidden_factor(), Some(0));
        assert!(Term::new(&l, 0, &[(0, 2)]).is_err());
        assert!(Term::new(&l, 0, &[(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn term_eval_matches_example() {
        // Row x of the three-variable benchmark at state (x, y, z) = (0, 1, 2):
        // terms (y^2, z^2, x, 1) evaluate to (1, 4, 0, 1).
        let l = l84_layout();
        let state = [0.0, 1.0, 2.0];
        let terms = [
            Term::new(&l, 0, &[(1, 2)]).unwrap(),
            Term::new(&l, 0, &[(2, 2)]).unwrap(),
            Term::new(&l, 0, &[(0, 1)]).unwrap(),
            Term::constant(),
        ];
        let vals: Vec<f64> = terms.iter().map(|t| t.eval(&state)).collect();
        assert_eq!(vals, vec![1.0, 4.0, 0.0, 1.0]);
    }

    #[test]
    fn library_rejects_duplicates() {
        let l = l84_layout();
        let dup = vec![
            vec![
                Term::new(&l, 0, &[(1, 2)]).unwrap(),
                Term::new(&l, 0, &[(1, 1), (1, 1)]).unwrap(),
            ],
            vec![],
            vec![],
        ];
        assert!(TermLibrary::new(l, dup).is_err());
    }

    #[test]
    fn model_round_trip_accessors() {
        let l = l84_layout();
        let rows = vec![
            vec![Term::new(&l, 0, &[(1, 2)]).unwrap(), Term::constant()],
            vec![Term::constant()],
            vec![Term::constant()],
        ];
        let lib = TermLibrary::new(l, rows).unwrap();
        let m = CoefficientModel::from_labels(
            lib,
            &[
                vec![("y^2", -1.0), ("1", 2.0)],
                vec![("1", 0.0)],
                vec![("1", 0.5)],
            ],
            vec![0.1, 0.1, 0.1],
        )
        .unwrap();
        assert_eq!(m.coef(0, 1), Some(2.0));
        assert_eq!(m.coef(1, 0), Some(0.0)); // structurally present zero
        let mut out = [0.0; 3];
        m.drift_into(&[0.0, 3.0, 0.0], &mut out);
        assert_eq!(out, [-7.0, 0.0, 0.5]);
        assert_eq!(m.retained_mask()[0], vec![true, true]);
    }

    #[test]
    fn trajectory_select_and_replace() {
        let names = vec!["a".to_string(), "b".to_string()];
        let roles = vec![ColumnRole::Simulated; 2];
        let mut t =
            TrajectorySet::new(names, roles, 0.5, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.n_steps(), 3);
        assert_eq!(t.time(2), 1.0);
        let b = t.select(&["b"]).unwrap();
        assert_eq!(b.col(0), vec![2.0, 4.0, 6.0]);
        t.replace_col(0, &[9.0, 9.0, 9.0], ColumnRole::Sampled).unwrap();
        assert_eq!(t.value(1, 0), 9.0);
        assert_eq!(t.roles()[0], ColumnRole::Sampled);
        assert!(t.replace_col(0, &[1.0], ColumnRole::Sampled).is_err());
    }

    #[test]
    fn trajectory_rejects_non_finite() {
        let names = vec!["a".to_string()];
        let roles = vec![ColumnRole::Simulated];
        assert!(TrajectorySet::new(names, roles, 0.1, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn checksum_is_order_sensitive() {
        let mk = |v: Vec<f64>| {
            TrajectorySet::new(
                vec!["a".into(), "b".into()],
                vec![ColumnRole::Simulated; 2],
                1.0,
                v,
            )
            .unwrap()
        };
        assert_ne!(
            mk(vec![1.0, 2.0, 3.0, 4.0]).checksum(),
            mk(vec![2.0, 1.0, 3.0, 4.0]).checksum()
        );
    }
}
