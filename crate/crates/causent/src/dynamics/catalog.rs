//! Built-in benchmark systems: layouts, candidate libraries, reference
//! models and starting models.
//!
//! Three families are provided:
//!
//! * a three-variable chaotic circulation model with one hidden variable,
//! * a two-layer ring lattice (20 sites, 4 fast variables per site) learned
//!   through a one-variable-per-site closure of the fast layer, and
//! * a stochastically coupled excitable-medium lattice (40 sites) with the
//!   recovery variables hidden.
//!
//! Each family exposes the candidate library used for learning (with its
//! declared energy-conserving pairs), the reference model that generated the
//! data, and the deliberately wrong starting model.

use super::{CoefficientModel, EnergyPair, StateLayout, Term, TermLibrary};
use crate::error::Result;
use std::f64::consts::TAU;

/// Parameter regime of the two-layer ring lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lorenz96Regime {
    /// Strong fast-layer feedback, both layers on the same time scale.
    I,
    /// Weak fast-layer feedback with clear scale separation.
    II,
}

impl Lorenz96Regime {
    /// Coupling strength between the layers.
    pub fn h(self) -> f64 {
        match self {
            Lorenz96Regime::I => 4.0,
            Lorenz96Regime::II => 1.5,
        }
    }

    /// Noise amplitude of each fast-layer variable.
    pub fn sigma_v(self) -> f64 {
        match self {
            Lorenz96Regime::I => 1.0,
            Lorenz96Regime::II => 0.05,
        }
    }

    /// Noise amplitude of the aggregated fast layer: the sum of `J`
    /// independent fast variables carries `sqrt(J)` times their amplitude.
    pub fn sigma_w(self) -> f64 {
        (L96_J as f64).sqrt() * self.sigma_v()
    }
}

const L96_SITES: usize = 20;
const L96_J: usize = 4;
const L96_B: f64 = 2.0;
const L96_F: f64 = 4.0;
const L96_SIGMA_U: f64 = 0.05;

/// Site-dependent damping/coupling factor, 0-based site index.
fn l96_c(site: usize) -> f64 {
    2.0 + 0.7 * (TAU * (site + 1) as f64 / L96_SITES as f64).cos()
}

const FHN_SITES: usize = 40;
const FHN_EPS: f64 = 0.01;
const FHN_DELTA1: f64 = 0.2;
const FHN_DELTA2: f64 = 0.1;
const FHN_DU: f64 = 10.0;
const FHN_A: f64 = 1.05;

/// Builds one library row by parsing canonical labels in row context.
fn parse_row(layout: &StateLayout, row: usize, labels: &[&str]) -> Result<Vec<Term>> {
    labels.iter().map(|l| Term::parse(layout, row, l)).collect()
}

/// Resolves `(row, label)` pairs against a finished library.
fn find_pair(
    lib: &TermLibrary,
    a: (usize, &str),
    b: (usize, &str),
) -> EnergyPair {
    let fa = lib.find(a.0, a.1).expect("pair member missing from library");
    let fb = lib.find(b.0, b.1).expect("pair member missing from library");
    EnergyPair {
        a: (a.0, fa),
        b: (b.0, fb),
    }
}

// ---------------------------------------------------------------------------
// Three-variable circulation model
// ---------------------------------------------------------------------------

fn lorenz84_layout() -> Result<StateLayout> {
    StateLayout::dense(&[("x", false), ("y", true), ("z", true)])
}

/// All linear and quadratic monomials compatible with one hidden variable,
/// plus the conditionally linear cubics and the constant: 12 candidates,
/// identical for each of the three equations.
pub fn lorenz84_library() -> Result<TermLibrary> {
    let layout = lorenz84_layout()?;
    let labels = [
        "y", "z", "y^2", "z^2", "y*z", "x", "x*y", "x*z", "1", "x*y^2", "x*z^2", "x*y*z",
    ];
    let rows = (0..3)
        .map(|n| parse_row(&layout, n, &labels))
        .collect::<Result<Vec<_>>>()?;
    let lib = TermLibrary::new(layout, rows)?;
    let pairs = vec![
        // y^2 feeding the zonal flow against x*y feeding the wave, and the
        // same for z^2 / x*z; the third pair couples the two wave equations.
        find_pair(&lib, (0, "y^2"), (1, "x*y")),
        find_pair(&lib, (0, "z^2"), (2, "x*z")),
        find_pair(&lib, (1, "x*z"), (2, "x*y")),
    ];
    lib.with_energy_pairs(pairs)
}

/// Reference model: chaotic standard parameters, zonal flow hidden.
pub fn lorenz84_truth() -> Result<CoefficientModel> {
    let (a, b, f, g) = (0.25, 4.0, 8.0, 1.0);
    CoefficientModel::from_labels(
        lorenz84_library()?,
        &[
            vec![("y^2", -1.0), ("z^2", -1.0), ("x", -a), ("1", a * f)],
            vec![("x*z", -b), ("x*y", 1.0), ("y", -1.0), ("1", g)],
            vec![("x*y", b), ("x*z", 1.0), ("z", -1.0)],
        ],
        vec![0.1, 0.1, 0.1],
    )
}

/// Starting model: a scrambled structure sharing almost no terms with the
/// reference beyond the constants, with unit noise guesses on the observed
/// equations and the hidden noise amplitude held at its known value.
pub fn lorenz84_guess() -> Result<CoefficientModel> {
    CoefficientModel::from_labels(
        lorenz84_library()?,
        &[
            vec![
                ("y^2", 1.0),
                ("z^2", -1.0),
                ("1", 2.0),
                ("x*y^2", 1.0),
                ("x*z^2", -1.0),
            ],
            vec![
                ("y", -1.0),
                ("y^2", -2.0),
                ("z^2", 1.0),
                ("1", 1.0),
                ("x*y", -1.0),
                ("x*z", -8.0),
                ("x*y*z", -1.0),
            ],
            vec![
                ("z", -1.0),
                ("z^2", 1.0),
                ("y*z", -1.0),
                ("x*y", 8.0),
                ("x*z", 1.0),
                ("x*z^2", 1.0),
            ],
        ],
        vec![0.1, 1.0, 1.0],
    )
}

// ---------------------------------------------------------------------------
// Two-layer ring lattice
// ---------------------------------------------------------------------------

/// Full two-layer reference model on an all-observed layout.
///
/// The slow layer `u` has one variable per site and the fast layer `v` has
/// four, flattened to a single periodic ring. This model only generates
/// data; learning runs on the reduced layout where the fast layer is
/// aggregated per site.
pub fn lorenz96_truth(regime: Lorenz96Regime) -> Result<CoefficientModel> {
    let layout = StateLayout::two_layer_ring(L96_SITES, L96_J, ("u", true), ("v", true))?;
    let u_labels = [
        "u_{i-2}*u_{i-1}",
        "u_{i-1}*u_{i+1}",
        "u_i",
        "1",
        "v_i",
        "v_{i+1}",
        "v_{i+2}",
        "v_{i+3}",
    ];
    let v_labels = ["v_{i+1}*v_{i+2}", "v_{i-1}*v_{i+1}", "v_i", "u_i"];
    let mut rows = Vec::with_capacity(layout.len());
    for n in 0..layout.len() {
        let labels: &[&str] = if n < L96_SITES { &u_labels } else { &v_labels };
        rows.push(parse_row(&layout, n, labels)?);
    }
    let lib = TermLibrary::new(layout, rows)?;

    let h = regime.h();
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for site in 0..L96_SITES {
        let coupling = -h * l96_c(site) / L96_J as f64;
        entries.push(vec![
            ("u_{i-2}*u_{i-1}", -1.0),
            ("u_{i-1}*u_{i+1}", 1.0),
            ("u_i", -1.0),
            ("1", L96_F),
            ("v_i", coupling),
            ("v_{i+1}", coupling),
            ("v_{i+2}", coupling),
            ("v_{i+3}", coupling),
        ]);
    }
    for flat in 0..L96_SITES * L96_J {
        let c = l96_c(flat / L96_J);
        entries.push(vec![
            ("v_{i+1}*v_{i+2}", -L96_B * c),
            ("v_{i-1}*v_{i+1}", L96_B * c),
            ("v_i", -c),
            ("u_i", h * c / L96_J as f64),
        ]);
    }
    let mut noise = vec![L96_SIGMA_U; L96_SITES];
    noise.extend(vec![regime.sigma_v(); L96_SITES * L96_J]);
    CoefficientModel::from_labels(lib, &entries, noise)
}

fn lorenz96_reduced_layout() -> Result<StateLayout> {
    StateLayout::ring(L96_SITES, &[("u", true), ("w", false)])
}

const L96_U_LABELS: [&str; 23] = [
    "u_i",
    "u_{i-1}",
    "u_{i-2}",
    "u_{i+1}",
    "u_{i+2}",
    "u_i^2",
    "u_{i-1}^2",
    "u_{i-2}^2",
    "u_{i+1}^2",
    "u_{i+2}^2",
    "u_{i-1}*u_i",
    "u_{i-2}*u_i",
    "u_i*u_{i+1}",
    "u_i*u_{i+2}",
    "u_{i-2}*u_{i-1}",
    "u_{i-1}*u_{i+1}",
    "u_{i-1}*u_{i+2}",
    "u_{i-2}*u_{i+1}",
    "u_{i-2}*u_{i+2}",
    "u_{i+1}*u_{i+2}",
    "1",
    "w_i",
    "u_i*w_i",
];

const L96_W_LABELS: [&str; 4] = ["u_i", "u_i^2", "1", "w_i"];

/// Candidate library for the reduced two-layer lattice: per site, 23 local
/// candidates for the slow variable and 4 for its hidden closure variable.
///
/// Declared pairs per site: the two off-reference advection pairs present in
/// the starting model and the cross-layer pair coupling `u_i*w_i` to the
/// `u_i^2` forcing of the closure equation.
pub fn lorenz96_library() -> Result<TermLibrary> {
    let layout = lorenz96_reduced_layout()?;
    let mut rows = Vec::with_capacity(layout.len());
    for n in 0..layout.len() {
        let labels: &[&str] = if n < L96_SITES {
            &L96_U_LABELS
        } else {
            &L96_W_LABELS
        };
        rows.push(parse_row(&layout, n, labels)?);
    }
    let lib = TermLibrary::new(layout, rows)?;
    let mut pairs = Vec::with_capacity(3 * L96_SITES);
    for i in 0..L96_SITES {
        pairs.push(find_pair(&lib, (i, "u_{i+1}^2"), (i, "u_{i-1}*u_i")));
        pairs.push(find_pair(&lib, (i, "u_i*u_{i+1}"), (i, "u_{i-1}^2")));
        pairs.push(find_pair(&lib, (i, "u_i*w_i"), (L96_SITES + i, "u_i^2")));
    }
    lib.with_energy_pairs(pairs)
}

/// Projection of the two-layer reference onto the reduced layout: the slow
/// equations keep their exact form with the aggregated fast variable `w_i`
/// in place of the per-site sum, and the closure equation keeps the linear
/// terms of the aggregated fast layer (its unrepresentable internal
/// advection is dropped). Used as the structural reference when scoring the
/// identified reduced model.
pub fn lorenz96_reduced_truth(regime: Lorenz96Regime) -> Result<CoefficientModel> {
    let h = regime.h();
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for site in 0..L96_SITES {
        entries.push(vec![
            ("u_{i-2}*u_{i-1}", -1.0),
            ("u_{i-1}*u_{i+1}", 1.0),
            ("u_i", -1.0),
            ("1", L96_F),
            ("w_i", -h * l96_c(site) / L96_J as f64),
        ]);
    }
    for site in 0..L96_SITES {
        let c = l96_c(site);
        entries.push(vec![("u_i", h * c), ("w_i", -c)]);
    }
    let mut noise = vec![L96_SIGMA_U; L96_SITES];
    noise.extend(vec![regime.sigma_w(); L96_SITES]);
    CoefficientModel::from_labels(lorenz96_library()?, &entries, noise)
}

/// Starting model for the reduced lattice: the reference structure plus two
/// extra energy-conserving advection pairs per site, unit noise guesses on
/// the observed equations and the aggregated fast-layer amplitude held
/// fixed.
pub fn lorenz96_guess(regime: Lorenz96Regime) -> Result<CoefficientModel> {
    let h = regime.h();
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for site in 0..L96_SITES {
        entries.push(vec![
            ("u_{i-2}*u_{i-1}", -1.0),
            ("u_{i-1}*u_{i+1}", 1.0),
            ("u_{i+1}^2", 1.0),
            ("u_{i-1}*u_i", -1.0),
            ("u_i*u_{i+1}", 1.0),
            ("u_{i-1}^2", -1.0),
            ("u_i", -1.0),
            ("1", L96_F),
            ("w_i", -h * l96_c(site) / L96_J as f64),
        ]);
    }
    for site in 0..L96_SITES {
        entries.push(vec![("u_i", h * l96_c(site)), ("w_i", -1.0)]);
    }
    let mut noise = vec![1.0; L96_SITES];
    noise.extend(vec![regime.sigma_w(); L96_SITES]);
    CoefficientModel::from_labels(lorenz96_library()?, &entries, noise)
}

/// Candidate library for the bare truncation of the lattice: the slow layer
/// alone, all observed, with the same 23 local candidates per site minus the
/// two closure terms.
pub fn lorenz96_btm_library() -> Result<TermLibrary> {
    let layout = StateLayout::ring(L96_SITES, &[("u", true)])?;
    let labels: Vec<&str> = L96_U_LABELS
        .iter()
        .copied()
        .filter(|l| !l.contains('w'))
        .collect();
    let rows = (0..L96_SITES)
        .map(|n| parse_row(&layout, n, &labels))
        .collect::<Result<Vec<_>>>()?;
    let lib = TermLibrary::new(layout, rows)?;
    let mut pairs = Vec::with_capacity(2 * L96_SITES);
    for i in 0..L96_SITES {
        pairs.push(find_pair(&lib, (i, "u_{i+1}^2"), (i, "u_{i-1}*u_i")));
        pairs.push(find_pair(&lib, (i, "u_i*u_{i+1}"), (i, "u_{i-1}^2")));
    }
    lib.with_energy_pairs(pairs)
}

/// Starting model for the bare truncation: the slow equations of
/// [`lorenz96_guess`] without the closure feedback.
pub fn lorenz96_btm_guess() -> Result<CoefficientModel> {
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for _ in 0..L96_SITES {
        entries.push(vec![
            ("u_{i-2}*u_{i-1}", -1.0),
            ("u_{i-1}*u_{i+1}", 1.0),
            ("u_{i+1}^2", 1.0),
            ("u_{i-1}*u_i", -1.0),
            ("u_i*u_{i+1}", 1.0),
            ("u_{i-1}^2", -1.0),
            ("u_i", -1.0),
            ("1", L96_F),
        ]);
    }
    CoefficientModel::from_labels(lorenz96_btm_library()?, &entries, vec![1.0; L96_SITES])
}

// ---------------------------------------------------------------------------
// Coupled excitable-medium lattice
// ---------------------------------------------------------------------------

fn fhn_layout() -> Result<StateLayout> {
    StateLayout::ring(FHN_SITES, &[("u", true), ("v", false)])
}

const FHN_U_LABELS: [&str; 28] = [
    "u_i",
    "u_{i-1}",
    "u_{i-2}",
    "u_{i+1}",
    "u_{i+2}",
    "u_i^2",
    "u_{i-1}^2",
    "u_{i-2}^2",
    "u_{i+1}^2",
    "u_{i+2}^2",
    "u_{i-1}*u_i",
    "u_{i-2}*u_i",
    "u_i*u_{i+1}",
    "u_i*u_{i+2}",
    "u_{i-2}*u_{i-1}",
    "u_{i-1}*u_{i+1}",
    "u_{i-1}*u_{i+2}",
    "u_{i-2}*u_{i+1}",
    "u_{i-2}*u_{i+2}",
    "u_{i+1}*u_{i+2}",
    "u_i^3",
    "u_{i-1}^3",
    "u_{i-2}^3",
    "u_{i+1}^3",
    "u_{i+2}^3",
    "1",
    "v_i",
    "u_i*v_i",
];

const FHN_V_LABELS: [&str; 4] = ["u_i", "u_i^2", "1", "v_i"];

/// Candidate library for the excitable-medium lattice: per site, 28 local
/// candidates up to cubic order for the fast variable and 4 for its hidden
/// recovery variable.
///
/// Declared pairs per site: the three advection pairs of the starting model
/// plus the cross pair coupling `u_i*v_i` to the `u_i^2` forcing of the
/// recovery equation.
pub fn fhn_library() -> Result<TermLibrary> {
    let layout = fhn_layout()?;
    let mut rows = Vec::with_capacity(layout.len());
    for n in 0..layout.len() {
        let labels: &[&str] = if n < FHN_SITES {
            &FHN_U_LABELS
        } else {
            &FHN_V_LABELS
        };
        rows.push(parse_row(&layout, n, labels)?);
    }
    let lib = TermLibrary::new(layout, rows)?;
    let mut pairs = Vec::with_capacity(4 * FHN_SITES);
    for i in 0..FHN_SITES {
        pairs.push(find_pair(&lib, (i, "u_{i+1}^2"), (i, "u_{i-1}*u_i")));
        pairs.push(find_pair(&lib, (i, "u_i*u_{i+1}"), (i, "u_{i-1}^2")));
        pairs.push(find_pair(&lib, (i, "u_i*u_{i+2}"), (i, "u_{i-2}^2")));
        pairs.push(find_pair(&lib, (i, "u_i*v_i"), (FHN_SITES + i, "u_i^2")));
    }
    lib.with_energy_pairs(pairs)
}

/// Reference model: diffusively coupled fast excitation with slow linear
/// recovery, written in per-unit-time form (the fast equations carry the
/// time-scale ratio in their coefficients).
pub fn fhn_truth() -> Result<CoefficientModel> {
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for _ in 0..FHN_SITES {
        entries.push(vec![
            ("u_{i-1}", FHN_DU / FHN_EPS),
            ("u_{i+1}", FHN_DU / FHN_EPS),
            ("u_i", (1.0 - 2.0 * FHN_DU) / FHN_EPS),
            ("u_i^3", -1.0 / (3.0 * FHN_EPS)),
            ("v_i", -1.0 / FHN_EPS),
        ]);
    }
    for _ in 0..FHN_SITES {
        entries.push(vec![("u_i", 1.0), ("1", FHN_A)]);
    }
    let mut noise = vec![FHN_DELTA1 / FHN_EPS.sqrt(); FHN_SITES];
    noise.extend(vec![FHN_DELTA2; FHN_SITES]);
    CoefficientModel::from_labels(fhn_library()?, &entries, noise)
}

/// Starting model: weak diffusion with the wrong power in the fast
/// nonlinearity, three spurious energy-conserving advection pairs, a
/// cross-layer multiplicative coupling, and a spurious quadratic in the
/// recovery equations. Observed noise amplitudes start at one; the hidden
/// recovery noise is held fixed.
pub fn fhn_guess() -> Result<CoefficientModel> {
    let du = 0.5;
    let adv = 1.0 / FHN_EPS;
    let mut entries: Vec<Vec<(&str, f64)>> = Vec::new();
    for _ in 0..FHN_SITES {
        entries.push(vec![
            ("u_{i-1}", du / FHN_EPS),
            ("u_{i+1}", du / FHN_EPS),
            ("u_i^2", -1.0 / (3.0 * FHN_EPS)),
            ("v_i", -1.0 / FHN_EPS),
            ("u_{i+1}^2", adv),
            ("u_{i-1}*u_i", -adv),
            ("u_i*u_{i+1}", adv),
            ("u_{i-1}^2", -adv),
            ("u_i*u_{i+2}", adv),
            ("u_{i-2}^2", -adv),
            ("u_i*v_i", 1.0),
        ]);
    }
    for _ in 0..FHN_SITES {
        entries.push(vec![("u_i", 1.0), ("u_i^2", -1.0), ("1", FHN_A)]);
    }
    let mut noise = vec![1.0; FHN_SITES];
    noise.extend(vec![FHN_DELTA2; FHN_SITES]);
    CoefficientModel::from_labels(fhn_library()?, &entries, noise)
}

// ---------------------------------------------------------------------------
// Parameterized ring libraries
// ---------------------------------------------------------------------------

/// Offset-form label of a ring family member: `u_i`, `u_{i-1}`, `u_{i+2}`.
fn offset_label(family: &str, offset: isize) -> String {
    match offset.cmp(&0) {
        std::cmp::Ordering::Equal => format!("{family}_i"),
        std::cmp::Ordering::Less => format!("{family}_{{i-{}}}", -offset),
        std::cmp::Ordering::Greater => format!("{family}_{{i+{offset}}}"),
    }
}

/// Local candidate labels for an observed ring family: all monomials over
/// the stencil window up to degree two, pure higher powers up to
/// `max_degree`, the constant, and (when `hidden_feedback` is set) the
/// conditionally linear closure terms. The window runs center, negative
/// offsets by distance, then positive offsets, matching the catalog listing
/// order.
fn ring_candidate_labels(
    obs: &str,
    hidden: &str,
    stencil_radius: usize,
    max_degree: u32,
    hidden_feedback: bool,
) -> Vec<String> {
    let mut window: Vec<isize> = vec![0];
    window.extend((1..=stencil_radius as isize).map(|k| -k));
    window.extend(1..=stencil_radius as isize);

    let mut labels = Vec::new();
    for &o in &window {
        labels.push(offset_label(obs, o));
    }
    if max_degree >= 2 {
        for &o in &window {
            labels.push(format!("{}^2", offset_label(obs, o)));
        }
        for (k, &a) in window.iter().enumerate() {
            for &b in &window[k + 1..] {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                labels.push(format!(
                    "{}*{}",
                    offset_label(obs, lo),
                    offset_label(obs, hi)
                ));
            }
        }
    }
    for p in 3..=max_degree {
        for &o in &window {
            labels.push(format!("{}^{p}", offset_label(obs, o)));
        }
    }
    labels.push("1".into());
    if hidden_feedback {
        labels.push(format!("{hidden}_i"));
        labels.push(format!("{obs}_i*{hidden}_i"));
    }
    labels
}

/// Assembles a two-family ring library from generated observed-row labels
/// and the fixed four-term closure rows, declaring the standard
/// energy-conserving pairs whose members exist in the generated set
/// (`outward_pair` additionally declares the radius-2 advection pair used
/// by the excitable-medium family).
fn ring_library_custom(
    sites: usize,
    obs: &str,
    hidden: &str,
    stencil_radius: usize,
    max_degree: u32,
    hidden_feedback: bool,
    outward_pair: bool,
) -> Result<TermLibrary> {
    if stencil_radius == 0 || 2 * stencil_radius >= sites {
        return Err(crate::error::Error::Config(format!(
            "stencil radius {stencil_radius} invalid for a ring of {sites} sites"
        )));
    }
    if !(1..=4).contains(&max_degree) {
        return Err(crate::error::Error::Config(format!(
            "candidate max degree {max_degree} outside the supported range 1..=4"
        )));
    }
    let layout = StateLayout::ring(sites, &[(obs, true), (hidden, false)])?;
    let u_labels = ring_candidate_labels(obs, hidden, stencil_radius, max_degree, hidden_feedback);
    let u_refs: Vec<&str> = u_labels.iter().map(String::as_str).collect();
    let w_labels = [
        offset_label(obs, 0),
        format!("{}^2", offset_label(obs, 0)),
        "1".into(),
        offset_label(hidden, 0),
    ];
    let w_refs: Vec<&str> = w_labels.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(layout.len());
    for n in 0..layout.len() {
        let labels: &[&str] = if n < sites { &u_refs } else { &w_refs };
        rows.push(parse_row(&layout, n, labels)?);
    }
    let lib = TermLibrary::new(layout, rows)?;

    // Advection pairs within each observed row, plus the cross-layer pair,
    // restricted to whatever the stencil and degree actually generated.
    let mut candidates: Vec<((usize, String), (usize, String))> = Vec::new();
    for i in 0..sites {
        candidates.push(((i, format!("{obs}_{{i+1}}^2")), (i, format!("{obs}_{{i-1}}*{obs}_i"))));
        candidates.push(((i, format!("{obs}_i*{obs}_{{i+1}}")), (i, format!("{obs}_{{i-1}}^2"))));
        if outward_pair {
            candidates.push(((i, format!("{obs}_i*{obs}_{{i+2}}")), (i, format!("{obs}_{{i-2}}^2"))));
        }
        if hidden_feedback {
            candidates.push((
                (i, format!("{obs}_i*{hidden}_i")),
                (sites + i, format!("{obs}_i^2")),
            ));
        }
    }
    let mut pairs = Vec::new();
    for ((ra, la), (rb, lb)) in candidates {
        if let (Some(ma), Some(mb)) = (lib.find(ra, &la), lib.find(rb, &lb)) {
            pairs.push(EnergyPair {
                a: (ra, ma),
                b: (rb, mb),
            });
        }
    }
    lib.with_energy_pairs(pairs)
}

/// [`lorenz96_library`] with custom locality and degree settings; the
/// defaults (radius 2, degree 2, hidden feedback on) reproduce it exactly.
pub fn lorenz96_library_custom(
    stencil_radius: usize,
    max_degree: u32,
    hidden_feedback: bool,
) -> Result<TermLibrary> {
    ring_library_custom(L96_SITES, "u", "w", stencil_radius, max_degree, hidden_feedback, false)
}

/// [`fhn_library`] with custom locality and degree settings; the defaults
/// (radius 2, degree 3, hidden feedback on) reproduce it exactly.
pub fn fhn_library_custom(
    stencil_radius: usize,
    max_degree: u32,
    hidden_feedback: bool,
) -> Result<TermLibrary> {
    ring_library_custom(FHN_SITES, "u", "v", stencil_radius, max_degree, hidden_feedback, true)
}
