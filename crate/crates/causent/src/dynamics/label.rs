//! Canonical term labels and their parser.
//!
//! Dense layouts use absolute variable names (`x*y^2`). Ring layouts use
//! offset form relative to the equation's site (`u_{i-1}*u_{i+1}`, `w_i`,
//! `u_i*w_i`), so every site's row shares one label sequence and exported
//! matrices align their columns across sites. Offsets wrap on the family's
//! flat ring and are printed with the smallest absolute representative.

use super::StateLayout;
use crate::error::{Error, Result};

/// Formats a term from classified factors; the row fixes the site context.
pub(super) fn format_term(
    layout: &StateLayout,
    row: usize,
    obs_factors: &[(usize, u32)],
    hidden: Option<usize>,
) -> String {
    if obs_factors.is_empty() && hidden.is_none() {
        return "1".into();
    }
    let mut parts: Vec<(i64, i64, String)> = Vec::new();
    for &(v, e) in obs_factors {
        parts.push(factor_key(layout, row, v, e));
    }
    if let Some(h) = hidden {
        parts.push(factor_key(layout, row, h, 1));
    }
    parts.sort_by_key(|&(fam, off, _)| (fam, off));
    let pieces: Vec<String> = parts.into_iter().map(|(_, _, s)| s).collect();
    pieces.join("*")
}

/// Sort key `(family, offset)` and rendered text for one factor.
fn factor_key(layout: &StateLayout, row: usize, var: usize, exp: u32) -> (i64, i64, String) {
    let base = match (layout.family_of(var), layout.family_of(row)) {
        (Some((fi, flat)), Some(_)) => {
            let anchor = layout.anchor(row, fi).expect("row is on a ring family");
            let len = layout.family_ring_len(fi) as i64;
            let mut off = (flat as i64 - anchor as i64).rem_euclid(len);
            if off > len / 2 {
                off -= len;
            }
            return (
                fi as i64,
                off,
                render(&offset_name(layout.family_name(fi), off), exp),
            );
        }
        _ => layout.name(var).to_string(),
    };
    (i64::MAX, var as i64, render(&base, exp))
}

fn render(base: &str, exp: u32) -> String {
    if exp > 1 {
        format!("{base}^{exp}")
    } else {
        base.to_string()
    }
}

fn offset_name(family: &str, off: i64) -> String {
    match off {
        0 => format!("{family}_i"),
        d if d > 0 => format!("{family}_{{i+{d}}}"),
        d => format!("{family}_{{i-{}}}", -d),
    }
}

/// Parses a canonical label back into `(variable, exponent)` factors.
pub(super) fn parse_term(
    layout: &StateLayout,
    row: usize,
    text: &str,
) -> Result<Vec<(usize, u32)>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Parse("empty term label".into()));
    }
    if text == "1" {
        return Ok(Vec::new());
    }
    let mut factors = Vec::new();
    for piece in text.split('*') {
        let piece = piece.trim();
        let (base, exp) = match piece.split_once('^') {
            Some((b, e)) => {
                let exp: u32 = e.trim().parse().map_err(|_| {
                    Error::Parse(format!("bad exponent in term factor {piece}"))
                })?;
                (b.trim(), exp)
            }
            None => (piece, 1),
        };
        let var = resolve_base(layout, row, base)?;
        factors.push((var, exp));
    }
    Ok(factors)
}

fn resolve_base(layout: &StateLayout, row: usize, base: &str) -> Result<usize> {
    if let Some(v) = layout.index_of(base) {
        return Ok(v);
    }
    // Offset form: family name, underscore, then "i" or "{i+d}" / "{i-d}".
    if let Some((fam, sub)) = base.rsplit_once('_') {
        if let Some(fi) = layout.family_index(fam) {
            let sub = sub.trim_start_matches('{').trim_end_matches('}');
            let off = parse_offset(sub).ok_or_else(|| {
                Error::Parse(format!("bad site offset in term factor {base}"))
            })?;
            let anchor = layout.anchor(row, fi).ok_or_else(|| {
                Error::Parse(format!(
                    "offset label {base} used with a non-ring layout row"
                ))
            })?;
            return Ok(layout.family_var(fi, anchor, off));
        }
    }
    Err(Error::Parse(format!("unknown variable in term factor {base}")))
}

fn parse_offset(sub: &str) -> Option<i64> {
    let rest = sub.strip_prefix('i')?;
    if rest.is_empty() {
        return Some(0);
    }
    let (sign, digits) = match rest.split_at(1) {
        ("+", d) => (1, d),
        ("-", d) => (-1, d),
        _ => return None,
    };
    digits.parse::<i64>().ok().map(|d| sign * d)
}
