//! Exact Euclidean projections onto the feasible weight sets.

use super::ConstraintSet;
use crate::error::Result;

/// Projection onto `{β ≥ 0, Σβ = 1}` by the sort-and-threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Least-squares fit of a nonincreasing sequence (pool adjacent violators).
pub fn isotonic_decreasing(v: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count); merging keeps block means nonincreasing.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    let mut out = Vec::with_capacity(v.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat_n(s / c as f64, c));
    }
    out
}

/// Solves `Σ clamp(g_i − λ, 0, u_i) = 1` for `λ` and returns the clamped vector.
///
/// The left side is piecewise linear and nonincreasing in `λ` with kinks at
/// `g_i` and `g_i − u_i`; a binary search over the sorted kinks finds the
/// linear piece containing the root, which is then solved exactly.
fn threshold_clamp(g: &[f64], upper: &[f64]) -> Vec<f64> {
    let total = |lambda: f64| -> f64 { g.iter().zip(upper).map(|(x, u)| (x - lambda).clamp(0.0, *u)).sum() };
    let mut kinks: Vec<f64> = g.iter().copied().collect();
    kinks.extend(g.iter().zip(upper).filter(|(_, u)| u.is_finite()).map(|(x, u)| x - u));
    kinks.sort_by(f64::total_cmp);
    // Largest kink with total ≥ 1; kinks[0] is the smallest, where every
    // coordinate sits at its upper bound or the root lies further left.
    let (mut lo, mut hi) = (0usize, kinks.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if total(kinks[mid]) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let left = kinks[lo];
    // On (left, next kink) the free set is fixed; solve its linear equation.
    let probe = if hi < kinks.len() { 0.5 * (left + kinks[hi]) } else { left + 1.0 };
    let probe = if total(left) < 1.0 { left - 1.0 } else { probe };
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut fixed = 0.0;
    for (x, u) in g.iter().zip(upper) {
        let y = x - probe;
        if y >= *u {
            fixed += u;
        } else if y > 0.0 {
            free_sum += x;
            free += 1;
        }
    }
    let lambda = if free > 0 { (free_sum + fixed - 1.0) / free as f64 } else { left };
    g.iter().zip(upper).map(|(x, u)| (x - lambda).clamp(0.0, *u)).collect()
}

/// Projection onto the simplex intersected with the optional cap `β_1 ≤ B`
/// and the optional ordering `β_1 ≥ … ≥ β_K`.
///
/// With ordering the set is `{nonincreasing} ∩ [0, B]^K ∩ {Σβ = 1}`, whose
/// projection is `clamp(iso(v) − λ, 0, B)`; without it only `β_1` is capped.
pub fn project_constraint_set(v: &[f64], constraints: &ConstraintSet) -> Result<Vec<f64>> {
    constraints.check_feasible(v.len())?;
    let k = v.len();
    Ok(match (constraints.monotone, constraints.cap) {
        (false, None) => project_simplex(v),
        (false, Some(b)) => {
            let mut upper = vec![f64::INFINITY; k];
            upper[0] = b;
            threshold_clamp(v, &upper)
        }
        (true, cap) => {
            let upper = vec![cap.unwrap_or(f64::INFINITY); k];
            threshold_clamp(&isotonic_decreasing(v), &upper)
        }
    })
}
