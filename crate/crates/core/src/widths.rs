//! Widths of the Hermite-weighted ball: simplex counts `c(r, d)`, the
//! rearranged sequence `sigma_n` of `(1 + |k|_1)^{-s/2}`, its limit
//! constant, and a Gram/SVD estimator for sampled sets in `L_2(gamma)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hermite::{HermiteExpansion, MultiIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthMethod {
    ExactRearrangement,
    GramSvd,
    OperatorError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthCurve {
    pub entries: Vec<(u64, f64)>,
    /// `value * n^{s/(2d)}` per entry when a rate is known.
    pub normalized: Vec<f64>,
    pub method: WidthMethod,
}

/// `|{k in N_0^d : 1 + |k|_1 <= r}| = binom(r - 1 + d, d)`.
pub fn count_ball(r: u64, d: u32) -> Result<u64> {
    if r == 0 || d == 0 {
        return Err(Error::invalid("r, d", "need r >= 1 and d >= 1"));
    }
    // c_i = binom(r - 1 + i, i), exact at every step.
    let mut c: u128 = 1;
    for i in 1..=d as u128 {
        c = c
            .checked_mul(r as u128 - 1 + i)
            .ok_or(Error::Overflow("count_ball"))?
            / i;
        if c > u64::MAX as u128 {
            return Err(Error::Overflow("count_ball"));
        }
    }
    Ok(c as u64)
}

fn count_at_least(r: u64, d: u32, n: u64) -> bool {
    match count_ball(r, d) {
        Ok(c) => c >= n,
        Err(_) => true,
    }
}

/// Smallest `r` with `c(r, d) >= n`.
pub fn ball_radius(n: u64, d: u32) -> Result<u64> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("n, d", "need n >= 1 and d >= 1"));
    }
    let mut hi = 1u64;
    while !count_at_least(hi, d, n) {
        if hi == u64::MAX {
            return Err(Error::Overflow("ball_radius"));
        }
        hi = hi.saturating_mul(2);
    }
    let mut lo = hi / 2;
    // Invariant: c(lo) < n <= c(hi) (lo = 0 stands for "none").
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_at_least(mid, d, n) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `sigma_n = r^{-s/2}` with `r` minimal such that `c(r, d) >= n`.
pub fn sigma_rearranged(n: u64, s: f64, d: u32) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::invalid("s", "must be positive"));
    }
    let r = ball_radius(n, d)?;
    Ok((r as f64).powf(-0.5 * s))
}

/// `(d!)^{-s/(2d)}`.
pub fn width_limit_constant(s: f64, d: u32) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    let v = (-s / (2.0 * d as f64) * ln_gamma(d as f64 + 1.0)).exp();
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Overflow("width_limit_constant"))
    }
}

/// `(n, sigma_n)` for each `n`, with `sigma_n n^{s/(2d)}` alongside.
pub fn width_curve_exact(s: f64, d: u32, n_list: &[u64]) -> Result<WidthCurve> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_list", "must be strictly increasing"));
    }
    if !(s > 0.0) {
        return Err(Error::invalid("s", "must be positive"));
    }
    let mut entries = Vec::with_capacity(n_list.len());
    let mut normalized = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let r = ball_radius(n, d)? as f64;
        entries.push((n, r.powf(-0.5 * s)));
        // (n^{1/d} / r)^{s/2}, exact when d = 1 and n = r.
        let root = if d == 1 { n as f64 } else { (n as f64).powf(1.0 / d as f64) };
        normalized.push((root / r).powf(0.5 * s));
    }
    Ok(WidthCurve {
        entries,
        normalized,
        method: WidthMethod::ExactRearrangement,
    })
}

/// `n = c(r, d)` for `r = 1..=r_max`, deduplicated.
pub fn ball_counts(d: u32, r_max: u64) -> Result<Vec<u64>> {
    let mut out: Vec<u64> = Vec::new();
    for r in 1..=r_max {
        let c = count_ball(r, d)?;
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Singular values (descending) of the Parseval coefficient matrix whose
/// columns are the sample elements.
pub fn gram_singular_values(sample: &[HermiteExpansion]) -> Result<Vec<f64>> {
    let first = sample.first().ok_or_else(|| Error::invalid("sample", "must be nonempty"))?;
    let dim = first.dim;
    let mut rows: BTreeMap<&MultiIndex, usize> = BTreeMap::new();
    for e in sample {
        if e.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim,
            });
        }
        for k in e.coeffs.keys() {
            let next = rows.len();
            rows.entry(k).or_insert(next);
        }
    }
    if rows.is_empty() {
        return Ok(vec![0.0; sample.len()]);
    }
    let mut m = DMatrix::<f64>::zeros(rows.len(), sample.len());
    for (j, e) in sample.iter().enumerate() {
        for (k, v) in &e.coeffs {
            m[(rows[k], j)] = *v;
        }
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// `d_n` of the sampled symmetric hull: the `(n+1)`-th singular value.
/// Returns 0 once `n` reaches the number of singular values. For an infinite
/// ball this is a lower bound on its width.
pub fn kolmogorov_width_gram(sample: &[HermiteExpansion], n: usize) -> Result<f64> {
    let sv = gram_singular_values(sample)?;
    Ok(sv.get(n).copied().unwrap_or(0.0))
}

/// Gram widths for each `n` in `n_list`.
pub fn width_curve_gram(sample: &[HermiteExpansion], n_list: &[u64]) -> Result<WidthCurve> {
    let sv = gram_singular_values(sample)?;
    Ok(WidthCurve {
        entries: n_list
            .iter()
            .map(|&n| (n, sv.get(n as usize).copied().unwrap_or(0.0)))
            .collect(),
        normalized: Vec::new(),
        method: WidthMethod::GramSvd,
    })
}

/// The `m`-th (1-based) approximation number of a diagonal operator.
pub fn diagonal_operator_number(diag: &[f64], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m", "operator numbers are indexed from 1"));
    }
    let mut v: Vec<f64> = diag.iter().map(|x| x.abs()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v.get(m - 1).copied().unwrap_or(0.0))
}

/// Keeps the coefficients with `1 + |k|_1 <= r`.
pub fn truncate_ball(e: &HermiteExpansion, r: u64) -> HermiteExpansion {
    let mut out = HermiteExpansion::new(e.dim);
    for (k, v) in &e.coeffs {
        if 1 + k.l1() as u64 <= r {
            out.coeffs.insert(k.clone(), *v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_search_edges() {
        assert_eq!(ball_radius(1, 3).unwrap(), 1);
        assert_eq!(ball_radius(u64::MAX, 1).unwrap(), u64::MAX);
        assert!(count_ball(u64::MAX / 2, 3).is_err());
    }
}
