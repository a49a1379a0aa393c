//! Normalized probabilists' Hermite polynomials, Gauss–Hermite rules for the
//! standard Gaussian measure, and sparse Hermite expansions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::pairwise_sum;

/// Default limit on tensor-rule work `d * n^d` in [`expand`].
pub const DEFAULT_NODE_CAP: u128 = 50_000_000;

/// A multi-index in `N_0^d`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        assert!(!entries.is_empty(), "multi-index needs d >= 1");
        MultiIndex(entries)
    }

    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    /// The unit vector `e_j` in `N_0^d`.
    pub fn unit(d: usize, j: usize) -> Self {
        let mut v = vec![0; d];
        v[j] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn linf(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// Componentwise `self >= other`.
    pub fn dominates(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    /// All multi-indices of dimension `d` with `|k|_1 <= n`, in
    /// lexicographic order.
    pub fn total_degree(d: usize, n: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if pos == cur.len() {
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for v in 0..=left {
                cur[pos] = v;
                rec(pos + 1, left - v, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, n, &mut cur, &mut out);
        out
    }

    /// All multi-indices with `|k|_inf <= n`.
    pub fn cube(d: usize, n: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        loop {
            out.push(MultiIndex(cur.clone()));
            let mut j = d;
            loop {
                if j == 0 {
                    return out;
                }
                j -= 1;
                if cur[j] < n {
                    cur[j] += 1;
                    break;
                }
                cur[j] = 0;
            }
        }
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex::new(v)
    }
}

/// Smoothness parameters `(s, p, q, d)` with the split `s = s_bar + s_tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub d: usize,
}

impl SmoothnessParams {
    pub fn new(s: f64, p: f64, q: f64, d: usize) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("s", format!("must be positive, got {s}")));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::invalid("p", format!("must lie in [1, inf), got {p}")));
        }
        if !(q >= 1.0 && q.is_finite()) {
            return Err(Error::invalid("q", format!("must lie in [1, inf), got {q}")));
        }
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        Ok(Self { s, p, q, d })
    }

    pub fn s_bar(&self) -> u32 {
        self.s.floor() as u32
    }

    pub fn s_tilde(&self) -> f64 {
        self.s - self.s.floor()
    }

    pub fn is_integer(&self) -> bool {
        self.s_tilde() == 0.0
    }
}

/// `H_k(x)` through the normalized three-term recurrence.
pub fn hermite_eval(k: usize, x: f64) -> f64 {
    let mut h0 = 1.0;
    if k == 0 {
        return h0;
    }
    let mut h1 = x;
    for j in 1..k {
        let jf = j as f64;
        let h2 = (x * h1 - jf.sqrt() * h0) / (jf + 1.0).sqrt();
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `[H_0(x), ..., H_kmax(x)]`.
pub fn hermite_all(kmax: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(1.0);
    if kmax == 0 {
        return out;
    }
    out.push(x);
    for j in 1..kmax {
        let jf = j as f64;
        let next = (x * out[j] - jf.sqrt() * out[j - 1]) / (jf + 1.0).sqrt();
        out.push(next);
    }
    out
}

/// `H_k(x) = prod_j H_{k_j}(x_j)`.
pub fn hermite_tensor_eval(k: &MultiIndex, x: &[f64]) -> Result<f64> {
    if k.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            got: x.len(),
        });
    }
    Ok(k.0
        .iter()
        .zip(x)
        .map(|(&kj, &xj)| hermite_eval(kj as usize, xj))
        .product())
}

/// Quadrature rule against the standard Gaussian measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .collect();
        pairwise_sum(&terms)
    }
}

/// `n`-point Gauss–Hermite rule for `gamma`, exact to degree `2n - 1`.
///
/// Nodes are eigenvalues of the Jacobi matrix with off-diagonal `sqrt(i)`,
/// polished by Newton steps on `H_n`. Weights are the Christoffel numbers
/// `1 / (n H_{n-1}(x_i)^2)`, renormalized to sum to one.
pub fn gauss_hermite_rule(n: usize) -> QuadratureRule {
    assert!(n >= 1, "Gauss-Hermite rule needs n >= 1");
    if n == 1 {
        return QuadratureRule {
            nodes: vec![0.0],
            weights: vec![1.0],
        };
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let h = hermite_all(n, *x);
            let step = h[n] / (nf.sqrt() * h[n - 1]);
            if !step.is_finite() {
                break;
            }
            *x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // Enforce exact symmetry of the rule.
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    for &x in &nodes {
        let h = hermite_eval(n - 1, x);
        weights.push(1.0 / (nf * h * h));
    }
    let total = pairwise_sum(&weights);
    for w in weights.iter_mut() {
        *w /= total;
    }
    QuadratureRule { nodes, weights }
}

/// Sparse Hermite expansion `sum_k c_k H_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteExpansion {
    pub dim: usize,
    pub coeffs: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct CoeffEntry {
    k: Vec<u32>,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct ExpansionDoc {
    dim: usize,
    coeffs: Vec<CoeffEntry>,
}

impl HermiteExpansion {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coeffs: BTreeMap::new(),
        }
    }

    /// Builds an expansion from `(k, value)` pairs; repeated keys add up.
    pub fn from_pairs<I, K>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<MultiIndex>,
    {
        let mut e = Self::new(dim);
        for (k, v) in pairs {
            let k = k.into();
            if k.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: k.dim(),
                });
            }
            *e.coeffs.entry(k).or_insert(0.0) += v;
        }
        Ok(e)
    }

    pub fn get(&self, k: &MultiIndex) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_degree(&self) -> u32 {
        self.coeffs.keys().map(MultiIndex::l1).max().unwrap_or(0)
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = ExpansionDoc {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .map(|(k, &v)| CoeffEntry { k: k.0.clone(), v })
                .collect(),
        };
        serde_json::to_string(&doc).expect("expansion serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ExpansionDoc = serde_json::from_str(s)?;
        Self::from_pairs(doc.dim, doc.coeffs.into_iter().map(|c| (c.k, c.v)))
    }
}

/// Evaluates `sum_k c_k H_k(x)`.
pub fn synthesize(e: &HermiteExpansion, x: &[f64]) -> Result<f64> {
    if x.len() != e.dim {
        return Err(Error::DimensionMismatch {
            expected: e.dim,
            got: x.len(),
        });
    }
    let deg = e
        .coeffs
        .keys()
        .map(|k| k.linf())
        .max()
        .unwrap_or(0) as usize;
    let tables: Vec<Vec<f64>> = x.iter().map(|&xj| hermite_all(deg, xj)).collect();
    let terms: Vec<f64> = e
        .coeffs
        .iter()
        .map(|(k, &c)| {
            c * k
                .0
                .iter()
                .enumerate()
                .map(|(j, &kj)| tables[j][kj as usize])
                .product::<f64>()
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Hermite coefficients of `f` for all `|k|_1 <= max_total_degree` by a
/// tensor Gauss–Hermite rule with `rule_size` nodes per coordinate.
pub fn expand<F>(f: F, dim: usize, max_total_degree: u32, rule_size: usize) -> Result<HermiteExpansion>
where
    F: Fn(&[f64]) -> f64,
{
    expand_with_cap(f, dim, max_total_degree, rule_size, DEFAULT_NODE_CAP)
}

/// [`expand`] with an explicit cap on `d * rule_size^d`.
pub fn expand_with_cap<F>(
    f: F,
    dim: usize,
    max_total_degree: u32,
    rule_size: usize,
    node_cap: u128,
) -> Result<HermiteExpansion>
where
    F: Fn(&[f64]) -> f64,
{
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    if rule_size < max_total_degree as usize + 1 {
        return Err(Error::invalid(
            "rule_size",
            format!("{rule_size} nodes cannot resolve degree {max_total_degree}"),
        ));
    }
    let work = (rule_size as u128)
        .checked_pow(dim as u32)
        .and_then(|v| v.checked_mul(dim as u128))
        .ok_or(Error::Overflow("tensor rule size"))?;
    if work > node_cap {
        return Err(Error::BudgetExceeded {
            what: "tensor Gauss-Hermite nodes",
            needed: work,
            cap: node_cap,
        });
    }
    let rule = gauss_hermite_rule(rule_size);
    let deg = max_total_degree as usize;
    let table: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| hermite_all(deg, x)).collect();
    let total = rule_size.pow(dim as u32);
    // Sample f on the full tensor grid once.
    let mut values = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    for _ in 0..total {
        for j in 0..dim {
            point[j] = rule.nodes[idx[j]];
        }
        let w: f64 = idx.iter().map(|&i| rule.weights[i]).product();
        values.push(w * f(&point));
        for j in (0..dim).rev() {
            idx[j] += 1;
            if idx[j] < rule_size {
                break;
            }
            idx[j] = 0;
        }
    }
    let mut out = HermiteExpansion::new(dim);
    for k in MultiIndex::total_degree(dim, max_total_degree) {
        let mut terms = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for v in &values {
            let mut h = *v;
            for j in 0..dim {
                h *= table[idx[j]][k.0[j] as usize];
            }
            terms.push(h);
            for j in (0..dim).rev() {
                idx[j] += 1;
                if idx[j] < rule_size {
                    break;
                }
                idx[j] = 0;
            }
        }
        out.coeffs.insert(k, pairwise_sum(&terms));
    }
    Ok(out)
}

/// `sqrt(sum_k c_k^2)`.
pub fn parseval_l2_norm(e: &HermiteExpansion) -> f64 {
    let sq: Vec<f64> = e.coeffs.values().map(|c| c * c).collect();
    pairwise_sum(&sq).sqrt()
}

/// `sqrt(sum_k (1 + |k|_1)^s c_k^2)`.
pub fn hs_norm(e: &HermiteExpansion, s: f64) -> f64 {
    let sq: Vec<f64> = e
        .coeffs
        .iter()
        .map(|(k, c)| {
            let w = if s == 0.0 {
                1.0
            } else {
                (1.0 + k.l1() as f64).powf(s)
            };
            w * c * c
        })
        .collect();
    pairwise_sum(&sq).sqrt()
}

/// Expansion of `D^alpha f`: `c_k -> c_k sqrt(k! / (k - alpha)!)` on `H_{k - alpha}`.
pub fn derivative_expansion(e: &HermiteExpansion, alpha: &MultiIndex) -> Result<HermiteExpansion> {
    if alpha.dim() != e.dim {
        return Err(Error::DimensionMismatch {
            expected: e.dim,
            got: alpha.dim(),
        });
    }
    let mut out = HermiteExpansion::new(e.dim);
    for (k, &c) in &e.coeffs {
        if !k.dominates(alpha) {
            continue;
        }
        let mut factor = 1.0;
        let mut shifted = Vec::with_capacity(e.dim);
        for (&kj, &aj) in k.0.iter().zip(&alpha.0) {
            for m in (kj - aj + 1)..=kj {
                factor *= (m as f64).sqrt();
            }
            shifted.push(kj - aj);
        }
        *out.coeffs.entry(MultiIndex(shifted)).or_insert(0.0) += c * factor;
    }
    Ok(out)
}
