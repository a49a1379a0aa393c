//! Global approximation on `(R^d, gamma)` from local periodic operators on
//! shifted cubes: smooth partition of unity, auxiliary exponents, the
//! Gaussian budget allocation over cells, and the assembled operator.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{IntegratorConfig, IntegratorKind, NormEstimate, Method, TestFunction};
use crate::quad::{integrate_lenient, pairwise_sum, Tolerance};

/// `E(u) = e^{-1/u}` for `u > 0`, else 0.
#[inline]
fn mollifier(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `u <= 0`, 1 for `u >= 1`.
#[inline]
fn smooth_step(u: f64) -> f64 {
    let a = mollifier(u);
    let b = mollifier(1.0 - u);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Tensor partition of unity `phi_k = psi(. - k) / sum_l psi(. - l)` over
/// cubes `k + [-theta/2, theta/2]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    pub theta: f64,
    pub dim: usize,
    pub kappa: u32,
    /// `g(t) = 0` for `|t| >= outer`.
    pub outer: f64,
    /// `g(t) = 1` for `|t| <= outer - sharpness`.
    pub sharpness: f64,
}

pub fn build_partition(theta: f64, d: usize, kappa: u32) -> Result<PartitionOfUnity> {
    if !(theta > 1.0 && theta < 2.0) {
        return Err(Error::invalid("theta", format!("must lie in (1, 2), got {theta}")));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be positive"));
    }
    // Plateau |t| <= 1 - outer, so neighbouring transitions overlap.
    let outer = 0.5 * theta - 0.1 * (theta - 1.0);
    Ok(PartitionOfUnity {
        theta,
        dim: d,
        kappa,
        outer,
        sharpness: 2.0 * outer - 1.0,
    })
}

impl PartitionOfUnity {
    /// Univariate bump `g`.
    #[inline]
    pub fn bump(&self, t: f64) -> f64 {
        smooth_step((self.outer - t.abs()) / self.sharpness)
    }

    #[inline]
    fn coordinate_weight(&self, k: i64, t: f64) -> f64 {
        let num = self.bump(t - k as f64);
        if num == 0.0 {
            return 0.0;
        }
        let f = t.floor() as i64;
        let den: f64 = (f - 1..=f + 2).map(|l| self.bump(t - l as f64)).sum();
        num / den
    }

    /// `phi_k(x)`.
    pub fn phi(&self, k: &[i64], x: &[f64]) -> f64 {
        k.iter().zip(x).map(|(&kj, &xj)| self.coordinate_weight(kj, xj)).product()
    }

    /// `(k, phi_k(x))` for every cell with `phi_k(x) > 0`.
    pub fn active(&self, x: &[f64]) -> Vec<(Vec<i64>, f64)> {
        let per: Vec<Vec<(i64, f64)>> = x
            .iter()
            .map(|&t| {
                let f = t.floor() as i64;
                (f - 1..=f + 2)
                    .map(|l| (l, self.coordinate_weight(l, t)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect();
        let mut out = vec![(Vec::with_capacity(x.len()), 1.0)];
        for opts in per {
            let mut next = Vec::with_capacity(out.len() * opts.len());
            for (k, w) in &out {
                for &(l, v) in &opts {
                    let mut kk = k.clone();
                    kk.push(l);
                    next.push((kk, w * v));
                }
            }
            out = next;
        }
        out
    }

    /// Sup of `|d^j/dt^j phi_k|` (univariate factor) over a grid, by
    /// central differences with step `h`.
    pub fn derivative_sup(&self, k: i64, j: u32, h: f64) -> f64 {
        let m = 4000;
        let lo = k as f64 - self.theta / 2.0;
        let mut best: f64 = 0.0;
        for i in 0..=m {
            let t = lo + self.theta * i as f64 / m as f64;
            let mut acc = 0.0;
            let mut binom = 1.0;
            for i2 in 0..=j {
                let sign = if i2 % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * self.coordinate_weight(k, t + (0.5 * j as f64 - i2 as f64) * h);
                binom = binom * (j - i2) as f64 / (i2 + 1) as f64;
            }
            best = best.max((acc / h.powi(j as i32)).abs());
        }
        best
    }
}

/// Which width statement the parameters serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AuxFlavor {
    #[default]
    Isotropic,
    Mixed,
    /// The `W^s_{p,G}` preset, which needs `q* < p*/2`.
    GaussianGagliardo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    pub q_star: f64,
    pub p_star: f64,
    pub t0: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub exponent1: f64,
    pub exponent2: f64,
}

pub fn choose_aux_params(p: f64, q: f64, s: f64, d: usize) -> Result<AuxParams> {
    choose_aux_params_for(p, q, s, d, AuxFlavor::Isotropic)
}

pub fn choose_aux_params_for(p: f64, q: f64, s: f64, d: usize, flavor: AuxFlavor) -> Result<AuxParams> {
    if !(q >= 1.0 && q < p && p.is_finite()) {
        return Err(Error::invalid("p, q", format!("need 1 <= q < p < inf, got p={p}, q={q}")));
    }
    if !(s > 0.0) || d == 0 {
        return Err(Error::invalid("s, d", "need s > 0 and d >= 1"));
    }
    let (q_star, p_star) = match flavor {
        AuxFlavor::GaussianGagliardo => {
            if !(2.0 * q < p) {
                return Err(Error::invalid("p, q", "the W_{p,G} preset needs 2q < p"));
            }
            let gap = (0.5 * p - q) / 3.0;
            (q + gap, p - gap)
        }
        _ => (q + (p - q) / 3.0, p - (p - q) / 3.0),
    };
    let tau = (0.5 * (p_star / q_star - 1.0)).clamp(1e-12, 0.99);
    let t0 = 2.0 * tau.atanh();
    let exponent1 = match flavor {
        AuxFlavor::GaussianGagliardo => 1.0 / (2.0 * q_star) - 1.0 / p_star,
        _ => 1.0 / (2.0 * q_star) - (1.0 + tau) / (2.0 * p_star),
    };
    let exponent2 = q / (2.0 * q_star) * (1.0 - q / p);
    if !(exponent1 > 0.0 && exponent2 > 0.0) {
        return Err(Error::invalid("p, q", "auxiliary exponents are not positive"));
    }
    let delta = 0.9 * exponent1.min(exponent2);
    let df = d as f64;
    let (a, b) = match flavor {
        AuxFlavor::Mixed => (s, (df - 1.0) * (s + 0.5 - 1.0 / p)),
        _ => (s / df, 0.0),
    };
    Ok(AuxParams {
        q_star,
        p_star,
        t0,
        delta,
        a,
        b,
        exponent1,
        exponent2,
    })
}

/// `1 / sum_j c_j e^{-delta j^2 / (2a)}` with `c_0 = 1` and
/// `c_j = (2j+1)^d - (2j-1)^d`, the number of `k` with `|k|_inf = j`.
pub fn rho_constant(delta: f64, a: f64, d: usize, tail_tol: f64) -> Result<f64> {
    if !(delta > 0.0 && a > 0.0) {
        return Err(Error::invalid("delta, a", "must be positive"));
    }
    let lambda = delta / (2.0 * a);
    let df = d as i32;
    let shell = |j: f64| (2.0 * j + 1.0).powi(df) - (2.0 * j - 1.0).powi(df);
    let mut terms = vec![1.0];
    let mut j = 1.0f64;
    loop {
        let t = shell(j) * (-lambda * j * j).exp();
        terms.push(t);
        let next = shell(j + 1.0) * (-lambda * (j + 1.0) * (j + 1.0)).exp();
        // Geometric domination once the ratio drops below 1/2.
        if next <= 0.5 * t && 2.0 * next < tail_tol {
            break;
        }
        j += 1.0;
        if j > 1e7 {
            return Err(Error::NonConvergence {
                subdivisions: j as usize,
                estimate: pairwise_sum(&terms),
                error: t,
            });
        }
    }
    Ok(1.0 / pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub n: u64,
    pub xi: f64,
    pub rho: f64,
    /// Every cell with `|k|_2 < xi`, including those with `n_k = 0`.
    pub cells: Vec<(Vec<i64>, u64)>,
}

impl BudgetAllocation {
    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    pub fn get(&self, k: &[i64]) -> u64 {
        self.cells.iter().find(|c| c.0 == k).map_or(0, |c| c.1)
    }
}

pub fn allocate(n: u64, params: &AuxParams, d: usize) -> Result<BudgetAllocation> {
    if n < 2 {
        return Err(Error::invalid("n", "allocation needs n >= 2"));
    }
    let lambda = params.delta / (2.0 * params.a);
    let xi = (2.0 * params.a * (n as f64).ln() / params.delta).sqrt();
    let rho = rho_constant(params.delta, params.a, d, 1e-12)?;
    let reach = xi.ceil() as i64;
    let mut cells = Vec::new();
    let mut k = vec![-reach; d];
    loop {
        let r2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
        if r2.sqrt() < xi {
            let nk = (rho * n as f64 * (-lambda * r2).exp()).floor() as u64;
            cells.push((k.clone(), nk));
        }
        let mut j = d;
        loop {
            if j == 0 {
                break;
            }
            j -= 1;
            k[j] += 1;
            if k[j] <= reach {
                break;
            }
            k[j] = -reach;
        }
        if k.iter().all(|&v| v == -reach) {
            break;
        }
    }
    let sum: u64 = cells.iter().map(|c| c.1).sum();
    if sum > n {
        return Err(Error::InfeasibleBudget { sum, n });
    }
    Ok(BudgetAllocation { n, xi, rho, cells })
}

pub type PointFnArc = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Output of a local operator on the centered cube.
#[derive(Clone)]
pub struct LocalApproximant {
    pub eval: PointFnArc,
    pub rank: usize,
    /// Breakpoints of the approximant in cube coordinates (d = 1), for
    /// error quadrature.
    pub knots: Vec<f64>,
}

impl std::fmt::Debug for LocalApproximant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalApproximant").field("rank", &self.rank).finish()
    }
}

impl LocalApproximant {
    pub fn zero() -> Self {
        Self {
            eval: Arc::new(|_| 0.0),
            rank: 0,
            knots: Vec::new(),
        }
    }
}

/// Rank-`<= m` approximation of periodic data on `[-theta/2, theta/2]^d`.
pub trait LocalOperator: Send + Sync {
    /// `f` is read only on the centered cube.
    fn apply(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync), m: usize) -> Result<LocalApproximant>;
    /// Declared `(a, b)` of the targeted `m^{-a} (log m)^b` bound.
    fn guarantee(&self) -> (f64, f64);
    fn name(&self) -> &'static str;
}

/// Truncated Fourier series with cubic frequency cutoff.
#[derive(Debug, Clone, Copy)]
pub struct LocalFourier {
    pub theta: f64,
    pub dim: usize,
    pub s: f64,
}

pub fn local_fourier(theta: f64, dim: usize, s: f64) -> Result<LocalFourier> {
    if !(theta > 0.0) || !(1..=2).contains(&dim) {
        return Err(Error::invalid("local_fourier", "needs theta > 0 and d in {1, 2}"));
    }
    Ok(LocalFourier { theta, dim, s })
}

impl LocalOperator for LocalFourier {
    fn apply(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync), m: usize) -> Result<LocalApproximant> {
        if m == 0 {
            return Ok(LocalApproximant::zero());
        }
        let d = self.dim;
        // Largest K with (2K+1)^d <= m.
        let mut cut = 0usize;
        while (2 * (cut + 1) + 1).pow(d as u32) <= m {
            cut += 1;
        }
        let width = 2 * cut + 1;
        let samples = (8 * width).max(64);
        let theta = self.theta;
        let h = theta / samples as f64;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(samples);
        let grid: Vec<f64> = (0..samples).map(|i| -0.5 * theta + i as f64 * h).collect();
        // Coefficients c_k of f(x) = sum c_k e^{2 pi i k (x + theta/2) / theta}.
        let coeffs: Vec<Complex<f64>> = if d == 1 {
            let mut buf: Vec<Complex<f64>> = grid.iter().map(|&x| Complex::new(f(&[x]), 0.0)).collect();
            fft.process(&mut buf);
            (0..width)
                .map(|i| {
                    let k = i as i64 - cut as i64;
                    buf[k.rem_euclid(samples as i64) as usize] / samples as f64
                })
                .collect()
        } else {
            let mut rows: Vec<Vec<Complex<f64>>> = grid
                .iter()
                .map(|&x0| grid.iter().map(|&x1| Complex::new(f(&[x0, x1]), 0.0)).collect())
                .collect();
            for row in rows.iter_mut() {
                fft.process(row);
            }
            let mut out = vec![Complex::new(0.0, 0.0); width * width];
            for j1 in 0..width {
                let k1 = (j1 as i64 - cut as i64).rem_euclid(samples as i64) as usize;
                let mut col: Vec<Complex<f64>> = rows.iter().map(|r| r[k1]).collect();
                fft.process(&mut col);
                for j0 in 0..width {
                    let k0 = (j0 as i64 - cut as i64).rem_euclid(samples as i64) as usize;
                    out[j0 * width + j1] = col[k0] / (samples * samples) as f64;
                }
            }
            out
        };
        let rank = width.pow(d as u32);
        let omega = 2.0 * PI / theta;
        let eval: PointFnArc = Arc::new(move |x: &[f64]| {
            let phase = |t: f64, k: i64| {
                let a = omega * k as f64 * (t + 0.5 * theta);
                Complex::new(a.cos(), a.sin())
            };
            let mut acc = Complex::new(0.0, 0.0);
            if x.len() == 1 {
                for (i, c) in coeffs.iter().enumerate() {
                    acc += c * phase(x[0], i as i64 - cut as i64);
                }
            } else {
                for j0 in 0..width {
                    let p0 = phase(x[0], j0 as i64 - cut as i64);
                    for j1 in 0..width {
                        acc += coeffs[j0 * width + j1] * p0 * phase(x[1], j1 as i64 - cut as i64);
                    }
                }
            }
            acc.re
        });
        let knots = (0..=4 * width).map(|i| -0.5 * theta + theta * i as f64 / (4 * width) as f64).collect();
        Ok(LocalApproximant { eval, rank, knots })
    }

    fn guarantee(&self) -> (f64, f64) {
        (self.s / self.dim as f64, 0.0)
    }

    fn name(&self) -> &'static str {
        "fourier"
    }
}

/// Centered cardinal B-spline of order `k` (degree `k-1`), support `[-k/2, k/2]`.
pub fn centered_bspline(k: usize, x: f64) -> f64 {
    let half = 0.5 * k as f64;
    if x.abs() >= half {
        return 0.0;
    }
    let t = x + half;
    let mut fact = 1.0;
    for i in 1..k {
        fact *= i as f64;
    }
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        let u = t - j as f64;
        if u > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * u.powi(k as i32 - 1);
        }
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    acc / fact
}

/// Symmetric filter `a_0, a_1, ..` with `a_hat(w) B_hat(w) = 1 + O(w^k)`,
/// making the quasi-interpolant exact on polynomials of degree `< k`.
pub fn quasi_interpolation_filter(k: usize) -> Vec<f64> {
    let half = (k - 1) / 2;
    let terms = half + 1;
    // sinc(w/2) as a series in z = w^2.
    let mut sinc = vec![0.0; terms];
    let mut fact = 1.0;
    for (r, c) in sinc.iter_mut().enumerate() {
        if r > 0 {
            fact *= (2 * r) as f64 * (2 * r + 1) as f64;
        }
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        *c = sign / (fact * 4f64.powi(r as i32));
    }
    let mul = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; terms];
        for i in 0..terms {
            for j in 0..terms - i {
                out[i + j] += a[i] * b[j];
            }
        }
        out
    };
    let mut bhat = vec![0.0; terms];
    bhat[0] = 1.0;
    for _ in 0..k {
        bhat = mul(&bhat, &sinc);
    }
    // 1 / bhat.
    let mut inv = vec![0.0; terms];
    inv[0] = 1.0 / bhat[0];
    for r in 1..terms {
        let s: f64 = (1..=r).map(|i| bhat[i] * inv[r - i]).sum();
        inv[r] = -s / bhat[0];
    }
    // a_0 + 2 sum_l a_l cos(l w) matched to inv through z^half.
    let mut m = nalgebra::DMatrix::<f64>::zeros(terms, terms);
    let mut rhs = nalgebra::DVector::<f64>::zeros(terms);
    let mut fact = 1.0;
    for r in 0..terms {
        if r > 0 {
            fact *= (2 * r - 1) as f64 * (2 * r) as f64;
        }
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        for l in 0..terms {
            let mult = if l == 0 { 1.0 } else { 2.0 };
            m[(r, l)] = mult * sign * (l as f64).powi(2 * r as i32) / fact;
        }
        if r == 0 {
            m[(0, 0)] = 1.0;
        }
        rhs[r] = inv[r];
    }
    let sol = m.lu().solve(&rhs).unwrap_or_else(|| nalgebra::DVector::from_element(terms, f64::NAN));
    sol.iter().copied().collect()
}

/// Periodic tensor B-spline quasi-interpolation from point samples.
#[derive(Debug, Clone)]
pub struct LocalSplineSampler {
    pub theta: f64,
    pub dim: usize,
    pub order: usize,
    pub s: f64,
    filter: Vec<f64>,
}

pub fn local_spline_sampler(theta: f64, dim: usize, s: f64) -> Result<LocalSplineSampler> {
    if !(theta > 0.0) || dim == 0 || dim > 3 || !(s > 0.0) {
        return Err(Error::invalid("local_spline_sampler", "needs theta > 0, 1 <= d <= 3, s > 0"));
    }
    let order = s.ceil() as usize + 1;
    Ok(LocalSplineSampler {
        theta,
        dim,
        order,
        s,
        filter: quasi_interpolation_filter(order),
    })
}

impl LocalSplineSampler {
    fn tap(&self, j: i64) -> f64 {
        self.filter.get(j.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }
}

impl LocalOperator for LocalSplineSampler {
    fn apply(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync), m: usize) -> Result<LocalApproximant> {
        if m == 0 {
            return Ok(LocalApproximant::zero());
        }
        let d = self.dim;
        let mut nodes = (m as f64).powf(1.0 / d as f64).floor() as usize;
        while (nodes + 1).pow(d as u32) <= m {
            nodes += 1;
        }
        while nodes > 1 && nodes.pow(d as u32) > m {
            nodes -= 1;
        }
        let nodes = nodes.max(1);
        let theta = self.theta;
        let h = theta / nodes as f64;
        let total = nodes.pow(d as u32);
        let mut samples = vec![0.0; total];
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        for s in samples.iter_mut() {
            for j in 0..d {
                x[j] = -0.5 * theta + idx[j] as f64 * h;
            }
            *s = f(&x);
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < nodes {
                    break;
                }
                idx[j] = 0;
            }
        }
        // Separable filtering, one axis at a time.
        let half = self.filter.len() as i64 - 1;
        let mut coeffs = samples;
        let stride = |j: usize| nodes.pow((d - 1 - j) as u32);
        for axis in 0..d {
            let st = stride(axis);
            let mut next = vec![0.0; total];
            for (flat, out) in next.iter_mut().enumerate() {
                let pos = (flat / st) % nodes;
                let base = flat - pos * st;
                let mut acc = 0.0;
                for j in -half..=half {
                    let q = (pos as i64 + j).rem_euclid(nodes as i64) as usize;
                    acc += self.tap(j) * coeffs[base + q * st];
                }
                *out = acc;
            }
            coeffs = next;
        }
        let order = self.order;
        let reach = (order as f64 / 2.0).ceil() as i64 + 1;
        let coeffs = Arc::new(coeffs);
        let eval: PointFnArc = Arc::new(move |x: &[f64]| {
            // Per-axis (index, weight) lists, then a tensor sum.
            let mut axes: Vec<Vec<(usize, f64)>> = Vec::with_capacity(x.len());
            for &xj in x {
                let t = (xj + 0.5 * theta) / h;
                let c = t.round() as i64;
                let mut v = Vec::with_capacity(2 * reach as usize + 1);
                for i in c - reach..=c + reach {
                    let w = centered_bspline(order, t - i as f64);
                    if w != 0.0 {
                        v.push((i.rem_euclid(nodes as i64) as usize, w));
                    }
                }
                axes.push(v);
            }
            let mut acc = 0.0;
            let dd = axes.len();
            let mut pos = vec![0usize; dd];
            loop {
                let mut flat = 0;
                let mut w = 1.0;
                for j in 0..dd {
                    let (i, wj) = axes[j][pos[j]];
                    flat = flat * nodes + i;
                    w *= wj;
                }
                acc += w * coeffs[flat];
                let mut j = dd;
                loop {
                    if j == 0 {
                        return acc;
                    }
                    j -= 1;
                    pos[j] += 1;
                    if pos[j] < axes[j].len() {
                        break;
                    }
                    pos[j] = 0;
                }
            }
        });
        // Spline pieces change at nodes (even order) or midpoints (odd order).
        let offset = if order % 2 == 0 { 0.0 } else { 0.5 };
        let knots = (0..=nodes)
            .map(|i| -0.5 * theta + (i as f64 + offset) * h)
            .filter(|&t| t <= 0.5 * theta)
            .collect();
        Ok(LocalApproximant { eval, rank: total, knots })
    }

    fn guarantee(&self) -> (f64, f64) {
        (self.s / self.dim as f64, 0.0)
    }

    fn name(&self) -> &'static str {
        "spline-sampler"
    }
}

/// The assembled operator `A_n f = sum_k A_{n_k}[f phi_k (. + k)](. - k)`.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub partition: PartitionOfUnity,
    pub budget: BudgetAllocation,
    pub cells: Vec<(Vec<i64>, LocalApproximant)>,
    pub total_rank: usize,
    /// Samples requested outside the owning cube.
    pub locality_violations: usize,
    index: HashMap<Vec<i64>, usize>,
}

pub fn assemble(
    f: &TestFunction,
    part: &PartitionOfUnity,
    budget: &BudgetAllocation,
    local: &dyn LocalOperator,
) -> Result<AssembledOperator> {
    if f.dim != part.dim {
        return Err(Error::DimensionMismatch {
            expected: part.dim,
            got: f.dim,
        });
    }
    let violations = AtomicUsize::new(0);
    let half = 0.5 * part.theta;
    let results: Vec<Result<(Vec<i64>, LocalApproximant)>> = budget
        .cells
        .par_iter()
        .map(|(k, nk)| {
            if *nk == 0 {
                return Ok((k.clone(), LocalApproximant::zero()));
            }
            let kf: Vec<f64> = k.iter().map(|&v| v as f64).collect();
            let localized = |y: &[f64]| -> f64 {
                if y.iter().any(|v| v.abs() > half * (1.0 + 1e-12)) {
                    violations.fetch_add(1, Ordering::Relaxed);
                }
                let x: Vec<f64> = y.iter().zip(&kf).map(|(a, b)| a + b).collect();
                let w = part.phi(k, &x);
                if w == 0.0 {
                    0.0
                } else {
                    w * f.eval(&x)
                }
            };
            let approx = local.apply(&localized, *nk as usize)?;
            if approx.rank > *nk as usize {
                return Err(Error::RankOverrun {
                    used: approx.rank,
                    budget: *nk as usize,
                });
            }
            Ok((k.clone(), approx))
        })
        .collect();
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        cells.push(r?);
    }
    let total_rank: usize = cells.iter().map(|c| c.1.rank).sum();
    if total_rank as u64 > budget.n {
        return Err(Error::RankOverrun {
            used: total_rank,
            budget: budget.n as usize,
        });
    }
    let index = cells.iter().enumerate().map(|(i, c)| (c.0.clone(), i)).collect();
    Ok(AssembledOperator {
        partition: *part,
        budget: budget.clone(),
        cells,
        total_rank,
        locality_violations: violations.into_inner(),
        index,
    })
}

impl AssembledOperator {
    /// Sums the cells whose open cube contains `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let half = 0.5 * self.partition.theta;
        let per: Vec<Vec<i64>> = x
            .iter()
            .map(|&t| {
                let lo = (t - half).floor() as i64;
                let hi = (t + half).ceil() as i64;
                (lo..=hi).filter(|&k| (t - k as f64).abs() < half).collect()
            })
            .collect();
        let mut acc = 0.0;
        let mut pos = vec![0usize; x.len()];
        if per.iter().any(|v| v.is_empty()) {
            return 0.0;
        }
        let mut k = vec![0i64; x.len()];
        let mut y = vec![0.0; x.len()];
        loop {
            for j in 0..x.len() {
                k[j] = per[j][pos[j]];
                y[j] = x[j] - k[j] as f64;
            }
            if let Some(&i) = self.index.get(&k) {
                acc += (self.cells[i].1.eval)(&y);
            }
            let mut j = x.len();
            loop {
                if j == 0 {
                    return acc;
                }
                j -= 1;
                pos[j] += 1;
                if pos[j] < per[j].len() {
                    break;
                }
                pos[j] = 0;
            }
        }
    }

    /// Number of cells contributing at `x`.
    pub fn active_cells(&self, x: &[f64]) -> usize {
        let half = 0.5 * self.partition.theta;
        x.iter()
            .map(|&t| {
                let lo = (t - half).floor() as i64;
                let hi = (t + half).ceil() as i64;
                (lo..=hi).filter(|&k| (t - k as f64).abs() < half).count()
            })
            .product()
    }

    /// Sorted breakpoints of the approximant in one dimension.
    pub fn breakpoints_1d(&self) -> Vec<f64> {
        let half = 0.5 * self.partition.theta;
        let mut out = Vec::new();
        for (k, a) in &self.cells {
            let c = k[0] as f64;
            out.push(c - half);
            out.push(c + half);
            out.extend(a.knots.iter().map(|t| c + t));
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        out
    }
}

/// `||f - A f||_{L_q(gamma)}`; adaptive on the breakpoints in one dimension
/// (extra singular points of `f` may be supplied), Monte Carlo otherwise.
pub fn approximation_error(
    f: &TestFunction,
    op: &AssembledOperator,
    q: f64,
    singular_points: &[f64],
    cfg: &IntegratorConfig,
) -> Result<NormEstimate> {
    if !(q >= 1.0) {
        return Err(Error::invalid("q", "must be at least 1"));
    }
    let d = f.dim;
    if d == 1 && cfg.kind == IntegratorKind::TensorQuadrature {
        let reach = op.budget.xi + op.partition.theta + 1.0;
        let span = reach.max(12.0);
        let mut pts = op.breakpoints_1d();
        pts.extend_from_slice(singular_points);
        pts.extend([-span, span, 0.0]);
        pts.retain(|t| t.abs() <= span);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let pieces: Vec<f64> = pts
            .par_windows(2)
            .map(|w| {
                integrate_lenient(
                    |x| (f.eval(&[x]) - op.eval(&[x])).abs().powf(q) * density(x),
                    w[0],
                    w[1],
                    Tolerance::relative(1e-8).with_abs(1e-300).with_max_subdivisions(50),
                )
                .value
            })
            .collect();
        let total = pairwise_sum(&pieces);
        return Ok(NormEstimate {
            value: total.powf(1.0 / q),
            stderr: 0.0,
            method: Method::AdaptiveGaussKronrod,
            diverged: false,
            profile: None,
        });
    }
    let n = cfg.node_or_sample_count.max(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![0.0; d];
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        for xj in x.iter_mut() {
            *xj = rng.sample(StandardNormal);
        }
        vals.push((f.eval(&x) - op.eval(&x)).abs().powf(q));
    }
    let m = pairwise_sum(&vals) / n as f64;
    let dev: Vec<f64> = vals.iter().map(|v| (v - m) * (v - m)).collect();
    let se = (pairwise_sum(&dev) / (n as f64 - 1.0) / n as f64).sqrt();
    let value = m.powf(1.0 / q);
    Ok(NormEstimate {
        value,
        stderr: if m > 0.0 { se * value / (q * m) } else { 0.0 },
        method: Method::MonteCarlo,
        diverged: false,
        profile: None,
    })
}

/// `sum_{|k| >= xi_n} ||f phi_k||_{L_q(gamma)}` in one dimension, over cells
/// with `|k| <= xi_n + extra`.
pub fn tail_norm_1d(f: &TestFunction, part: &PartitionOfUnity, xi: f64, q: f64, extra: usize) -> Result<f64> {
    if f.dim != 1 || part.dim != 1 {
        return Err(Error::invalid("d", "tail_norm_1d is one-dimensional"));
    }
    let lo = xi.ceil() as i64;
    let mut total = 0.0;
    let half = 0.5 * part.theta;
    for k in lo..=lo + extra as i64 {
        for sign in [-1i64, 1] {
            let kk = sign * k;
            if (kk as f64).abs() < xi {
                continue;
            }
            let c = kk as f64;
            let v = integrate_lenient(
                |x| {
                    let w = part.phi(&[kk], &[x]);
                    (w * f.eval(&[x])).abs().powf(q) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
                },
                c - half,
                c + half,
                Tolerance::relative(1e-10).with_abs(1e-300),
            );
            total += v.value.powf(1.0 / q);
            if k == 0 {
                break;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_match_closed_forms() {
        let f3 = quasi_interpolation_filter(3);
        assert!((f3[0] - 1.25).abs() < 1e-14 && (f3[1] + 0.125).abs() < 1e-14);
        let f4 = quasi_interpolation_filter(4);
        assert!((f4[0] - 4.0 / 3.0).abs() < 1e-14 && (f4[1] + 1.0 / 6.0).abs() < 1e-14);
        assert_eq!(quasi_interpolation_filter(2), vec![1.0]);
    }

    #[test]
    fn bspline_partition() {
        for k in 1..=5 {
            for i in 0..20 {
                let x = -0.5 + i as f64 / 20.0 + 0.013;
                let s: f64 = (-6..=6).map(|j| centered_bspline(k, x - j as f64)).sum();
                assert!((s - 1.0).abs() < 1e-12, "k={k}");
            }
        }
    }
}
