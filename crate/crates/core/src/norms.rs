//! Estimators for Gaussian Lebesgue and Sobolev norms and for the fractional
//! seminorms: Gagliardo on cubes and on `(R^d, gamma)`, the `K_{p s_tilde}`
//! kernel seminorm, and the mixed-smoothness variants.
//!
//! Pair integrals are written as `y = x + r u` with `r = e^v` on log-spaced
//! shells, which removes the diagonal singularity and yields a per-shell
//! profile used both for the tail below `r_min` and for divergence detection.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{derivative_expansion, gauss_hermite_rule, synthesize, HermiteExpansion, MultiIndex, SmoothnessParams};
use crate::ou_kernel::{geometry, k_sigma_ar, KernelEvalConfig, RadialKernelTable};
use crate::quad::{gauss_legendre, gauss_legendre_on, integrate_lenient, pairwise_sum, Tolerance};

/// Point-evaluable real function on `R^d`.
pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Supplies exact partial derivatives on request; `None` means "use finite differences".
pub type PartialProvider = Arc<dyn Fn(&MultiIndex) -> Option<PointFn> + Send + Sync>;

/// Declared membership, carried as metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessMeta {
    pub s: f64,
    pub p: f64,
    pub note: String,
}

/// A function together with whatever partial derivatives are known exactly.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub dim: usize,
    eval: PointFn,
    partials: BTreeMap<MultiIndex, PointFn>,
    provider: Option<PartialProvider>,
    /// Base finite-difference step, scaled by `max(1, |x|_inf)`.
    pub fd_step: f64,
    pub smoothness_meta: Option<SmoothnessMeta>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("exact_partials", &self.partials.keys().collect::<Vec<_>>())
            .field("provider", &self.provider.is_some())
            .finish()
    }
}

impl TestFunction {
    pub fn new<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(f),
            partials: BTreeMap::new(),
            provider: None,
            fd_step: 1e-4,
            smoothness_meta: None,
        }
    }

    /// Registers an exact partial derivative `D^alpha f`.
    pub fn with_partial<F>(mut self, alpha: MultiIndex, g: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.partials.insert(alpha, Arc::new(g));
        self
    }

    pub fn with_provider(mut self, provider: PartialProvider) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn with_meta(mut self, s: f64, p: f64, note: impl Into<String>) -> Self {
        self.smoothness_meta = Some(SmoothnessMeta { s, p, note: note.into() });
        self
    }

    /// The finite expansion `sum c_k H_k`, with exact partials from the
    /// derivative representation.
    pub fn from_expansion(name: impl Into<String>, e: HermiteExpansion) -> Self {
        let e = Arc::new(e);
        let dim = e.dim;
        let e_eval = Arc::clone(&e);
        let provider: PartialProvider = Arc::new(move |alpha: &MultiIndex| {
            let de = derivative_expansion(&e, alpha).ok()?;
            Some(Arc::new(move |x: &[f64]| synthesize(&de, x).unwrap_or(f64::NAN)) as PointFn)
        });
        Self::new(name, dim, move |x| synthesize(&e_eval, x).unwrap_or(f64::NAN)).with_provider(provider)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn eval_fn(&self) -> PointFn {
        Arc::clone(&self.eval)
    }

    pub fn has_exact_partial(&self, alpha: &MultiIndex) -> bool {
        alpha.l1() == 0
            || self.partials.contains_key(alpha)
            || self.provider.as_ref().is_some_and(|p| p(alpha).is_some())
    }

    /// `D^alpha f`: exact when declared, otherwise central differences with
    /// step `fd_step * 10^{m-1} * max(1, |x|_inf)` for a derivative of order
    /// `m` in a coordinate.
    pub fn partial(&self, alpha: &MultiIndex) -> Result<PointFn> {
        if alpha.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: alpha.dim(),
            });
        }
        if alpha.l1() == 0 {
            return Ok(self.eval_fn());
        }
        if let Some(g) = self.partials.get(alpha) {
            return Ok(Arc::clone(g));
        }
        if let Some(g) = self.provider.as_ref().and_then(|p| p(alpha)) {
            return Ok(g);
        }
        let f = self.eval_fn();
        let orders: Vec<u32> = alpha.entries().to_vec();
        let base = self.fd_step;
        Ok(Arc::new(move |x: &[f64]| {
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut stencil: Vec<(Vec<f64>, f64)> = vec![(x.to_vec(), 1.0)];
            for (j, &m) in orders.iter().enumerate() {
                if m == 0 {
                    continue;
                }
                let h = base * 10f64.powi(m as i32 - 1) * scale;
                let mut next = Vec::with_capacity(stencil.len() * (m as usize + 1));
                for (p, w) in &stencil {
                    let mut binom = 1.0;
                    for i in 0..=m {
                        let mut q = p.clone();
                        q[j] += (0.5 * m as f64 - i as f64) * h;
                        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                        next.push((q, w * sign * binom / h.powi(m as i32)));
                        binom = binom * (m - i) as f64 / (i + 1) as f64;
                    }
                }
                stencil = next;
            }
            stencil.iter().map(|(p, w)| w * f(p)).sum()
        }))
    }

    /// `c f`, with every exact partial scaled as well.
    pub fn scaled(&self, c: f64) -> Self {
        let f = self.eval_fn();
        let mut out = Self::new(format!("{}*{}", c, self.name), self.dim, move |x| c * f(x));
        out.fd_step = self.fd_step;
        out.smoothness_meta = self.smoothness_meta.clone();
        for (k, g) in &self.partials {
            let g = Arc::clone(g);
            out.partials.insert(k.clone(), Arc::new(move |x: &[f64]| c * g(x)));
        }
        if let Some(p) = &self.provider {
            let p = Arc::clone(p);
            out.provider = Some(Arc::new(move |a: &MultiIndex| {
                let g = p(a)?;
                Some(Arc::new(move |x: &[f64]| c * g(x)) as PointFn)
            }));
        }
        out
    }

    /// `f + g` (partials exact only where both are exact).
    pub fn sum(&self, other: &TestFunction) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let (f, g) = (self.eval_fn(), other.eval_fn());
        let mut out = Self::new(format!("{}+{}", self.name, other.name), self.dim, move |x| f(x) + g(x));
        let (a, b) = (self.clone(), other.clone());
        out.provider = Some(Arc::new(move |alpha: &MultiIndex| {
            if !(a.has_exact_partial(alpha) && b.has_exact_partial(alpha)) {
                return None;
            }
            let (da, db) = (a.partial(alpha).ok()?, b.partial(alpha).ok()?);
            Some(Arc::new(move |x: &[f64]| da(x) + db(x)) as PointFn)
        }));
        Ok(out)
    }
}

/// Tensor quadrature or Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorKind {
    TensorQuadrature,
    MonteCarlo,
}

/// Log-spaced radial shells for pair integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub shells: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Gauss–Legendre nodes per shell (in `log r`).
    pub nodes_per_shell: usize,
}

impl Default for RadialGrid {
    fn default() -> Self {
        Self {
            shells: 64,
            r_min: 1e-6,
            r_max: 20.0,
            nodes_per_shell: 4,
        }
    }
}

impl RadialGrid {
    fn validate(&self) -> Result<()> {
        if self.shells < 6 {
            return Err(Error::invalid("radial_grid.shells", "need at least 6 shells"));
        }
        if !(self.r_min > 0.0 && self.r_max > self.r_min) {
            return Err(Error::invalid("radial_grid", "need 0 < r_min < r_max"));
        }
        if self.nodes_per_shell == 0 {
            return Err(Error::invalid("radial_grid.nodes_per_shell", "must be positive"));
        }
        Ok(())
    }

    /// Same span with `shells` shells and the given upper radius.
    fn resized(&self, shells: usize, r_max: f64) -> Self {
        Self {
            shells,
            r_max: r_max.min(self.r_max).max(self.r_min * 2.0),
            ..*self
        }
    }

    fn log_width(&self) -> f64 {
        (self.r_max / self.r_min).ln() / self.shells as f64
    }

    /// `(v, weight, shell)` for every radial node, `r = e^v`.
    fn nodes(&self) -> Vec<(f64, f64, usize)> {
        let h = self.log_width();
        let lo = self.r_min.ln();
        let (gx, gw) = gauss_legendre(self.nodes_per_shell);
        let mut out = Vec::with_capacity(self.shells * self.nodes_per_shell);
        for j in 0..self.shells {
            let c = lo + (j as f64 + 0.5) * h;
            for (x, w) in gx.iter().zip(&gw) {
                out.push((c + 0.5 * h * x, 0.5 * h * w, j));
            }
        }
        out
    }

    fn centers(&self) -> Vec<f64> {
        let h = self.log_width();
        let lo = self.r_min.ln();
        (0..self.shells).map(|j| (lo + (j as f64 + 0.5) * h).exp()).collect()
    }
}

/// Integration controls shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub kind: IntegratorKind,
    /// Gauss–Hermite/Legendre nodes per coordinate, or total Monte Carlo samples.
    pub node_or_sample_count: usize,
    pub seed: u64,
    pub radial_grid: RadialGrid,
    /// Angular nodes on the circle for `d = 2` pair rules.
    pub directions: usize,
    pub kernel: KernelEvalConfig,
    /// Largest tolerated fraction of non-finite evaluations.
    pub max_nonfinite_fraction: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            kind: IntegratorKind::TensorQuadrature,
            node_or_sample_count: 40,
            seed: 0,
            radial_grid: RadialGrid::default(),
            directions: 24,
            kernel: KernelEvalConfig::default().with_rel_tol(1e-8),
            max_nonfinite_fraction: 1e-3,
        }
    }
}

impl IntegratorConfig {
    pub fn tensor(nodes: usize) -> Self {
        Self {
            node_or_sample_count: nodes,
            ..Self::default()
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            kind: IntegratorKind::MonteCarlo,
            node_or_sample_count: samples,
            seed,
            ..Self::default()
        }
    }

    pub fn with_radial_grid(mut self, grid: RadialGrid) -> Self {
        self.radial_grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            IntegratorKind::MonteCarlo if self.node_or_sample_count < 1000 => {
                return Err(Error::invalid("samples", "Monte Carlo needs at least 1000 samples"));
            }
            IntegratorKind::TensorQuadrature if self.node_or_sample_count == 0 => {
                return Err(Error::invalid("nodes", "must be positive"));
            }
            _ => {}
        }
        if self.directions < 4 {
            return Err(Error::invalid("directions", "need at least 4"));
        }
        self.kernel.validate()?;
        self.radial_grid.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GaussHermiteTensor,
    AdaptiveGaussKronrod,
    MonteCarlo,
    RadialShellsTensor,
    RadialShellsMonteCarlo,
    RadialScan,
}

/// Per-shell contributions of a pair integral, innermost shell first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellProfile {
    pub radii: Vec<f64>,
    pub contributions: Vec<f64>,
    /// Fitted `d log c / d log r` over the innermost third.
    pub inner_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    pub diverged: bool,
    pub profile: Option<ShellProfile>,
}

#[inline]
fn gauss_density(x: &[f64]) -> f64 {
    let s: f64 = x.iter().map(|v| v * v).sum();
    (-0.5 * s).exp() * (2.0 * PI).powf(-0.5 * x.len() as f64)
}

fn tensor_points(nodes: &[f64], weights: &[f64], d: usize) -> Vec<(Vec<f64>, f64)> {
    let n = nodes.len();
    let total = n.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let p: Vec<f64> = idx.iter().map(|&i| nodes[i]).collect();
        let w: f64 = idx.iter().map(|&i| weights[i]).product();
        out.push((p, w));
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

/// Mean of `g` under `gamma` with its standard error and the count of
/// rejected (non-finite) evaluations.
fn gamma_mean<G: Fn(&[f64]) -> f64>(g: G, d: usize, cfg: &IntegratorConfig) -> Result<(f64, f64, Method)> {
    cfg.validate()?;
    let tensor = cfg.kind == IntegratorKind::TensorQuadrature && d <= 3;
    if tensor && d == 1 {
        // Adaptive in one dimension so kinks are resolved.
        let mut rejected = 0usize;
        let mut evaluated = 0usize;
        let mut h = |x: f64| {
            evaluated += 1;
            let v = g(&[x]);
            if v.is_finite() {
                v * gauss_density(&[x])
            } else {
                rejected += 1;
                0.0
            }
        };
        let mut total = 0.0;
        for w in [-LP_HALF_WIDTH, -8.0, -2.0, 0.0, 2.0, 8.0, LP_HALF_WIDTH].windows(2) {
            total += integrate_lenient(&mut h, w[0], w[1], Tolerance::relative(1e-12).with_max_subdivisions(300)).value;
        }
        check_rejections(rejected, evaluated.max(1), cfg)?;
        Ok((total, 0.0, Method::AdaptiveGaussKronrod))
    } else if tensor {
        let rule = gauss_hermite_rule(cfg.node_or_sample_count);
        let pts = tensor_points(&rule.nodes, &rule.weights, d);
        let mut rejected = 0;
        let mut terms = Vec::with_capacity(pts.len());
        for (x, w) in &pts {
            let v = g(x);
            if v.is_finite() {
                terms.push(w * v);
            } else {
                rejected += 1;
            }
        }
        check_rejections(rejected, pts.len(), cfg)?;
        Ok((pairwise_sum(&terms), 0.0, Method::GaussHermiteTensor))
    } else {
        let n = cfg.node_or_sample_count.max(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut x = vec![0.0; d];
        let mut vals = Vec::with_capacity(n);
        let mut rejected = 0;
        for _ in 0..n {
            for xi in x.iter_mut() {
                *xi = rng.sample(StandardNormal);
            }
            let v = g(&x);
            if v.is_finite() {
                vals.push(v);
            } else {
                rejected += 1;
            }
        }
        check_rejections(rejected, n, cfg)?;
        let (m, se) = mean_stderr(&vals);
        Ok((m, se, Method::MonteCarlo))
    }
}

fn check_rejections(rejected: usize, total: usize, cfg: &IntegratorConfig) -> Result<()> {
    if rejected as f64 > cfg.max_nonfinite_fraction * total as f64 {
        Err(Error::NonFinite { rejected, total })
    } else {
        Ok(())
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = pairwise_sum(v) / n;
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// `(int |f|^p dgamma)^{1/p}`.
pub fn lp_gamma_norm(f: &TestFunction, p: f64, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    lp_of(&f.eval_fn(), f.dim, p, cfg)
}

fn lp_of(g: &PointFn, d: usize, p: f64, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", format!("must lie in [1, inf), got {p}")));
    }
    let (m, se, method) = gamma_mean(|x| g(x).abs().powf(p), d, cfg)?;
    let value = m.max(0.0).powf(1.0 / p);
    let stderr = if m > 0.0 { se * value / (p * m) } else { 0.0 };
    Ok(NormEstimate {
        value,
        stderr,
        method,
        diverged: false,
        profile: None,
    })
}

/// `(sum_{|alpha|_1 <= s} ||D^alpha f||_p^p)^{1/p}`.
pub fn sobolev_norm_integer(f: &TestFunction, s: u32, p: f64, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    let mut total = 0.0;
    let mut var = 0.0;
    let mut method = Method::GaussHermiteTensor;
    for alpha in MultiIndex::total_degree(f.dim, s) {
        let g = f.partial(&alpha)?;
        let est = lp_of(&g, f.dim, p, cfg).map_err(|e| e.context(format!("D^{:?} f", alpha.entries())))?;
        let vp = est.value.powf(p);
        total += vp;
        var += (p * est.value.powf(p - 1.0) * est.stderr).powi(2);
        method = est.method;
    }
    let value = total.powf(1.0 / p);
    let stderr = if total > 0.0 { var.sqrt() * value / (p * total) } else { 0.0 };
    Ok(NormEstimate {
        value,
        stderr,
        method,
        diverged: false,
        profile: None,
    })
}

/// Where pairs live: Lebesgue measure on `[a, b]^d`, or `gamma x gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairMeasure {
    Cube { a: f64, b: f64 },
    Gauss,
}

/// Singular weight in `|x - y|`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairWeight {
    /// `|x - y|^{-exponent}`.
    Power(f64),
    /// `K_sigma(x, y)`.
    Kernel(f64),
}

/// Raw output of one pair integral before combining over `alpha`.
#[derive(Debug, Clone)]
struct PairIntegral {
    value: f64,
    variance: f64,
    diverged: bool,
    profile: ShellProfile,
}

const DIVERGENCE_SLOPE: f64 = 0.05;
const GAUSS_HALF_WIDTH: f64 = 10.0;
const LP_HALF_WIDTH: f64 = 40.0;

fn finish_profile(grid: &RadialGrid, contributions: Vec<f64>, variances: Vec<f64>) -> PairIntegral {
    let radii = grid.centers();
    let s = contributions.len();
    let inner = (s / 3).max(3).min(s);
    let mut pts = Vec::new();
    let mut any_nonfinite = false;
    for j in 0..inner {
        let c = contributions[j];
        if !c.is_finite() {
            any_nonfinite = true;
        } else if c > 0.0 {
            pts.push((radii[j].ln(), c.ln()));
        }
    }
    let all_zero = contributions.iter().all(|&c| c == 0.0);
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    } else if any_nonfinite {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let nonfinite = contributions.iter().any(|c| !c.is_finite());
    let diverged = !all_zero && (nonfinite || slope <= DIVERGENCE_SLOPE);
    let profile = ShellProfile {
        radii,
        contributions: contributions.clone(),
        inner_slope: slope,
    };
    if diverged {
        return PairIntegral {
            value: f64::INFINITY,
            variance: 0.0,
            diverged: true,
            profile,
        };
    }
    let body = pairwise_sum(&contributions);
    let tail = if slope.is_finite() && contributions[0] > 0.0 {
        let q = (-slope * grid.log_width()).exp();
        contributions[0] * q / (1.0 - q)
    } else {
        0.0
    };
    PairIntegral {
        value: body + tail,
        variance: variances.iter().sum(),
        diverged: false,
        profile,
    }
}

/// Unit-sphere rule as `(u, weight)` covering the full sphere.
fn sphere_rule(d: usize, directions: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match d {
        1 => Ok(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]),
        2 => {
            let w = 2.0 * PI / directions as f64;
            Ok((0..directions)
                .map(|k| {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / directions as f64;
                    (vec![phi.cos(), phi.sin()], w)
                })
                .collect())
        }
        3 => {
            let nt = (directions / 2).max(4);
            let (ct, wt) = gauss_legendre(nt);
            let mut out = Vec::new();
            for (c, wc) in ct.iter().zip(&wt) {
                let st = (1.0 - c * c).sqrt();
                for k in 0..directions {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / directions as f64;
                    out.push((vec![st * phi.cos(), st * phi.sin(), *c], wc * 2.0 * PI / directions as f64));
                }
            }
            Ok(out)
        }
        _ => Err(Error::invalid("d", "tensor pair rules support d <= 3; use monte-carlo")),
    }
}

fn sphere_area(d: usize) -> f64 {
    let df = d as f64;
    2.0 * PI.powf(0.5 * df) / statrs::function::gamma::gamma(0.5 * df)
}

/// Weight factory for one radial node: returns `W(x, y)` including the
/// density of `y` for Gaussian pairs (the density of `x` is handled by the
/// outer rule).
struct RadialWeight {
    table: Option<RadialKernelTable>,
    power: f64,
    sigma: f64,
    r: f64,
    d: usize,
    kernel: KernelEvalConfig,
}

impl RadialWeight {
    fn new(weight: PairWeight, r: f64, d: usize, a_max: f64, kernel: &KernelEvalConfig, tabulate: bool) -> Result<Self> {
        match weight {
            PairWeight::Power(e) => Ok(Self {
                table: None,
                power: r.powf(-e),
                sigma: 0.0,
                r,
                d,
                kernel: *kernel,
            }),
            PairWeight::Kernel(sigma) => Ok(Self {
                table: if tabulate {
                    Some(RadialKernelTable::new(sigma, r, d, a_max, kernel)?)
                } else {
                    None
                },
                power: 0.0,
                sigma,
                r,
                d,
                kernel: *kernel,
            }),
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if self.sigma == 0.0 {
            return Ok(self.power);
        }
        let (a, _) = geometry(x, y);
        match &self.table {
            Some(t) => t.eval(a),
            None => k_sigma_ar(self.sigma, a, self.r * self.r, self.d, &self.kernel),
        }
    }
}

fn valid_interval(a: f64, b: f64, shift: f64) -> Option<(f64, f64)> {
    let lo = a.max(a - shift);
    let hi = b.min(b - shift);
    (hi > lo).then_some((lo, hi))
}

/// `int int |g(x) - g(y)|^p W(x, y) dmu(x) dmu(y)` over shells.
fn pair_integral(
    g: &PointFn,
    d: usize,
    p: f64,
    measure: PairMeasure,
    weight: PairWeight,
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    cfg.validate()?;
    let grid = match measure {
        PairMeasure::Cube { a, b } => cfg.radial_grid.resized(cfg.radial_grid.shells, (b - a) * (d as f64).sqrt()),
        PairMeasure::Gauss => cfg.radial_grid,
    };
    match cfg.kind {
        IntegratorKind::TensorQuadrature => pair_tensor(g, d, p, measure, weight, &grid, cfg),
        IntegratorKind::MonteCarlo => pair_monte_carlo(g, d, p, measure, weight, &grid, cfg),
    }
}

fn pair_tensor(
    g: &PointFn,
    d: usize,
    p: f64,
    measure: PairMeasure,
    weight: PairWeight,
    grid: &RadialGrid,
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    let dirs = sphere_rule(d, cfg.directions)?;
    let radial = grid.nodes();
    let n = cfg.node_or_sample_count;
    // Outer rule for d >= 2 (fixed); d = 1 integrates adaptively in x.
    let gh = gauss_hermite_rule(n);
    let gauss_pts = if d >= 2 && measure == PairMeasure::Gauss {
        tensor_points(&gh.nodes, &gh.weights, d)
    } else {
        Vec::new()
    };
    let gauss_vals: Vec<f64> = gauss_pts.iter().map(|(x, _)| g(x)).collect();
    let x_extent = match measure {
        PairMeasure::Gauss if d == 1 => GAUSS_HALF_WIDTH,
        PairMeasure::Gauss => gh.nodes.last().copied().unwrap_or(0.0) * (d as f64).sqrt(),
        PairMeasure::Cube { a, b } => a.abs().max(b.abs()) * (d as f64).sqrt(),
    };

    let per_node: Vec<Result<f64>> = radial
        .par_iter()
        .map(|&(v, wv, _)| -> Result<f64> {
            let r = v.exp();
            let a_max = 0.25 * (x_extent * x_extent + (x_extent + r) * (x_extent + r));
            let w = RadialWeight::new(weight, r, d, a_max, &cfg.kernel, true)?;
            let mut dir_terms = Vec::with_capacity(dirs.len());
            for (u, wu) in &dirs {
                let inner = match (measure, d) {
                    (PairMeasure::Gauss, 1) => {
                        let shift = r * u[0];
                        let res = integrate_lenient(
                            |x| {
                                let y = x + shift;
                                let dv = (g(&[x]) - g(&[y])).abs().powf(p);
                                if dv == 0.0 {
                                    return 0.0;
                                }
                                dv * w.eval(&[x], &[y]).unwrap_or(f64::NAN) * gauss_density(&[x]) * gauss_density(&[y])
                            },
                            -GAUSS_HALF_WIDTH,
                            GAUSS_HALF_WIDTH,
                            Tolerance::relative(1e-8).with_max_subdivisions(150),
                        );
                        accept(res)
                    }
                    (PairMeasure::Cube { a, b }, 1) => match valid_interval(a, b, r * u[0]) {
                        None => 0.0,
                        Some((lo, hi)) => {
                            let shift = r * u[0];
                            let res = integrate_lenient(
                                |x| {
                                    let y = x + shift;
                                    let dv = (g(&[x]) - g(&[y])).abs().powf(p);
                                    if dv == 0.0 {
                                        return 0.0;
                                    }
                                    dv * w.eval(&[x], &[y]).unwrap_or(f64::NAN)
                                },
                                lo,
                                hi,
                                Tolerance::relative(1e-8).with_max_subdivisions(150),
                            );
                            accept(res)
                        }
                    },
                    (PairMeasure::Gauss, _) => {
                        let mut terms = Vec::with_capacity(gauss_pts.len());
                        let mut y = vec![0.0; d];
                        for ((x, wx), gx) in gauss_pts.iter().zip(&gauss_vals) {
                            for j in 0..d {
                                y[j] = x[j] + r * u[j];
                            }
                            let dv = (gx - g(&y)).abs().powf(p);
                            if dv == 0.0 {
                                continue;
                            }
                            terms.push(wx * dv * w.eval(x, &y)? * gauss_density(&y));
                        }
                        pairwise_sum(&terms)
                    }
                    (PairMeasure::Cube { a, b }, _) => {
                        let mut boxes = Vec::with_capacity(d);
                        for j in 0..d {
                            match valid_interval(a, b, r * u[j]) {
                                Some(iv) => boxes.push(iv),
                                None => break,
                            }
                        }
                        if boxes.len() < d {
                            0.0
                        } else {
                            let rules: Vec<(Vec<f64>, Vec<f64>)> =
                                boxes.iter().map(|&(lo, hi)| gauss_legendre_on(n, lo, hi)).collect();
                            let mut terms = Vec::new();
                            let mut idx = vec![0usize; d];
                            let mut x = vec![0.0; d];
                            let mut y = vec![0.0; d];
                            for _ in 0..n.pow(d as u32) {
                                let mut wx = 1.0;
                                for j in 0..d {
                                    x[j] = rules[j].0[idx[j]];
                                    y[j] = x[j] + r * u[j];
                                    wx *= rules[j].1[idx[j]];
                                }
                                let dv = (g(&x) - g(&y)).abs().powf(p);
                                if dv != 0.0 {
                                    terms.push(wx * dv * w.eval(&x, &y)?);
                                }
                                for j in (0..d).rev() {
                                    idx[j] += 1;
                                    if idx[j] < n {
                                        break;
                                    }
                                    idx[j] = 0;
                                }
                            }
                            pairwise_sum(&terms)
                        }
                    }
                };
                dir_terms.push(wu * inner);
            }
            Ok(wv * r.powi(d as i32) * pairwise_sum(&dir_terms))
        })
        .collect();
    let mut contributions = vec![0.0; grid.shells];
    for (val, &(_, _, shell)) in per_node.into_iter().zip(&radial) {
        contributions[shell] += val?;
    }
    let variances = vec![0.0; grid.shells];
    Ok(finish_profile(grid, contributions, variances))
}

/// Accepts a lenient adaptive result unless its error estimate is a visible
/// fraction of the value (then the shell is reported as unbounded).
fn accept(res: crate::quad::Integral) -> f64 {
    if !res.value.is_finite() {
        return f64::INFINITY;
    }
    if res.converged || res.error <= 1e-3 * res.value.abs() {
        res.value
    } else {
        f64::INFINITY
    }
}

fn pair_monte_carlo(
    g: &PointFn,
    d: usize,
    p: f64,
    measure: PairMeasure,
    weight: PairWeight,
    grid: &RadialGrid,
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    let per_shell = (cfg.node_or_sample_count / grid.shells).max(16);
    let h = grid.log_width();
    let lo = grid.r_min.ln();
    let area = sphere_area(d);
    let results: Vec<Result<(f64, f64)>> = (0..grid.shells)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(j as u64 + 1);
            let mut vals = Vec::with_capacity(per_shell);
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut u = vec![0.0; d];
            let mut rejected = 0;
            for _ in 0..per_shell {
                let v = lo + h * (j as f64 + rng.random::<f64>());
                let r = v.exp();
                let mut nu: f64 = 0.0;
                for uj in u.iter_mut() {
                    *uj = rng.sample(StandardNormal);
                    nu += *uj * *uj;
                }
                let nu = nu.sqrt();
                let (scale, inside) = match measure {
                    PairMeasure::Gauss => {
                        for xj in x.iter_mut() {
                            *xj = rng.sample(StandardNormal);
                        }
                        (1.0, true)
                    }
                    PairMeasure::Cube { a, b } => {
                        for xj in x.iter_mut() {
                            *xj = a + (b - a) * rng.random::<f64>();
                        }
                        ((b - a).powi(d as i32), true)
                    }
                };
                let mut ok = inside;
                for k in 0..d {
                    y[k] = x[k] + r * u[k] / nu;
                    if let PairMeasure::Cube { a, b } = measure {
                        if y[k] < a || y[k] > b {
                            ok = false;
                        }
                    }
                }
                if !ok {
                    vals.push(0.0);
                    continue;
                }
                let dv = (g(&x) - g(&y)).abs().powf(p);
                let val = if dv == 0.0 {
                    0.0
                } else {
                    let w = RadialWeight::new(weight, r, d, 0.0, &cfg.kernel, false)?.eval(&x, &y)?;
                    let dens = if measure == PairMeasure::Gauss { gauss_density(&y) } else { 1.0 };
                    scale * dv * w * dens * r.powi(d as i32) * h * area
                };
                if val.is_finite() {
                    vals.push(val);
                } else {
                    rejected += 1;
                }
            }
            check_rejections(rejected, per_shell, cfg)?;
            let (m, se) = mean_stderr(&vals);
            Ok((m, se * se))
        })
        .collect();
    let mut contributions = Vec::with_capacity(grid.shells);
    let mut variances = Vec::with_capacity(grid.shells);
    for r in results {
        let (m, v) = r?;
        contributions.push(m);
        variances.push(v);
    }
    Ok(finish_profile(grid, contributions, variances))
}

fn require_fractional(params: &SmoothnessParams, dim: usize) -> Result<()> {
    if params.is_integer() {
        return Err(Error::invalid("s", "fractional seminorms need s not in N"));
    }
    if params.d != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: params.d,
        });
    }
    Ok(())
}

fn combine(parts: Vec<PairIntegral>, p: f64, cfg: &IntegratorConfig) -> NormEstimate {
    let method = match cfg.kind {
        IntegratorKind::TensorQuadrature => Method::RadialShellsTensor,
        IntegratorKind::MonteCarlo => Method::RadialShellsMonteCarlo,
    };
    let diverged = parts.iter().any(|q| q.diverged);
    let profile = parts
        .iter()
        .find(|q| q.diverged)
        .or_else(|| parts.first())
        .map(|q| q.profile.clone());
    if diverged {
        return NormEstimate {
            value: f64::INFINITY,
            stderr: 0.0,
            method,
            diverged: true,
            profile,
        };
    }
    let mut value = 0.0;
    let mut var = 0.0;
    for q in &parts {
        let v = q.value.max(0.0);
        let root = v.powf(1.0 / p);
        value += root;
        if v > 0.0 {
            var += (root / (p * v)).powi(2) * q.variance;
        }
    }
    NormEstimate {
        value,
        stderr: var.sqrt(),
        method,
        diverged: false,
        profile,
    }
}

fn isotropic_seminorm(
    f: &TestFunction,
    params: &SmoothnessParams,
    measure: PairMeasure,
    weight: PairWeight,
    cfg: &IntegratorConfig,
) -> Result<NormEstimate> {
    require_fractional(params, f.dim)?;
    let mut parts = Vec::new();
    for alpha in MultiIndex::total_degree(f.dim, params.s_bar()) {
        if alpha.l1() != params.s_bar() {
            continue;
        }
        let g = f.partial(&alpha)?;
        let part = pair_integral(&g, f.dim, params.p, measure, weight, cfg)
            .map_err(|e| e.context(format!("seminorm of D^{:?} {}", alpha.entries(), f.name)))?;
        parts.push(part);
    }
    Ok(combine(parts, params.p, cfg))
}

/// Gagliardo seminorm on the cube `[a, b]^d` with Lebesgue measure.
pub fn gagliardo_seminorm_cube(
    f: &TestFunction,
    params: &SmoothnessParams,
    cube: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<NormEstimate> {
    let (a, b) = cube;
    if !(b > a) {
        return Err(Error::invalid("cube", "need a < b"));
    }
    let e = f.dim as f64 + params.s_tilde() * params.p;
    isotropic_seminorm(f, params, PairMeasure::Cube { a, b }, PairWeight::Power(e), cfg)
}

/// Gagliardo seminorm against `gamma x gamma`.
pub fn gagliardo_seminorm_gauss(f: &TestFunction, params: &SmoothnessParams, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    let e = f.dim as f64 + params.s_tilde() * params.p;
    isotropic_seminorm(f, params, PairMeasure::Gauss, PairWeight::Power(e), cfg)
}

/// Kernel seminorm with weight `K_{p s_tilde}` against `gamma x gamma`.
pub fn kernel_seminorm_gauss(f: &TestFunction, params: &SmoothnessParams, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    let sigma = params.p * params.s_tilde();
    isotropic_seminorm(f, params, PairMeasure::Gauss, PairWeight::Kernel(sigma), cfg)
}

/// Full fractional norm `||f||_{W^{s_bar}_p(gamma)} + [f]` for the kernel scale.
pub fn kernel_sobolev_norm(f: &TestFunction, params: &SmoothnessParams, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    let lp_cfg = IntegratorConfig {
        node_or_sample_count: if cfg.kind == IntegratorKind::TensorQuadrature {
            cfg.node_or_sample_count.max(30)
        } else {
            cfg.node_or_sample_count
        },
        ..*cfg
    };
    let base = sobolev_norm_integer(f, params.s_bar(), params.p, &lp_cfg)?;
    let semi = kernel_seminorm_gauss(f, params, cfg)?;
    Ok(NormEstimate {
        value: base.value + semi.value,
        stderr: (base.stderr.powi(2) + semi.stderr.powi(2)).sqrt(),
        method: semi.method,
        diverged: semi.diverged,
        profile: semi.profile,
    })
}

/// `Delta^e_{y_e} f(x) = prod_{j in e} (I - T_j) f(x)`, where `T_j` replaces
/// `x_j` by `y_j`; expanded into `2^{|e|}` signed evaluations.
pub fn mixed_difference<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, e: &[usize], x: &[f64], y_e: &[f64]) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::invalid("e", "must be nonempty"));
    }
    if e.len() != y_e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: y_e.len(),
        });
    }
    if e.iter().any(|&j| j >= x.len()) {
        return Err(Error::invalid("e", "coordinate index out of range"));
    }
    Ok(mixed_difference_unchecked(f, e, x, y_e, &mut x.to_vec()))
}

fn mixed_difference_unchecked<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, e: &[usize], x: &[f64], y_e: &[f64], buf: &mut [f64]) -> f64 {
    let m = e.len();
    let mut total = 0.0;
    let mut size = 0.0;
    for mask in 0u32..(1u32 << m) {
        buf.copy_from_slice(x);
        let mut ones = 0;
        for (i, &j) in e.iter().enumerate() {
            if mask & (1 << i) != 0 {
                buf[j] = y_e[i];
                ones += 1;
            }
        }
        let sign = if ones % 2 == 0 { 1.0 } else { -1.0 };
        let v = f(buf);
        total += sign * v;
        size += v.abs();
    }
    // Differences below the rounding level of the 2^m-term sum are zero.
    if total.abs() <= 16.0 * f64::EPSILON * size {
        0.0
    } else {
        total
    }
}

/// Mixed-smoothness seminorm flavor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "flavor")]
pub enum MixedFlavor {
    /// Lebesgue measure on `[a, b]^d` with `prod |x_j - y_j|^{-1 - s_tilde p}`.
    CubeGagliardo { a: f64, b: f64 },
    /// `gamma` with `prod K_{p s_tilde}(x_j, y_j)` (univariate kernels).
    GaussKernel,
}

/// All nonempty subsets of `{0, .., d-1}` in increasing bitmask order.
fn nonempty_subsets(d: usize) -> Vec<Vec<usize>> {
    (1u32..(1u32 << d))
        .map(|m| (0..d).filter(|j| m & (1 << j) != 0).collect())
        .collect()
}

/// One `(alpha, e)` contribution of the mixed seminorm, before the `1/p` root.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTerm {
    pub alpha: MultiIndex,
    pub e: Vec<usize>,
    pub integral: f64,
    pub diverged: bool,
}

/// Mixed-smoothness seminorm: sum over `|alpha|_inf = s_bar` and nonempty
/// `e` of `(int int |Delta^e D^alpha f|^p prod_j w(x_j, y_j))^{1/p}`.
pub fn mixed_seminorm(
    f: &TestFunction,
    params: &SmoothnessParams,
    flavor: MixedFlavor,
    cfg: &IntegratorConfig,
) -> Result<NormEstimate> {
    let parts = mixed_parts(f, params, flavor, cfg)?;
    Ok(combine(parts.into_iter().map(|(_, _, q)| q).collect(), params.p, cfg))
}

/// The individual terms of [`mixed_seminorm`].
pub fn mixed_seminorm_terms(
    f: &TestFunction,
    params: &SmoothnessParams,
    flavor: MixedFlavor,
    cfg: &IntegratorConfig,
) -> Result<Vec<MixedTerm>> {
    Ok(mixed_parts(f, params, flavor, cfg)?
        .into_iter()
        .map(|(alpha, e, q)| MixedTerm {
            alpha,
            e,
            integral: q.value,
            diverged: q.diverged,
        })
        .collect())
}

fn mixed_parts(
    f: &TestFunction,
    params: &SmoothnessParams,
    flavor: MixedFlavor,
    cfg: &IntegratorConfig,
) -> Result<Vec<(MultiIndex, Vec<usize>, PairIntegral)>> {
    require_fractional(params, f.dim)?;
    cfg.validate()?;
    let d = f.dim;
    let sbar = params.s_bar();
    let mut parts = Vec::new();
    for alpha in MultiIndex::cube(d, sbar) {
        if alpha.linf() != sbar {
            continue;
        }
        let g = f.partial(&alpha)?;
        for e in nonempty_subsets(d) {
            let part = mixed_term(&g, d, &e, params, flavor, cfg)
                .map_err(|err| err.context(format!("mixed term alpha={:?} e={:?}", alpha.entries(), e)))?;
            parts.push((alpha.clone(), e, part));
        }
    }
    Ok(parts)
}

fn mixed_term(
    g: &PointFn,
    d: usize,
    e: &[usize],
    params: &SmoothnessParams,
    flavor: MixedFlavor,
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    let m = e.len();
    let p = params.p;
    let sp = params.s_tilde() * p;
    let shells = if m == 1 { cfg.radial_grid.shells } else { 16 };
    let grid = match flavor {
        MixedFlavor::CubeGagliardo { a, b } => cfg.radial_grid.resized(shells, b - a),
        MixedFlavor::GaussKernel => cfg.radial_grid.resized(shells, cfg.radial_grid.r_max),
    };
    let radial = grid.nodes();
    let univariate: Vec<RadialWeight> = match flavor {
        MixedFlavor::CubeGagliardo { .. } => radial
            .iter()
            .map(|&(v, _, _)| RadialWeight::new(PairWeight::Power(1.0 + sp), v.exp(), 1, 0.0, &cfg.kernel, false))
            .collect::<Result<_>>()?,
        MixedFlavor::GaussKernel => radial
            .par_iter()
            .map(|&(v, _, _)| {
                let r = v.exp();
                let ext = GAUSS_HALF_WIDTH;
                RadialWeight::new(
                    PairWeight::Kernel(sp),
                    r,
                    1,
                    0.25 * (ext * ext + (ext + r) * (ext + r)),
                    &cfg.kernel,
                    true,
                )
            })
            .collect::<Result<_>>()?,
    };
    match cfg.kind {
        IntegratorKind::TensorQuadrature => mixed_tensor(g, d, e, p, flavor, &grid, &radial, &univariate, cfg),
        IntegratorKind::MonteCarlo => mixed_monte_carlo(g, d, e, p, flavor, &grid, sp, cfg),
    }
}

/// Univariate factor `w(x_j, y_j) * density(y_j) * r_j` for the mixed rule.
#[inline]
fn mixed_factor(w: &RadialWeight, flavor: MixedFlavor, xj: f64, yj: f64, r: f64) -> Result<f64> {
    let base = w.eval(&[xj], &[yj])? * r;
    Ok(match flavor {
        MixedFlavor::GaussKernel => base * gauss_density(&[yj]),
        MixedFlavor::CubeGagliardo { .. } => base,
    })
}

#[allow(clippy::too_many_arguments)]
fn mixed_tensor(
    g: &PointFn,
    d: usize,
    e: &[usize],
    p: f64,
    flavor: MixedFlavor,
    grid: &RadialGrid,
    radial: &[(f64, f64, usize)],
    univariate: &[RadialWeight],
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    let m = e.len();
    let nr = radial.len();
    let n = cfg.node_or_sample_count;
    let gh = gauss_hermite_rule(n);
    // Cells of the product radial grid, signs included.
    let cells: Vec<(Vec<usize>, u32)> = {
        let mut out = Vec::new();
        let mut idx = vec![0usize; m];
        loop {
            for signs in 0u32..(1u32 << m) {
                out.push((idx.clone(), signs));
            }
            let mut k = m;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < nr {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
        out
    };
    let results: Vec<Result<(usize, f64)>> = cells
        .par_iter()
        .map(|(idx, signs)| -> Result<(usize, f64)> {
            let shifts: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(i, &ri)| {
                    let r = radial[ri].0.exp();
                    if signs & (1 << i) != 0 {
                        -r
                    } else {
                        r
                    }
                })
                .collect();
            let radial_w: f64 = idx.iter().map(|&ri| radial[ri].1).product();
            let shell = idx.iter().map(|&ri| radial[ri].2).min().unwrap_or(0);
            let inner = |x: &[f64], buf: &mut Vec<f64>, ye: &mut Vec<f64>| -> Result<f64> {
                for (i, &j) in e.iter().enumerate() {
                    ye[i] = x[j] + shifts[i];
                }
                let dv = mixed_difference_unchecked(&**g, e, x, ye, buf).abs().powf(p);
                if dv == 0.0 {
                    return Ok(0.0);
                }
                let mut w = dv;
                for (i, &j) in e.iter().enumerate() {
                    w *= mixed_factor(&univariate[idx[i]], flavor, x[j], ye[i], shifts[i].abs())?;
                }
                Ok(w)
            };
            let mut buf = vec![0.0; d];
            let mut ye = vec![0.0; m];
            let value = match flavor {
                MixedFlavor::GaussKernel if d == 1 => {
                    let res = integrate_lenient(
                        |x| {
                            let xv = [x];
                            let mut b = vec![0.0; 1];
                            let mut y = vec![0.0; 1];
                            inner(&xv, &mut b, &mut y).unwrap_or(f64::NAN) * gauss_density(&xv)
                        },
                        -GAUSS_HALF_WIDTH,
                        GAUSS_HALF_WIDTH,
                        Tolerance::relative(1e-8).with_max_subdivisions(150),
                    );
                    accept(res)
                }
                MixedFlavor::CubeGagliardo { a, b } if d == 1 => match valid_interval(a, b, shifts[0]) {
                    None => 0.0,
                    Some((lo, hi)) => {
                        let res = integrate_lenient(
                            |x| {
                                let mut bb = vec![0.0; 1];
                                let mut y = vec![0.0; 1];
                                inner(&[x], &mut bb, &mut y).unwrap_or(f64::NAN)
                            },
                            lo,
                            hi,
                            Tolerance::relative(1e-8).with_max_subdivisions(150),
                        );
                        accept(res)
                    }
                },
                MixedFlavor::GaussKernel => {
                    let mut terms = Vec::with_capacity(n.pow(d as u32));
                    for (x, wx) in tensor_points(&gh.nodes, &gh.weights, d) {
                        terms.push(wx * inner(&x, &mut buf, &mut ye)?);
                    }
                    pairwise_sum(&terms)
                }
                MixedFlavor::CubeGagliardo { a, b } => {
                    let mut rules = Vec::with_capacity(d);
                    let mut empty = false;
                    for j in 0..d {
                        let iv = match e.iter().position(|&k| k == j) {
                            Some(i) => valid_interval(a, b, shifts[i]),
                            None => Some((a, b)),
                        };
                        match iv {
                            Some((lo, hi)) => rules.push(gauss_legendre_on(n, lo, hi)),
                            None => {
                                empty = true;
                                break;
                            }
                        }
                    }
                    if empty {
                        0.0
                    } else {
                        let mut terms = Vec::new();
                        let mut ix = vec![0usize; d];
                        let mut x = vec![0.0; d];
                        for _ in 0..n.pow(d as u32) {
                            let mut wx = 1.0;
                            for j in 0..d {
                                x[j] = rules[j].0[ix[j]];
                                wx *= rules[j].1[ix[j]];
                            }
                            terms.push(wx * inner(&x, &mut buf, &mut ye)?);
                            for j in (0..d).rev() {
                                ix[j] += 1;
                                if ix[j] < n {
                                    break;
                                }
                                ix[j] = 0;
                            }
                        }
                        pairwise_sum(&terms)
                    }
                }
            };
            Ok((shell, radial_w * value))
        })
        .collect();
    let mut contributions = vec![0.0; grid.shells];
    for r in results {
        let (shell, v) = r?;
        contributions[shell] += v;
    }
    Ok(finish_profile(grid, contributions, vec![0.0; grid.shells]))
}

#[allow(clippy::too_many_arguments)]
fn mixed_monte_carlo(
    g: &PointFn,
    d: usize,
    e: &[usize],
    p: f64,
    flavor: MixedFlavor,
    grid: &RadialGrid,
    sp: f64,
    cfg: &IntegratorConfig,
) -> Result<PairIntegral> {
    let m = e.len();
    let h = grid.log_width();
    let lo = grid.r_min.ln();
    let span = h * grid.shells as f64;
    let per_shell = (cfg.node_or_sample_count / grid.shells).max(16);
    // Shell j holds samples whose smallest radius lies in shell j; the
    // remaining radii are drawn from shells >= j.
    let results: Vec<Result<(f64, f64)>> = (0..grid.shells)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(j as u64 + 1);
            let mut vals = Vec::with_capacity(per_shell);
            let mut x = vec![0.0; d];
            let mut ye = vec![0.0; m];
            let mut buf = vec![0.0; d];
            let mut rejected = 0;
            let upper = span - h * j as f64;
            for _ in 0..per_shell {
                let lead = rng.random_range(0..m);
                let mut w_rad = 1.0;
                let mut radii = vec![0.0; m];
                for i in 0..m {
                    let v = if i == lead {
                        w_rad *= h;
                        lo + h * (j as f64 + rng.random::<f64>())
                    } else {
                        w_rad *= upper;
                        lo + h * j as f64 + upper * rng.random::<f64>()
                    };
                    radii[i] = v.exp();
                }
                // Each configuration is reachable from every coordinate that
                // attains the minimum; weight by the multiplicity m.
                let min_idx = (0..m).min_by(|&a, &b| radii[a].total_cmp(&radii[b])).unwrap_or(0);
                if min_idx != lead {
                    vals.push(0.0);
                    continue;
                }
                w_rad *= m as f64;
                let scale = match flavor {
                    MixedFlavor::GaussKernel => {
                        for xj in x.iter_mut() {
                            *xj = rng.sample(StandardNormal);
                        }
                        1.0
                    }
                    MixedFlavor::CubeGagliardo { a, b } => {
                        for xj in x.iter_mut() {
                            *xj = a + (b - a) * rng.random::<f64>();
                        }
                        (b - a).powi(d as i32)
                    }
                };
                let mut inside = true;
                let mut sign_w = 1.0;
                for (i, &k) in e.iter().enumerate() {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign_w *= 2.0;
                    ye[i] = x[k] + s * radii[i];
                    if let MixedFlavor::CubeGagliardo { a, b } = flavor {
                        if ye[i] < a || ye[i] > b {
                            inside = false;
                        }
                    }
                }
                if !inside {
                    vals.push(0.0);
                    continue;
                }
                let dv = mixed_difference_unchecked(&**g, e, &x, &ye, &mut buf).abs().powf(p);
                let mut val = scale * dv * w_rad * sign_w;
                if dv != 0.0 {
                    for (i, &k) in e.iter().enumerate() {
                        let w = match flavor {
                            MixedFlavor::CubeGagliardo { .. } => radii[i].powf(-1.0 - sp),
                            MixedFlavor::GaussKernel => {
                                let (a, r2) = geometry(&[x[k]], &[ye[i]]);
                                k_sigma_ar(sp, a, r2, 1, &cfg.kernel)? * gauss_density(&[ye[i]])
                            }
                        };
                        val *= w * radii[i];
                    }
                } else {
                    val = 0.0;
                }
                if val.is_finite() {
                    vals.push(val);
                } else {
                    rejected += 1;
                }
            }
            check_rejections(rejected, per_shell, cfg)?;
            let (mean, se) = mean_stderr(&vals);
            Ok((mean, se * se))
        })
        .collect();
    let mut contributions = Vec::with_capacity(grid.shells);
    let mut variances = Vec::with_capacity(grid.shells);
    for r in results {
        let (mean, v) = r?;
        contributions.push(mean);
        variances.push(v);
    }
    Ok(finish_profile(grid, contributions, variances))
}

/// `(R, (int_{|x| <= R} |f|^q dgamma)^{1/q})` for the counterexample
/// `f(x) = e^{|x|^2/(2p)} (1 + |x|^2)^{-m}` in dimension `d`.
pub fn embedding_counterexample_scan(m: u32, p: f64, q: f64, d: usize, radius_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if m == 0 {
        return Err(Error::invalid("m", "must be positive"));
    }
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::invalid("p, q", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    let area = sphere_area(d);
    let df = d as f64;
    let mut out = Vec::with_capacity(radius_grid.len());
    let mut prev_r = 0.0;
    let mut acc = 0.0;
    let mut sorted = radius_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &big_r in &sorted {
        // Radial density of |f|^q dgamma in log form.
        let integrand = |s: f64| -> f64 {
            let s2 = s * s;
            let log = q * (s2 / (2.0 * p) - m as f64 * (1.0 + s2).ln()) - 0.5 * s2 - 0.5 * df * (2.0 * PI).ln()
                + (df - 1.0) * s.ln();
            area * log.exp()
        };
        let piece = integrate_lenient(integrand, prev_r, big_r, Tolerance::relative(1e-12).with_max_subdivisions(400));
        acc += piece.value;
        prev_r = big_r;
        out.push((big_r, acc.powf(1.0 / q)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_partials_of_cubic() {
        let f = TestFunction::new("cubic", 2, |x| x[0].powi(3) * x[1] + x[1] * x[1]);
        let d10 = f.partial(&MultiIndex::new(vec![1, 0])).unwrap();
        assert!((d10(&[0.5, 2.0]) - 3.0 * 0.25 * 2.0).abs() < 1e-7);
        let d21 = f.partial(&MultiIndex::new(vec![2, 1])).unwrap();
        assert!((d21(&[0.5, 2.0]) - 3.0).abs() < 1e-5);
    }

    #[test]
    fn subsets_enumerated() {
        assert_eq!(nonempty_subsets(2), vec![vec![0], vec![1], vec![0, 1]]);
    }
}
