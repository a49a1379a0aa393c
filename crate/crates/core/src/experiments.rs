//! Configuration-driven experiments: the test-function library, log-log
//! rate fits with bootstrap intervals, and report generation (CSV plus a
//! JSON summary of checked criteria).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    allocate, approximation_error, assemble, build_partition, choose_aux_params_for, local_fourier, local_spline_sampler,
    AuxFlavor, LocalOperator,
};
use crate::error::{Error, Result};
use crate::hermite::{hermite_eval, hs_norm, HermiteExpansion, MultiIndex, SmoothnessParams};
use crate::norms::{
    embedding_counterexample_scan, gagliardo_seminorm_cube, gagliardo_seminorm_gauss, kernel_seminorm_gauss,
    kernel_sobolev_norm, mixed_seminorm, IntegratorConfig, MixedFlavor, NormEstimate, PartialProvider, PointFn,
    TestFunction,
};
use crate::ou_kernel::{frac_eigenvalue, frac_ou_integral, k_sigma, kernel_lower_bound, EigenMode, KernelEvalConfig};
use crate::widths::{count_ball, sigma_rearranged, width_curve_exact, width_limit_constant};

/// Location of the kink in the `kink-beta` family.
pub const KINK_CENTER: f64 = 0.1234567;
/// Half-width of the kink window.
pub const KINK_WINDOW: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Bootstrap 90% interval for the slope.
    pub slope_ci90: (f64, f64),
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

/// Least-squares fit of `log error` against `log n`, bootstrap by
/// resampling points (200 resamples, seed 0).
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    let with_err: Vec<(f64, f64, f64)> = points.iter().map(|&(n, e)| (n, e, 0.0)).collect();
    rate_fit_with_errors(&with_err, 200, 0)
}

/// As [`rate_fit`] with per-point standard errors: each bootstrap replicate
/// also perturbs the errors by their standard errors.
pub fn rate_fit_with_errors(points: &[(f64, f64, f64)], resamples: usize, seed: u64) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::invalid("points", "a rate fit needs at least 4 points"));
    }
    if resamples < 200 {
        return Err(Error::invalid("resamples", "need at least 200"));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::invalid("points", "n and error values must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = least_squares(&xs, &ys).ok_or_else(|| Error::invalid("points", "all n coincide"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(resamples);
    let m = points.len();
    while slopes.len() < resamples {
        let mut bx = Vec::with_capacity(m);
        let mut by = Vec::with_capacity(m);
        for _ in 0..m {
            let i = rng.random_range(0..m);
            let (_, e, se) = points[i];
            let z: f64 = rng.sample(StandardNormal);
            let v = (e + se * z).max(e * 1e-3);
            bx.push(xs[i]);
            by.push(v.ln());
        }
        if let Some((s, _, _)) = least_squares(&bx, &by) {
            slopes.push(s);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(RateFit {
        slope,
        intercept,
        r2,
        slope_ci90: (q(0.05), q(0.95)),
    })
}

fn kink_window(x: f64) -> (f64, f64, f64) {
    let u = x / KINK_WINDOW;
    if u.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let one = 1.0 - u * u;
    let w = (1.0 - 1.0 / one).exp();
    let g1 = -2.0 * u / (one * one);
    let g2 = -2.0 / (one * one) - 8.0 * u * u / (one * one * one);
    (w, w * g1 / KINK_WINDOW, w * (g1 * g1 + g2) / (KINK_WINDOW * KINK_WINDOW))
}

/// `|x - c|^beta w(x)` in one dimension (with exact derivatives up to order
/// two) or `|x - c 1|^beta prod_j w(x_j)` in higher dimension.
pub fn kink_function(beta: f64, dim: usize) -> TestFunction {
    let c = KINK_CENTER;
    let f = TestFunction::new(format!("kink-{beta}"), dim, move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| (v - c) * (v - c)).sum();
        let w: f64 = x.iter().map(|&v| kink_window(v).0).product();
        if w == 0.0 {
            0.0
        } else {
            r2.powf(0.5 * beta) * w
        }
    })
    .with_meta(beta + dim as f64 / 2.0, 2.0, "finite seminorms for s < beta + d/p");
    if dim != 1 {
        return f;
    }
    f.with_partial(MultiIndex::new(vec![1]), move |x: &[f64]| {
        let (w, w1, _) = kink_window(x[0]);
        let t = x[0] - c;
        let a = t.abs();
        beta * a.powf(beta - 1.0) * t.signum() * w + a.powf(beta) * w1
    })
    .with_partial(MultiIndex::new(vec![2]), move |x: &[f64]| {
        let (w, w1, w2) = kink_window(x[0]);
        let t = x[0] - c;
        let a = t.abs();
        beta * (beta - 1.0) * a.powf(beta - 2.0) * w + 2.0 * beta * a.powf(beta - 1.0) * t.signum() * w1 + a.powf(beta) * w2
    })
}

/// Physicists' Hermite polynomial, `d^m/dx^m e^{-x^2} = (-1)^m H_m(x) e^{-x^2}`.
fn physicists_hermite(m: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, 2.0 * x);
    if m == 0 {
        return a;
    }
    for n in 1..m {
        let c = 2.0 * x * b - 2.0 * n as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `e^{-|x|^2}` with exact partials of every order.
pub fn gauss_bump(dim: usize) -> TestFunction {
    let provider: PartialProvider = Arc::new(|alpha: &MultiIndex| {
        let a = alpha.entries().to_vec();
        Some(Arc::new(move |x: &[f64]| {
            a.iter()
                .zip(x)
                .map(|(&m, &t)| {
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    sign * physicists_hermite(m, t) * (-t * t).exp()
                })
                .product()
        }) as PointFn)
    });
    TestFunction::new("gauss-bump", dim, |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp())
        .with_provider(provider)
        .with_meta(f64::INFINITY, 2.0, "smooth")
}

/// `e^{|x|^2/(2p)} (1 + |x|^2)^{-m}`.
pub fn lemma27_function(m: u32, p: f64, dim: usize) -> TestFunction {
    TestFunction::new(format!("lemma27-m{m}-p{p}"), dim, move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (r2 / (2.0 * p) - m as f64 * (1.0 + r2).ln()).exp()
    })
}

/// Library lookup. Ids: `gauss-bump`, `kink-<beta>`, `hermite-<k1>[-<k2>..]`,
/// `lemma27` (m = 2, p = 2), `const`, `linear`, `abs-<beta>`.
pub fn test_function(id: &str, dim: usize) -> Result<TestFunction> {
    let unknown = || Error::UnknownFunction(id.to_string());
    if dim == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    if id == "gauss-bump" {
        return Ok(gauss_bump(dim));
    }
    if id == "lemma27" {
        return Ok(lemma27_function(2, 2.0, dim));
    }
    if id == "const" {
        return Ok(TestFunction::new("const", dim, |_| 1.0).with_provider(Arc::new(|_: &MultiIndex| {
            Some(Arc::new(|_: &[f64]| 0.0) as PointFn)
        })));
    }
    if id == "linear" {
        let f = TestFunction::new("linear", dim, |x: &[f64]| x[0]);
        return Ok(f.with_provider(Arc::new(|alpha: &MultiIndex| {
            let first_only = alpha.entries()[0] == 1 && alpha.l1() == 1;
            Some(Arc::new(move |_: &[f64]| if first_only { 1.0 } else { 0.0 }) as PointFn)
        })));
    }
    if let Some(rest) = id.strip_prefix("kink-") {
        let beta: f64 = rest.parse().map_err(|_| unknown())?;
        if !(beta > 0.0) {
            return Err(unknown());
        }
        return Ok(kink_function(beta, dim));
    }
    if let Some(rest) = id.strip_prefix("abs-") {
        let beta: f64 = rest.parse().map_err(|_| unknown())?;
        return Ok(TestFunction::new(id, dim, move |x: &[f64]| x[0].abs().powf(beta)));
    }
    if let Some(rest) = id.strip_prefix("hermite-") {
        let mut k: Vec<u32> = rest.split('-').map(|t| t.parse().map_err(|_| unknown())).collect::<Result<_>>()?;
        if k.len() > dim {
            return Err(unknown());
        }
        k.resize(dim, 0);
        let e = HermiteExpansion::from_pairs(dim, [(k, 1.0)])?;
        return Ok(TestFunction::from_expansion(id, e));
    }
    Err(unknown())
}

/// Points where `f` is not smooth, used as quadrature breakpoints.
pub fn singular_points(id: &str) -> Vec<f64> {
    if id.starts_with("kink-") {
        vec![KINK_CENTER, -KINK_WINDOW, KINK_WINDOW]
    } else if id.starts_with("abs-") {
        vec![0.0]
    } else {
        Vec::new()
    }
}

/// `count` random Hermite polynomials, alternating `d = 1` and `d = 2`,
/// total degree `<= max_degree`, coefficients `N(0, 1) * 2^{-|k|_1/2}`.
pub fn random_polynomial_suite(count: usize, max_degree: u32, seed: u64) -> Vec<HermiteExpansion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let d = 1 + i % 2;
            let deg = rng.random_range(1..=max_degree);
            let pairs: Vec<(MultiIndex, f64)> = MultiIndex::total_degree(d, deg)
                .into_iter()
                .map(|k| {
                    let z: f64 = rng.sample(StandardNormal);
                    let scale = 2f64.powf(-0.5 * k.l1() as f64);
                    (k, z * scale)
                })
                .collect();
            HermiteExpansion::from_pairs(d, pairs).expect("dimension is consistent")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorFlavor {
    Linear,
    #[default]
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormSpace {
    #[serde(rename = "Wsp")]
    Wsp,
    #[serde(rename = "WspG")]
    WspG,
    #[serde(rename = "Wkernel")]
    Wkernel,
    #[serde(rename = "mixed")]
    Mixed,
}

impl std::str::FromStr for NormSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Wsp" => Ok(Self::Wsp),
            "WspG" => Ok(Self::WspG),
            "Wkernel" => Ok(Self::Wkernel),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::invalid("space", format!("unknown space {s}"))),
        }
    }
}

impl NormSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Wsp => "Wsp",
            Self::WspG => "WspG",
            Self::Wkernel => "Wkernel",
            Self::Mixed => "mixed",
        }
    }
}

fn default_theta() -> f64 {
    1.5
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    SpectralWidth {
        s: f64,
        d: u32,
        #[serde(default)]
        n_list: Option<Vec<u64>>,
        #[serde(default)]
        r_max: Option<u64>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    AssembleRate {
        p: f64,
        q: f64,
        s: f64,
        d: usize,
        #[serde(default)]
        flavor: OperatorFlavor,
        n_list: Vec<u64>,
        function: String,
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default)]
        slope_range: Option<(f64, f64)>,
        #[serde(default)]
        max_slope: Option<f64>,
        #[serde(default)]
        min_r2: Option<f64>,
    },
    NormCheck {
        s_list: Vec<f64>,
        #[serde(default = "default_suite_size")]
        suite_size: usize,
        #[serde(default = "default_suite_degree")]
        max_degree: u32,
        #[serde(default = "default_ratio_bound")]
        max_ratio: f64,
    },
    NormEstimate {
        function: String,
        #[serde(default = "default_dim")]
        d: usize,
        space: NormSpace,
        s: f64,
        p: f64,
    },
    KernelCheck {
        #[serde(default)]
        eigen: Option<EigenCheck>,
        #[serde(default)]
        lower_bound: Option<LowerBoundCheck>,
    },
    Counterexample {
        m: u32,
        p: f64,
        q_diverge: f64,
        q_stable: f64,
        radii: Vec<f64>,
        #[serde(default = "default_growth")]
        growth_factor: f64,
        #[serde(default = "default_stable")]
        stable_tol: f64,
    },
}

fn default_suite_size() -> usize {
    20
}
fn default_suite_degree() -> u32 {
    8
}
fn default_ratio_bound() -> f64 {
    20.0
}
fn default_dim() -> usize {
    1
}
fn default_growth() -> f64 {
    10.0
}
fn default_stable() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCheck {
    pub max_k: u32,
    pub sigmas: Vec<f64>,
    pub points: Vec<f64>,
    pub rel_tol: f64,
    /// Two-dimensional probes `(k, x)` reported against both spectral modes.
    #[serde(default)]
    pub probes_2d: Vec<(Vec<u32>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    pub sigmas: Vec<f64>,
    pub dims: Vec<usize>,
    /// Total pairs across all `(sigma, d)` combinations.
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> &'static str {
        match self.experiment {
            Experiment::SpectralWidth { .. } => "spectral-width",
            Experiment::AssembleRate { .. } => "assemble-rate",
            Experiment::NormCheck { .. } => "norm-check",
            Experiment::NormEstimate { .. } => "norm-estimate",
            Experiment::KernelCheck { .. } => "kernel-check",
            Experiment::Counterexample { .. } => "counterexample",
        }
    }

    /// Checks every numeric parameter before any computation.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = &self.integrator {
            i.validate()?;
        }
        match &self.experiment {
            Experiment::SpectralWidth { s, d, n_list, r_max, tolerance } => {
                if !(*s > 0.0) || *d == 0 || !(*tolerance > 0.0) {
                    return Err(Error::invalid("spectral-width", "need s > 0, d >= 1, tolerance > 0"));
                }
                match (n_list, r_max) {
                    (Some(ns), None) => {
                        if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
                            return Err(Error::invalid("n_list", "must be positive and strictly increasing"));
                        }
                    }
                    (None, Some(r)) if *r >= 2 => {}
                    _ => return Err(Error::invalid("spectral-width", "give exactly one of n_list, r_max (>= 2)")),
                }
            }
            Experiment::AssembleRate { p, q, s, d, n_list, function, theta, .. } => {
                choose_aux_params_for(*p, *q, *s, *d, AuxFlavor::Isotropic)?;
                build_partition(*theta, *d, 1)?;
                if n_list.len() < 4 || n_list.iter().any(|&n| n < 2) || n_list.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("n_list", "need >= 4 strictly increasing entries, all >= 2"));
                }
                test_function(function, *d)?;
            }
            Experiment::NormCheck { s_list, suite_size, max_degree, max_ratio } => {
                if s_list.is_empty() || s_list.iter().any(|&s| !(s > 0.0) || s.fract() == 0.0) {
                    return Err(Error::invalid("s_list", "need fractional s > 0"));
                }
                if *suite_size == 0 || *max_degree == 0 || !(*max_ratio > 1.0) {
                    return Err(Error::invalid("norm-check", "need suite_size, max_degree > 0 and max_ratio > 1"));
                }
            }
            Experiment::NormEstimate { function, d, s, p, .. } => {
                SmoothnessParams::new(*s, *p, 1.0, *d)?;
                test_function(function, *d)?;
            }
            Experiment::KernelCheck { eigen, lower_bound } => {
                if let Some(e) = eigen {
                    if e.sigmas.iter().any(|&s| !(s > 0.0 && s < 1.0)) || e.points.is_empty() || !(e.rel_tol > 0.0) {
                        return Err(Error::invalid("eigen", "need sigma in (0,1), points, rel_tol > 0"));
                    }
                }
                if let Some(l) = lower_bound {
                    if l.sigmas.iter().any(|&s| !(s > 0.0)) || l.dims.iter().any(|&d| d == 0) || l.pairs == 0 {
                        return Err(Error::invalid("lower_bound", "need sigma > 0, d >= 1, pairs > 0"));
                    }
                }
                if eigen.is_none() && lower_bound.is_none() {
                    return Err(Error::invalid("kernel-check", "nothing to check"));
                }
            }
            Experiment::Counterexample { m, p, q_diverge, q_stable, radii, .. } => {
                if *m == 0 || !(*q_diverge > *p) || !(*q_stable < *p) || !(*q_stable >= 1.0) || radii.len() < 2 {
                    return Err(Error::invalid("counterexample", "need m >= 1, q_stable < p < q_diverge, >= 2 radii"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    /// Informational output; never fails a run.
    #[serde(rename = "REPORT")]
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub measured: f64,
    pub threshold: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Criterion {
    fn check(name: impl Into<String>, measured: f64, threshold: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: threshold.into(),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            note: None,
        }
    }

    fn report(name: impl Into<String>, measured: f64, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold: "report".into(),
            verdict: Verdict::Report,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
    pub all_passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_fit: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub summary: Summary,
}

impl Report {
    /// Writes `<stem>.csv` and `<stem>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.summary.json"));
        std::fs::write(&csv, &self.csv)?;
        std::fs::write(&json, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok((csv, json))
    }
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_err)?;
        Ok(Self { writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<String> {
        let bytes = self.writer.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Runs one experiment; deterministic given the config (including `seed`).
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let integrator = config.integrator.unwrap_or_default();
    let (csv, criteria, fit) = match &config.experiment {
        Experiment::SpectralWidth { s, d, n_list, r_max, tolerance } => {
            let (c, k) = run_spectral(*s, *d, n_list.as_deref(), *r_max, *tolerance)?;
            (c, k, None)
        }
        Experiment::AssembleRate {
            p,
            q,
            s,
            d,
            flavor,
            n_list,
            function,
            theta,
            slope_range,
            max_slope,
            min_r2,
        } => {
            let spec = RateSpec {
                p: *p,
                q: *q,
                s: *s,
                d: *d,
                flavor: *flavor,
                function: function.clone(),
                theta: *theta,
                seed: config.seed,
            };
            let (rows, csv) = assemble_rate_rows(&spec, n_list, &integrator)?;
            let pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.n as f64, r.error, r.stderr)).collect();
            let fit = rate_fit_with_errors(&pts, 400, config.seed)?;
            let mut crit = Vec::new();
            if let Some((lo, hi)) = slope_range {
                crit.push(Criterion::check(
                    "rate-slope",
                    fit.slope,
                    format!("[{lo}, {hi}]"),
                    fit.slope >= *lo && fit.slope <= *hi,
                ));
            }
            if let Some(m) = max_slope {
                crit.push(Criterion::check("rate-slope-max", fit.slope, format!("<= {m}"), fit.slope <= *m));
            }
            if let Some(r) = min_r2 {
                crit.push(Criterion::check("rate-r2", fit.r2, format!(">= {r}"), fit.r2 >= *r));
            }
            (csv, crit, Some(fit))
        }
        Experiment::NormCheck { s_list, suite_size, max_degree, max_ratio } => {
            let (c, k) = run_norm_check(s_list, *suite_size, *max_degree, *max_ratio, config.seed, &integrator)?;
            (c, k, None)
        }
        Experiment::NormEstimate { function, d, space, s, p } => {
            (norm_estimate_row(function, *d, *space, *s, *p, &integrator)?, Vec::new(), None)
        }
        Experiment::KernelCheck { eigen, lower_bound } => {
            let (c, k) = run_kernel_check(eigen.as_ref(), lower_bound.as_ref(), config.seed)?;
            (c, k, None)
        }
        Experiment::Counterexample {
            m,
            p,
            q_diverge,
            q_stable,
            radii,
            growth_factor,
            stable_tol,
        } => {
            let (c, k) = run_counterexample(*m, *p, *q_diverge, *q_stable, radii, *growth_factor, *stable_tol)?;
            (c, k, None)
        }
    };
    let all_passed = criteria.iter().all(|c| c.verdict != Verdict::Fail);
    Ok(Report {
        csv,
        summary: Summary {
            experiment: config.kind().into(),
            seed: config.seed,
            criteria,
            all_passed,
            rate_fit: fit,
        },
    })
}

/// Width table rows `s, d, n, sigma_n, normalized, limit_constant`.
pub fn spectral_table(s: f64, d: u32, n_list: &[u64]) -> Result<String> {
    let curve = width_curve_exact(s, d, n_list)?;
    let lim = width_limit_constant(s, d)?;
    let mut t = Table::new(&["s", "d", "n", "sigma_n", "normalized", "limit_constant"])?;
    for ((n, v), z) in curve.entries.iter().zip(&curve.normalized) {
        t.row(&[fmt(s), d.to_string(), n.to_string(), fmt(*v), fmt(*z), fmt(lim)])?;
    }
    t.finish()
}

/// `c(r, d)` for `r = 2..=r_max`.
pub fn ball_count_list(d: u32, r_max: u64) -> Result<Vec<u64>> {
    (2..=r_max).map(|r| count_ball(r, d)).collect()
}

fn run_spectral(s: f64, d: u32, n_list: Option<&[u64]>, r_max: Option<u64>, tol: f64) -> Result<(String, Vec<Criterion>)> {
    let ns = match (n_list, r_max) {
        (Some(ns), _) => ns.to_vec(),
        (None, Some(r)) => ball_count_list(d, r)?,
        _ => unreachable!("validated"),
    };
    let csv = spectral_table(s, d, &ns)?;
    let curve = width_curve_exact(s, d, &ns)?;
    let lim = width_limit_constant(s, d)?;
    let last = *curve.normalized.last().expect("nonempty");
    let rel = (last - lim).abs() / lim;
    let mut crit = vec![Criterion::check("limit-constant", rel, format!("<= {tol}"), rel <= tol)];
    if d == 1 && s == 2.0 {
        let worst = curve.normalized.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        crit.push(Criterion::check("d1-s2-exact", worst, "== 0", worst == 0.0));
    }
    if let Some(r_max) = r_max {
        let mut violations = 0u64;
        for r in 2..=r_max.min(100) {
            let lo = count_ball(r - 1, d)?;
            let hi = count_ball(r, d)?;
            for n in [lo + 1, hi] {
                let v = sigma_rearranged(n, s, d)?;
                if v < (r as f64).powf(-0.5 * s) || v > ((r - 1) as f64).powf(-0.5 * s) {
                    violations += 1;
                }
            }
        }
        crit.push(Criterion::check("bracketing", violations as f64, "== 0", violations == 0));
    }
    Ok((csv, crit))
}

/// Parameters of one assembled-operator convergence run.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSpec {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub d: usize,
    pub flavor: OperatorFlavor,
    pub function: String,
    pub theta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: u64,
    pub rank_used: usize,
    pub error: f64,
    pub stderr: f64,
}

/// Assembles `A_n f` for each `n` and measures `||f - A_n f||_{L_q(gamma)}`.
pub fn assemble_rate_rows(spec: &RateSpec, n_list: &[u64], integrator: &IntegratorConfig) -> Result<(Vec<RateRow>, String)> {
    let f = test_function(&spec.function, spec.d)?;
    let params = choose_aux_params_for(spec.p, spec.q, spec.s, spec.d, AuxFlavor::Isotropic)?;
    let kappa = spec.s.ceil() as u32 + 1;
    let part = build_partition(spec.theta, spec.d, kappa)?;
    let local: Box<dyn LocalOperator> = match spec.flavor {
        OperatorFlavor::Sampling => Box::new(local_spline_sampler(spec.theta, spec.d, spec.s)?),
        OperatorFlavor::Linear => Box::new(local_fourier(spec.theta, spec.d, spec.s)?),
    };
    let singular = singular_points(&spec.function);
    let cfg = IntegratorConfig {
        seed: spec.seed,
        ..*integrator
    };
    let mut table = Table::new(&[
        "p", "q", "s", "d", "flavor", "function", "theta", "seed", "n", "rank_used", "error_Lq", "stderr",
    ])?;
    let flavor = match spec.flavor {
        OperatorFlavor::Sampling => "sampling",
        OperatorFlavor::Linear => "linear",
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let budget = allocate(n, &params, spec.d).map_err(|e| e.context(format!("allocation at n={n}")))?;
        let op = assemble(&f, &part, &budget, local.as_ref()).map_err(|e| e.context(format!("assembly at n={n}")))?;
        let err = approximation_error(&f, &op, spec.q, &singular, &cfg).map_err(|e| e.context(format!("error at n={n}")))?;
        let row = RateRow {
            n,
            rank_used: op.total_rank,
            error: err.value,
            stderr: err.stderr,
        };
        table.row(&[
            fmt(spec.p),
            fmt(spec.q),
            fmt(spec.s),
            spec.d.to_string(),
            flavor.into(),
            spec.function.clone(),
            fmt(spec.theta),
            spec.seed.to_string(),
            n.to_string(),
            row.rank_used.to_string(),
            fmt(row.error),
            fmt(row.stderr),
        ])?;
        rows.push(row);
    }
    Ok((rows, table.finish()?))
}

/// One seminorm/norm estimate for the named space.
pub fn estimate_norm(f: &TestFunction, space: NormSpace, s: f64, p: f64, cfg: &IntegratorConfig) -> Result<NormEstimate> {
    let params = SmoothnessParams::new(s, p, 1.0, f.dim)?;
    match space {
        NormSpace::Wsp => gagliardo_seminorm_cube(f, &params, (-1.0, 1.0), cfg),
        NormSpace::WspG => gagliardo_seminorm_gauss(f, &params, cfg),
        NormSpace::Wkernel => kernel_seminorm_gauss(f, &params, cfg),
        NormSpace::Mixed => mixed_seminorm(f, &params, MixedFlavor::GaussKernel, cfg),
    }
}

/// Ratios `||f||_{W^s_2(gamma)} / ||f||_{H^s}` over the random suite.
pub fn norm_equivalence_ratios(s: f64, suite: &[HermiteExpansion], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    suite
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let f = TestFunction::from_expansion(format!("suite-{i}"), e.clone());
            let params = SmoothnessParams::new(s, 2.0, 1.0, e.dim)?;
            let tensor = IntegratorConfig {
                node_or_sample_count: if e.dim == 1 { cfg.node_or_sample_count } else { 20 },
                ..*cfg
            };
            let w = kernel_sobolev_norm(&f, &params, &tensor).map_err(|err| err.context(format!("suite function {i}")))?;
            Ok(w.value / hs_norm(e, s))
        })
        .collect()
}

fn run_norm_check(
    s_list: &[f64],
    suite_size: usize,
    max_degree: u32,
    max_ratio: f64,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<(String, Vec<Criterion>)> {
    let suite = random_polynomial_suite(suite_size, max_degree, seed);
    let mut t = Table::new(&["s", "p", "seed", "index", "d", "degree", "ratio"])?;
    let mut crit = Vec::new();
    for &s in s_list {
        let ratios = norm_equivalence_ratios(s, &suite, cfg)?;
        for (i, (r, e)) in ratios.iter().zip(&suite).enumerate() {
            t.row(&[fmt(s), "2".into(), seed.to_string(), i.to_string(), e.dim.to_string(), e.max_degree().to_string(), fmt(*r)])?;
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        let spread = hi / lo;
        crit.push(Criterion::check(
            format!("equivalence-s{s}"),
            spread,
            format!("c2/c1 <= {max_ratio}"),
            lo > 0.0 && spread <= max_ratio,
        ));
    }
    Ok((t.finish()?, crit))
}

fn run_kernel_check(
    eigen: Option<&EigenCheck>,
    lower: Option<&LowerBoundCheck>,
    seed: u64,
) -> Result<(String, Vec<Criterion>)> {
    let mut t = Table::new(&["check", "sigma", "d", "k", "x", "measured", "target", "rel_error"])?;
    let mut crit = Vec::new();
    if let Some(e) = eigen {
        let cfg = KernelEvalConfig::operator();
        let mut worst: f64 = 0.0;
        for &sigma in &e.sigmas {
            for k in 1..=e.max_k {
                for &x in &e.points {
                    let v = frac_ou_integral(|y: &[f64]| hermite_eval(k as usize, y[0]), sigma, &[x], &cfg)
                        .map_err(|err| err.context(format!("eigenrelation sigma={sigma} k={k} x={x}")))?;
                    let target = (k as f64).powf(sigma) * hermite_eval(k as usize, x);
                    let rel = (v - target).abs() / target.abs().max(1e-300);
                    worst = worst.max(rel);
                    t.row(&["eigen".into(), fmt(sigma), "1".into(), k.to_string(), fmt(x), fmt(v), fmt(target), fmt(rel)])?;
                }
            }
        }
        crit.push(Criterion::check("eigenrelation-d1", worst, format!("<= {}", e.rel_tol), worst <= e.rel_tol));
        for (k, x) in &e.probes_2d {
            let mi = MultiIndex::new(k.clone());
            for &sigma in &e.sigmas {
                let v = frac_ou_integral(
                    |y: &[f64]| hermite_eval(k[0] as usize, y[0]) * hermite_eval(k[1] as usize, y[1]),
                    sigma,
                    x,
                    &cfg,
                )?;
                let h = hermite_eval(k[0] as usize, x[0]) * hermite_eval(k[1] as usize, x[1]);
                let sum = frac_eigenvalue(&mi, sigma, EigenMode::Sum) * h;
                let total = frac_eigenvalue(&mi, sigma, EigenMode::Total) * h;
                let es = (v - sum).abs() / sum.abs().max(1e-300);
                let et = (v - total).abs() / total.abs().max(1e-300);
                let mode = if et < es { "total" } else { "sum" };
                t.row(&["mode-sum".into(), fmt(sigma), "2".into(), format!("{k:?}"), format!("{x:?}"), fmt(v), fmt(sum), fmt(es)])?;
                t.row(&["mode-total".into(), fmt(sigma), "2".into(), format!("{k:?}"), format!("{x:?}"), fmt(v), fmt(total), fmt(et)])?;
                crit.push(Criterion::report(
                    format!("eigen-mode-d2 k={k:?} sigma={sigma}"),
                    es.min(et),
                    format!("integral matches {mode} (sum rel {es:.3e}, total rel {et:.3e})"),
                ));
            }
        }
    }
    if let Some(l) = lower {
        let cfg = KernelEvalConfig::default();
        let combos = l.sigmas.len() * l.dims.len();
        let per = l.pairs.div_ceil(combos.max(1));
        let mut violations = 0usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &sigma in &l.sigmas {
            for &d in &l.dims {
                let mut worst = f64::INFINITY;
                for _ in 0..per {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let r = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    if r < 1e-9 {
                        continue;
                    }
                    let k = k_sigma(sigma, &x, &y, &cfg)?;
                    let lb = kernel_lower_bound(sigma, r, d);
                    // Allowance for the quadrature relative tolerance.
                    if k < lb * (1.0 - 10.0 * cfg.rel_tol) {
                        violations += 1;
                    }
                    worst = worst.min(k / lb);
                }
                t.row(&["lower-bound".into(), fmt(sigma), d.to_string(), String::new(), per.to_string(), fmt(worst), "1".into(), String::new()])?;
            }
        }
        crit.push(Criterion::check("lower-bound-violations", violations as f64, "== 0", violations == 0));
    }
    Ok((t.finish()?, crit))
}

#[allow(clippy::too_many_arguments)]
fn run_counterexample(
    m: u32,
    p: f64,
    q_div: f64,
    q_stab: f64,
    radii: &[f64],
    growth: f64,
    stable_tol: f64,
) -> Result<(String, Vec<Criterion>)> {
    let mut t = Table::new(&["m", "p", "q", "R", "truncated_norm"])?;
    let div = embedding_counterexample_scan(m, p, q_div, 1, radii)?;
    let stab = embedding_counterexample_scan(m, p, q_stab, 1, radii)?;
    for (q, rows) in [(q_div, &div), (q_stab, &stab)] {
        for (r, v) in rows.iter() {
            t.row(&[m.to_string(), fmt(p), fmt(q), fmt(*r), fmt(*v)])?;
        }
    }
    let monotone = div.windows(2).all(|w| w[1].1 > w[0].1);
    let total = div.last().expect("radii").1 / div[0].1;
    let n = stab.len();
    let change = (stab[n - 1].1 / stab[n - 2].1 - 1.0).abs();
    Ok((
        t.finish()?,
        vec![
            Criterion::check("diverge-monotone", if monotone { 1.0 } else { 0.0 }, "strictly increasing", monotone),
            Criterion::check("diverge-growth", total, format!(">= {growth}"), total >= growth),
            Criterion::check("stable-last-change", change, format!("< {stable_tol}"), change < stable_tol),
        ],
    ))
}

/// Kernel table over all `(sigma, x, y)` in one dimension: columns
/// `sigma, x, y, K_value, lower_bound, ratio`.
pub fn kernel_table(sigmas: &[f64], xs: &[f64], ys: &[f64], cfg: &KernelEvalConfig) -> Result<String> {
    let mut t = Table::new(&["sigma", "x", "y", "K_value", "lower_bound", "ratio"])?;
    for &sigma in sigmas {
        for &x in xs {
            for &y in ys {
                if x == y {
                    continue;
                }
                let k = k_sigma(sigma, &[x], &[y], cfg).map_err(|e| e.context(format!("kernel at sigma={sigma} x={x} y={y}")))?;
                let lb = kernel_lower_bound(sigma, (x - y).abs(), 1);
                t.row(&[fmt(sigma), fmt(x), fmt(y), fmt(k), fmt(lb), fmt(k / lb)])?;
            }
        }
    }
    t.finish()
}

/// One CSV row (with header) for a norm estimate.
pub fn norm_estimate_row(function: &str, d: usize, space: NormSpace, s: f64, p: f64, cfg: &IntegratorConfig) -> Result<String> {
    let f = test_function(function, d)?;
    let est = estimate_norm(&f, space, s, p, cfg)?;
    let mut t = Table::new(&["function", "space", "s", "p", "value", "stderr", "diverged"])?;
    t.row(&[
        function.to_string(),
        space.as_str().into(),
        fmt(s),
        fmt(p),
        fmt(est.value),
        fmt(est.stderr),
        est.diverged.to_string(),
    ])?;
    t.finish()
}
