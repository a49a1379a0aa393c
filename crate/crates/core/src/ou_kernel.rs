//! Mehler kernel, Ornstein–Uhlenbeck semigroup, the subordination kernel
//! `K_sigma(x, y) = int_0^inf M_t(x, y) t^{-sigma/2 - 1} dt` and the
//! fractional Ornstein–Uhlenbeck operator.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::error::{Error, Result};
use crate::hermite::{HermiteExpansion, MultiIndex};
use crate::quad::{integrate, Tolerance};

/// Accuracy and splitting controls for kernel quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEvalConfig {
    pub rel_tol: f64,
    pub t_split: f64,
    pub max_subdivisions: usize,
}

impl Default for KernelEvalConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            t_split: 1.0,
            max_subdivisions: 200,
        }
    }
}

impl KernelEvalConfig {
    /// Defaults for operator applications (`rel_tol = 1e-6`).
    pub fn operator() -> Self {
        Self {
            rel_tol: 1e-6,
            ..Self::default()
        }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(Error::invalid("rel_tol", format!("must lie in (0, 1e-2], got {}", self.rel_tol)));
        }
        if !(self.t_split > 0.0 && self.t_split.is_finite()) {
            return Err(Error::invalid("t_split", "must be positive"));
        }
        if self.max_subdivisions < 8 {
            return Err(Error::invalid("max_subdivisions", "must be at least 8"));
        }
        Ok(())
    }

    fn tol(&self, rel: f64, abs: f64) -> Tolerance {
        Tolerance::relative(rel)
            .with_abs(abs)
            .with_max_subdivisions(self.max_subdivisions)
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("x", "dimension must be at least 1"));
    }
    Ok(())
}

/// `(|x|^2 + |y|^2) / 4` and `|x - y|^2`.
pub fn geometry(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut s = 0.0;
    let mut r2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        s += a * a + b * b;
        r2 += (a - b) * (a - b);
    }
    (0.25 * s, r2)
}

/// `log M_t` in terms of `a = (|x|^2 + |y|^2)/4` and `r2 = |x - y|^2`.
#[inline]
pub fn log_mehler_ar(t: f64, a: f64, r2: f64, d: usize) -> f64 {
    let th = (0.5 * t).tanh();
    let one_minus = -(-2.0 * t).exp_m1();
    let cross = if r2 == 0.0 { 0.0 } else { r2 / (4.0 * t.sinh()) };
    a * (1.0 - th) - 0.5 * d as f64 * one_minus.ln() - cross
}

/// Mehler kernel `M_t(x, y)` against `gamma`.
pub fn mehler(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(log_mehler(t, x, y)?.exp())
}

pub fn log_mehler(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("must be positive, got {t}")));
    }
    check_dims(x, y)?;
    let (a, r2) = geometry(x, y);
    Ok(log_mehler_ar(t, a, r2, x.len()))
}

/// `e^{t Delta_gamma}` on a Hermite expansion: `c_k -> e^{-t |k|_1} c_k`.
pub fn semigroup_apply(e: &HermiteExpansion, t: f64) -> Result<HermiteExpansion> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be nonnegative, got {t}")));
    }
    let mut out = e.clone();
    for (k, v) in out.coeffs.iter_mut() {
        *v *= (-t * k.l1() as f64).exp();
    }
    Ok(out)
}

/// `K_sigma(x, y)`.
pub fn k_sigma(sigma: f64, x: &[f64], y: &[f64], cfg: &KernelEvalConfig) -> Result<f64> {
    check_dims(x, y)?;
    let (a, r2) = geometry(x, y);
    k_sigma_ar(sigma, a, r2, x.len(), cfg)
}

/// `K_sigma` from the reduced geometry `(a, r2)`; see [`geometry`].
pub fn k_sigma_ar(sigma: f64, a: f64, r2: f64, d: usize, cfg: &KernelEvalConfig) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
    }
    cfg.validate()?;
    if r2 <= 0.0 {
        return Err(Error::DiagonalSingularity);
    }
    let ts = cfg.t_split;
    let half = 0.5 * sigma;

    // Large t: t = ts e^u up to T, then the exact tail of t^{-sigma/2-1}
    // (M_t = 1 + O(e^{-t}) there).
    let t_max = (45.0 + 2.0 * (1.0 + a + r2).ln()).max(4.0 * ts);
    let u_max = (t_max / ts).ln();
    let large = integrate(
        |u| {
            let t = ts * u.exp();
            (log_mehler_ar(t, a, r2, d) - half * t.ln()).exp()
        },
        0.0,
        u_max,
        cfg.tol(0.5 * cfg.rel_tol, 0.0),
    )
    .map_err(|e| e.context("K_sigma large-t integral"))?
        + t_max.powf(-half) / half;

    // Small t: tau = r2 / (4t), tau = e^v.
    let tau0 = r2 / (4.0 * ts);
    let shape = 0.5 * (sigma + d as f64);
    let v_lo = tau0.ln();
    let v_hi = (tau0.max(shape) + 80.0).ln();
    let log_pref = -half * (0.25 * r2).ln();
    let small = integrate(
        |v| {
            let t = 0.25 * r2 * (-v).exp();
            (log_mehler_ar(t, a, r2, d) + half * v + log_pref).exp()
        },
        v_lo,
        v_hi,
        cfg.tol(0.5 * cfg.rel_tol, 0.5 * cfg.rel_tol * large),
    )
    .map_err(|e| e.context("K_sigma small-t integral"))?;
    Ok(small + large)
}

/// The lower bound `2^{sigma + d/2} Gamma((sigma + d)/2) / r^{d + sigma}`.
pub fn kernel_lower_bound(sigma: f64, r: f64, d: usize) -> f64 {
    let df = d as f64;
    2f64.powf(sigma + 0.5 * df) * gamma(0.5 * (sigma + df)) / r.powf(df + sigma)
}

/// `exp(a (1 - tanh(t0/2))) / r^{d + sigma}` for points in a common unit cube.
pub fn kernel_local_lower_shape(sigma: f64, x: &[f64], y: &[f64], t0: f64) -> f64 {
    let (a, r2) = geometry(x, y);
    let d = x.len() as f64;
    (a * (1.0 - (0.5 * t0).tanh())).exp() / r2.sqrt().powf(d + sigma)
}

/// `int_0^{ts} (2t)^{-d/2} e^{-r^2/(4t)} t^{-sigma/2-1} dt`, the small-time
/// part of the lower bound, written with the upper incomplete gamma function.
pub fn kernel_small_time_lower(sigma: f64, r: f64, d: usize, ts: f64) -> f64 {
    let shape = 0.5 * (sigma + d as f64);
    kernel_lower_bound(sigma, r, d) * gamma_ur(shape, r * r / (4.0 * ts))
}

/// Eigenvalue convention for the fractional operator on `H_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMode {
    /// `k_1^sigma + ... + k_d^sigma`.
    Sum,
    /// `|k|_1^sigma`.
    Total,
}

pub fn frac_eigenvalue(k: &MultiIndex, sigma: f64, mode: EigenMode) -> f64 {
    match mode {
        EigenMode::Sum => k.0.iter().map(|&kj| (kj as f64).powf(sigma)).sum(),
        EigenMode::Total => (k.l1() as f64).powf(sigma),
    }
}

/// `(-Delta_gamma)^sigma` in spectral form.
pub fn frac_ou_spectral(e: &HermiteExpansion, sigma: f64, mode: EigenMode) -> Result<HermiteExpansion> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    let mut out = e.clone();
    for (k, v) in out.coeffs.iter_mut() {
        *v *= frac_eigenvalue(k, sigma, mode);
    }
    Ok(out)
}

/// `|Gamma(-sigma)| = Gamma(1 - sigma) / sigma` for `sigma in (0, 1)`.
pub fn abs_gamma_neg(sigma: f64) -> f64 {
    gamma(1.0 - sigma) / sigma
}

#[inline]
fn std_normal_density(y: &[f64]) -> f64 {
    let d = y.len() as f64;
    let s: f64 = y.iter().map(|v| v * v).sum();
    (-0.5 * s).exp() * (2.0 * std::f64::consts::PI).powf(-0.5 * d)
}

/// Angular directions (pairs `u`, `-u` are generated by the caller) and
/// their weights on the unit sphere.
fn half_sphere(d: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match d {
        1 => Ok(vec![(vec![1.0], 1.0)]),
        2 => {
            const N: usize = 64;
            let w = 2.0 * std::f64::consts::PI / N as f64;
            Ok((0..N / 2)
                .map(|j| {
                    let phi = std::f64::consts::PI * j as f64 / (N / 2) as f64;
                    (vec![phi.cos(), phi.sin()], w)
                })
                .collect())
        }
        _ => Err(Error::invalid("d", "integral form supports d in {1, 2}")),
    }
}

/// `(-Delta_gamma)^sigma f(x) = |Gamma(-sigma)|^{-1} int (f(x) - f(y)) K_{2 sigma}(x, y) dgamma(y)`.
///
/// Directions `u` and `-u` are paired so the integrand is `O(r^{1 - 2 sigma})`
/// near the diagonal; below `r = 1e-3` the differences of `f` are replaced by
/// their second-order Taylor model.
pub fn frac_ou_integral<F>(f: F, sigma: f64, x: &[f64], cfg: &KernelEvalConfig) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    cfg.validate()?;
    let d = x.len();
    let dirs = half_sphere(d)?;
    let kcfg = cfg.with_rel_tol((cfg.rel_tol * 1e-4).clamp(1e-13, 1e-8));
    let fx = f(x);

    let hstep = 1e-3 * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut grad = vec![0.0; d];
    let mut hess = vec![vec![0.0; d]; d];
    {
        let mut p = x.to_vec();
        for i in 0..d {
            p[i] = x[i] + hstep;
            let fp = f(&p);
            p[i] = x[i] - hstep;
            let fm = f(&p);
            p[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * hstep);
            hess[i][i] = (fp - 2.0 * fx + fm) / (hstep * hstep);
            for j in 0..i {
                let mut s = 0.0;
                for (si, sj, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    p[i] = x[i] + si * hstep;
                    p[j] = x[j] + sj * hstep;
                    s += w * f(&p);
                }
                p[i] = x[i];
                p[j] = x[j];
                hess[i][j] = s / (4.0 * hstep * hstep);
                hess[j][i] = hess[i][j];
            }
        }
    }

    let r_taylor: f64 = 1e-3;
    let r_min: f64 = 1e-8;
    let weight = |y: &[f64]| -> Result<f64> {
        let (a, r2) = geometry(x, y);
        Ok(k_sigma_ar(2.0 * sigma, a, r2, d, &kcfg)? * std_normal_density(y))
    };
    let mut failure: Option<Error> = None;
    let mut paired = |r: f64| -> f64 {
        if failure.is_some() {
            return 0.0;
        }
        let mut total = 0.0;
        let mut yp = vec![0.0; d];
        let mut ym = vec![0.0; d];
        for (u, wu) in &dirs {
            for j in 0..d {
                yp[j] = x[j] + r * u[j];
                ym[j] = x[j] - r * u[j];
            }
            let (wp, wm) = match (weight(&yp), weight(&ym)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some(e);
                    return 0.0;
                }
            };
            let g = if r < r_taylor {
                let gu: f64 = grad.iter().zip(u).map(|(g, u)| g * u).sum();
                let mut uhu = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        uhu += u[i] * hess[i][j] * u[j];
                    }
                }
                -r * gu * (wp - wm) - 0.5 * r * r * uhu * (wp + wm)
            } else {
                (fx - f(&yp)) * wp + (fx - f(&ym)) * wm
            };
            total += wu * g;
        }
        total * r.powi(d as i32 - 1)
    };

    let scale = 1.0 + fx.abs() + grad.iter().map(|g| g.abs()).sum::<f64>();
    let tol = Tolerance::relative(cfg.rel_tol)
        .with_abs(cfg.rel_tol * scale)
        .with_max_subdivisions(cfg.max_subdivisions);
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r_max = xnorm + 16.0;

    let outer = integrate(&mut paired, 1.0, r_max, tol);
    let mid = integrate(|v| paired((-v).exp()) * (-v).exp(), 0.0, -r_taylor.ln(), tol);
    let inner = integrate(|v| paired((-v).exp()) * (-v).exp(), -r_taylor.ln(), -r_min.ln(), tol);
    let tail = paired(r_min) * r_min / (2.0 - 2.0 * sigma);
    if let Some(e) = failure {
        return Err(e.context("fractional operator kernel"));
    }
    let total = outer.map_err(|e| e.context("fractional operator, |y - x| >= 1"))?
        + mid.map_err(|e| e.context("fractional operator, 1e-3 <= |y - x| < 1"))?
        + inner.map_err(|e| e.context("fractional operator, |y - x| < 1e-3"))?
        + tail;
    Ok(total / abs_gamma_neg(sigma))
}

/// Piecewise Chebyshev interpolant of `log K_sigma` as a function of
/// `a = (|x|^2 + |y|^2)/4` at a fixed separation `r`.
#[derive(Debug, Clone)]
pub struct RadialKernelTable {
    pieces: Vec<ChebPiece>,
    lo: f64,
    hi: f64,
    sigma: f64,
    r2: f64,
    d: usize,
    cfg: KernelEvalConfig,
}

#[derive(Debug, Clone)]
struct ChebPiece {
    lo: f64,
    hi: f64,
    coef: Vec<f64>,
}

const CHEB_NODES: usize = 20;

fn cheb_fit<F: FnMut(f64) -> Result<f64>>(lo: f64, hi: f64, f: &mut F) -> Result<Vec<f64>> {
    let n = CHEB_NODES;
    let vals: Vec<f64> = (0..n)
        .map(|j| {
            let th = std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
            f(0.5 * (lo + hi) + 0.5 * (hi - lo) * th.cos())
        })
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|k| {
            let s: f64 = vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                .sum();
            s * 2.0 / n as f64
        })
        .collect())
}

fn cheb_eval(p: &ChebPiece, a: f64) -> f64 {
    let t = (2.0 * a - p.lo - p.hi) / (p.hi - p.lo);
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in p.coef.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + 0.5 * p.coef[0]
}

impl RadialKernelTable {
    /// Builds the table on `[r^2/8, a_max]`, splitting until the interpolant
    /// matches direct evaluation to `1e-9` in `log K` at probe points.
    pub fn new(sigma: f64, r: f64, d: usize, a_max: f64, cfg: &KernelEvalConfig) -> Result<Self> {
        let r2 = r * r;
        let lo = r2 / 8.0;
        let hi = a_max.max(lo + 1e-12 * (1.0 + lo)) ;
        let mut eval = |a: f64| k_sigma_ar(sigma, a, r2, d, cfg).map(f64::ln);
        let mut pieces = Vec::new();
        let mut stack = vec![(lo, hi, 0u32)];
        while let Some((a, b, depth)) = stack.pop() {
            let coef = cheb_fit(a, b, &mut eval)?;
            let piece = ChebPiece { lo: a, hi: b, coef };
            let mut worst: f64 = 0.0;
            for probe in [0.137, 0.5, 0.911] {
                let z = a + probe * (b - a);
                worst = worst.max((cheb_eval(&piece, z) - eval(z)?).abs());
            }
            if worst > 1e-9 && depth < 12 {
                let m = 0.5 * (a + b);
                stack.push((m, b, depth + 1));
                stack.push((a, m, depth + 1));
            } else {
                pieces.push(piece);
            }
        }
        pieces.sort_by(|p, q| p.lo.total_cmp(&q.lo));
        Ok(Self {
            pieces,
            lo,
            hi,
            sigma,
            r2,
            d,
            cfg: *cfg,
        })
    }

    /// `K_sigma` at geometry `a`; falls back to direct quadrature outside the table.
    pub fn eval(&self, a: f64) -> Result<f64> {
        if a < self.lo || a > self.hi {
            return k_sigma_ar(self.sigma, a, self.r2, self.d, &self.cfg);
        }
        let idx = self.pieces.partition_point(|p| p.hi < a).min(self.pieces.len() - 1);
        Ok(cheb_eval(&self.pieces[idx], a).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mehler_at_origin() {
        let v = mehler(2f64.ln(), &[0.0], &[0.0]).unwrap();
        assert!((v - (0.75f64).powf(-0.5)).abs() < 1e-14);
        assert!(mehler(0.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn log_form_matches_textbook_mehler() {
        for &(t, x, y) in &[(0.1, 0.3, -1.2), (1.7, 2.0, 2.5), (0.01, -0.4, -0.41)] {
            let e1 = (-t as f64).exp();
            let e2 = (-2.0 * t as f64).exp();
            let direct: f64 = (1.0 - e2).powf(-0.5)
                * (-(e2 * x * x - 2.0 * e1 * x * y + e2 * y * y) / (2.0 * (1.0 - e2))).exp();
            let v = mehler(t, &[x], &[y]).unwrap();
            assert!((v / direct - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn diagonal_is_rejected() {
        let cfg = KernelEvalConfig::default();
        assert_eq!(k_sigma(1.0, &[0.5], &[0.5], &cfg), Err(Error::DiagonalSingularity));
    }

    #[test]
    fn table_matches_direct() {
        let cfg = KernelEvalConfig::default();
        let t = RadialKernelTable::new(0.8, 0.37, 1, 60.0, &cfg).unwrap();
        for a in [0.02, 0.5, 3.3, 17.0, 59.0] {
            let direct = k_sigma_ar(0.8, a, 0.37 * 0.37, 1, &cfg).unwrap();
            assert!((t.eval(a).unwrap() / direct - 1.0).abs() < 1e-8, "a={a}");
        }
    }
}
