use gausswidth::hermite::*;
use gausswidth::norms::*;
use gausswidth::ou_kernel::abs_gamma_neg;
use gausswidth::quad::{integrate, Tolerance};
use proptest::prelude::*;
use std::f64::consts::PI;

fn params(s: f64, p: f64, d: usize) -> SmoothnessParams {
    SmoothnessParams::new(s, p, 1.0, d).unwrap()
}

fn hermite_fn(dim: usize, pairs: &[(Vec<u32>, f64)]) -> TestFunction {
    TestFunction::from_expansion("h", HermiteExpansion::from_pairs(dim, pairs.iter().cloned()).unwrap())
}

fn bump() -> TestFunction {
    TestFunction::new("bump", 1, |x| (-x[0] * x[0]).exp())
        .with_partial(MultiIndex::new(vec![1]), |x| -2.0 * x[0] * (-x[0] * x[0]).exp())
}

/// `int_0^inf t^{-sigma/2-1} E|f(X) - f(X_t)|^p dt` with `(X, X_t)` standard
/// normal of correlation `e^{-t}`; shares nothing with the shell scheme.
fn mehler_time_oracle(f: impl Fn(f64) -> f64, sigma: f64, p: f64) -> f64 {
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let adaptive = |g: &dyn Fn(f64) -> f64| -> f64 {
        [-12.0, -4.0, 0.0, 4.0, 12.0f64]
            .windows(2)
            .map(|w| integrate(g, w[0], w[1], Tolerance::relative(1e-11).with_abs(1e-20).with_max_subdivisions(400)).unwrap())
            .sum()
    };
    // Nested adaptive rules in X and in the independent part of X_t.
    let expectation = |t: f64| {
        let c = (-t).exp();
        let s = (-(-2.0 * t).exp_m1()).sqrt();
        adaptive(&|z1: f64| {
            let fz = f(z1);
            density(z1) * adaptive(&|z2: f64| (fz - f(c * z1 + s * z2)).abs().powf(p) * density(z2))
        })
    };
    let big_t: f64 = 60.0;
    let body = integrate(
        |u| {
            let t = u.exp();
            t.powf(-0.5 * sigma) * expectation(t)
        },
        (1e-10f64).ln(),
        big_t.ln(),
        Tolerance::relative(1e-9),
    )
    .unwrap();
    // E|f(X) - f(X_t)|^p ~ C t^{p/2} as t -> 0.
    let t0: f64 = 1e-10;
    let head = expectation(t0) * t0.powf(-0.5 * sigma) / (0.5 * (p - sigma));
    body + head + expectation(1e3) * 2.0 / sigma * big_t.powf(-0.5 * sigma)
}

#[test]
fn lp_examples() {
    let cfg = IntegratorConfig::tensor(40);
    let c = TestFunction::new("c", 2, |_| -1.7);
    for p in [1.0, 2.0, 3.5] {
        assert!((lp_gamma_norm(&c, p, &cfg).unwrap().value - 1.7).abs() < 1e-12);
    }
    let x = TestFunction::new("x", 1, |x| x[0]);
    assert!((lp_gamma_norm(&x, 2.0, &cfg).unwrap().value - 1.0).abs() < 1e-12);
    let l1 = lp_gamma_norm(&x, 1.0, &IntegratorConfig::tensor(200)).unwrap();
    assert!((l1.value - (2.0 / PI).sqrt()).abs() < 1e-10, "{}", l1.value);
    let l1_2d = lp_gamma_norm(&TestFunction::new("x1", 2, |x| x[0]), 1.0, &IntegratorConfig::tensor(200)).unwrap();
    assert!((l1_2d.value - (2.0 / PI).sqrt()).abs() < 5e-3);
    let mc = lp_gamma_norm(&x, 1.0, &IntegratorConfig::monte_carlo(200_000, 9)).unwrap();
    assert!(mc.stderr > 0.0 && (mc.value - (2.0 / PI).sqrt()).abs() < 4.0 * mc.stderr);
    assert_eq!(mc.method, Method::MonteCarlo);
    assert!(lp_gamma_norm(&x, 0.5, &cfg).is_err());
    assert!(lp_gamma_norm(&x, 2.0, &IntegratorConfig::monte_carlo(999, 0)).is_err());
}

#[test]
fn nonfinite_rejection_budget() {
    let f = TestFunction::new("blowup", 1, |x| if x[0] > 2.0 { f64::NAN } else { 1.0 });
    let err = lp_gamma_norm(&f, 2.0, &IntegratorConfig::monte_carlo(10_000, 1)).unwrap_err();
    assert!(matches!(err, gausswidth::Error::NonFinite { .. }));
}

#[test]
fn sobolev_examples() {
    let cfg = IntegratorConfig::tensor(30);
    let one = TestFunction::new("1", 1, |_| 1.0);
    assert!((sobolev_norm_integer(&one, 1, 2.0, &cfg).unwrap().value - 1.0).abs() < 1e-7);
    let x = TestFunction::new("x", 1, |x| x[0]).with_partial(MultiIndex::new(vec![1]), |_| 1.0);
    assert!((sobolev_norm_integer(&x, 1, 2.0, &cfg).unwrap().value - 2f64.sqrt()).abs() < 1e-12);
    let h2 = hermite_fn(1, &[(vec![2], 1.0)]);
    assert!((sobolev_norm_integer(&h2, 1, 2.0, &cfg).unwrap().value - 3f64.sqrt()).abs() < 1e-12);
    // Finite differences give the same answer to FD accuracy.
    let h2_fd = TestFunction::new("h2", 1, |x| hermite_eval(2, x[0]));
    assert!((sobolev_norm_integer(&h2_fd, 1, 2.0, &cfg).unwrap().value - 3f64.sqrt()).abs() < 1e-6);
}

#[test]
fn cube_seminorm_examples() {
    let cfg = IntegratorConfig::default();
    let p = params(0.5, 2.0, 1);
    let c = TestFunction::new("c", 1, |_| 3.0);
    assert_eq!(gagliardo_seminorm_cube(&c, &p, (0.0, 1.0), &cfg).unwrap().value, 0.0);
    let x = TestFunction::new("x", 1, |x| x[0]);
    let e = gagliardo_seminorm_cube(&x, &p, (0.0, 1.0), &cfg).unwrap();
    assert!((e.value - 1.0).abs() < 1e-6, "{}", e.value);
    let cusp = TestFunction::new("cusp", 1, |x| x[0].abs().powf(0.3));
    let e = gagliardo_seminorm_cube(&cusp, &params(0.9, 2.0, 1), (-1.0, 1.0), &cfg).unwrap();
    assert!(e.diverged && e.value.is_infinite());
    let prof = e.profile.unwrap();
    assert_eq!(prof.contributions.len(), 64);
    assert!(prof.inner_slope < 0.0);
    // Below the threshold the same function is finite.
    let ok = gagliardo_seminorm_cube(&cusp, &params(0.6, 2.0, 1), (-1.0, 1.0), &cfg).unwrap();
    assert!(!ok.diverged && ok.value.is_finite());
    assert!(gagliardo_seminorm_cube(&x, &params(1.0, 2.0, 1), (0.0, 1.0), &cfg).is_err());
}

#[test]
fn cube_seminorm_two_dimensional() {
    // f = x_1 on [0,1]^2: [f]^2 = int int (x_1-y_1)^2 |x-y|^{-3} dx dy.
    let f = TestFunction::new("x1", 2, |x| x[0]);
    let est = gagliardo_seminorm_cube(&f, &params(0.5, 2.0, 2), (0.0, 1.0), &IntegratorConfig::tensor(16)).unwrap();
    let mc = gagliardo_seminorm_cube(&f, &params(0.5, 2.0, 2), (0.0, 1.0), &IntegratorConfig::monte_carlo(400_000, 4)).unwrap();
    assert!((est.value - mc.value).abs() < 4.0 * mc.stderr + 1e-3 * est.value, "{} vs {} +- {}", est.value, mc.value, mc.stderr);
}

#[test]
fn gauss_seminorm_examples() {
    let cfg = IntegratorConfig::default();
    let p = params(0.5, 2.0, 1);
    let c = TestFunction::new("c", 1, |_| 3.0);
    assert_eq!(gagliardo_seminorm_gauss(&c, &p, &cfg).unwrap().value, 0.0);
    // Tensor and Monte Carlo pair schemes agree on f(x) = x.
    let x = TestFunction::new("x", 1, |x| x[0]);
    let t = gagliardo_seminorm_gauss(&x, &p, &cfg).unwrap();
    let m = gagliardo_seminorm_gauss(&x, &p, &IntegratorConfig::monte_carlo(100_000, 5)).unwrap();
    assert!(t.value.is_finite() && t.stderr == 0.0);
    assert!((t.value - m.value).abs() < 3.0 * m.stderr, "{} vs {} +- {}", t.value, m.value, m.stderr);
    // Integrand is identically 1 for this f and weight.
    assert!((t.value - 1.0).abs() < 1e-6);
    // Homogeneity on 0.5 f is exact.
    let half = x.scaled(0.5);
    let h = gagliardo_seminorm_gauss(&half, &p, &cfg).unwrap();
    assert_eq!(h.value, 0.5 * t.value);
    assert!(t.value >= h.value);
}

#[test]
fn kernel_seminorm_matches_hermite_formula() {
    let cfg = IntegratorConfig::default();
    for k in 1..=4u32 {
        for s in [0.25, 0.5, 0.75] {
            let f = hermite_fn(1, &[(vec![k], 1.0)]);
            let e = kernel_seminorm_gauss(&f, &params(s, 2.0, 1), &cfg).unwrap();
            let target = 2.0 * abs_gamma_neg(s) * (k as f64).powf(s);
            assert!((e.value * e.value / target - 1.0).abs() < 1e-6, "k={k} s={s}");
        }
    }
    let c = TestFunction::new("c", 1, |_| 1.0);
    assert_eq!(kernel_seminorm_gauss(&c, &params(0.5, 2.0, 1), &cfg).unwrap().value, 0.0);
}

#[test]
fn kernel_seminorm_matches_mehler_time_oracle() {
    let cfg = IntegratorConfig::default();
    for &(s, p) in &[(0.5, 2.0), (0.4, 3.0), (0.7, 1.5)] {
        let sigma = s * p;
        let est = kernel_seminorm_gauss(&bump(), &params(s, p, 1), &cfg).unwrap();
        let oracle = mehler_time_oracle(|x| (-x * x).exp(), sigma, p).powf(1.0 / p);
        assert!((est.value / oracle - 1.0).abs() < 1e-5, "s={s} p={p}: {} vs {oracle}", est.value);
    }
    // Second-order part through the exact derivative.
    let f = bump().with_partial(MultiIndex::new(vec![1]), |x| -2.0 * x[0] * (-x[0] * x[0]).exp());
    let est = kernel_seminorm_gauss(&f, &params(1.5, 2.0, 1), &cfg).unwrap();
    let oracle = mehler_time_oracle(|x| -2.0 * x * (-x * x).exp(), 1.0, 2.0).sqrt();
    assert!((est.value / oracle - 1.0).abs() < 1e-5);
}

#[test]
fn kernel_seminorm_two_dimensional_sum_mode() {
    // d = 2: squared seminorm is 2|Gamma(-s)| sum |k|_1^s c_k^2.
    let f = hermite_fn(2, &[(vec![1, 1], 1.0), (vec![2, 0], 0.5), (vec![0, 1], -0.3)]);
    let e = kernel_seminorm_gauss(&f, &params(0.5, 2.0, 2), &IntegratorConfig::tensor(20)).unwrap();
    let target = 2.0 * abs_gamma_neg(0.5) * (2f64.sqrt() * 1.25 + 0.09);
    assert!((e.value * e.value / target - 1.0).abs() < 1e-6, "{} vs {target}", e.value * e.value);
}

#[test]
fn gagliardo_bounded_by_kernel_on_ten_functions() {
    let cfg = IntegratorConfig::default();
    let p = params(0.5, 2.0, 1);
    let fns: Vec<TestFunction> = vec![
        TestFunction::new("x", 1, |x| x[0]),
        TestFunction::new("sin", 1, |x| x[0].sin()),
        TestFunction::new("cos2", 1, |x| (2.0 * x[0]).cos()),
        TestFunction::new("tanh", 1, |x| x[0].tanh()),
        TestFunction::new("bump", 1, |x| (-x[0] * x[0]).exp()),
        TestFunction::new("abs", 1, |x| x[0].abs()),
        TestFunction::new("atan", 1, |x| (3.0 * x[0]).atan()),
        hermite_fn(1, &[(vec![2], 1.0)]),
        hermite_fn(1, &[(vec![3], 1.0), (vec![1], 0.5)]),
        TestFunction::new("sq", 1, |x| x[0] * x[0] / (1.0 + x[0] * x[0])),
    ];
    let ratios: Vec<f64> = fns
        .iter()
        .map(|f| {
            let g = gagliardo_seminorm_gauss(f, &p, &cfg).unwrap().value;
            let k = kernel_seminorm_gauss(f, &p, &cfg).unwrap().value;
            g / k
        })
        .collect();
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(c.is_finite() && c > 0.0);
    assert!(ratios.iter().all(|&r| r > 0.0 && r <= c * (1.0 + 1e-12)));
}

#[test]
fn mixed_difference_examples() {
    let x1 = |x: &[f64]| x[0];
    assert_eq!(mixed_difference(&x1, &[0], &[0.7, 2.0], &[0.2]).unwrap(), 0.7 - 0.2);
    let prod = |x: &[f64]| x[0] * x[1];
    let v = mixed_difference(&prod, &[0, 1], &[0.7, 2.0], &[0.2, -1.0]).unwrap();
    assert!((v - (0.7 - 0.2) * (2.0 + 1.0)).abs() < 1e-14);
    let sum = |x: &[f64]| x[0] + x[1];
    assert_eq!(mixed_difference(&sum, &[0, 1], &[0.7, 2.0], &[0.2, -1.0]).unwrap(), 0.0);
    assert!(mixed_difference(&sum, &[], &[0.7, 2.0], &[]).is_err());
    assert!(mixed_difference(&sum, &[0, 1], &[0.7, 2.0], &[0.2]).is_err());
}

#[test]
fn mixed_seminorm_examples() {
    let cfg = IntegratorConfig::tensor(16);
    let c = TestFunction::new("c", 2, |_| 2.0);
    for flavor in [MixedFlavor::GaussKernel, MixedFlavor::CubeGagliardo { a: 0.0, b: 1.0 }] {
        assert_eq!(mixed_seminorm(&c, &params(0.5, 2.0, 2), flavor, &cfg).unwrap().value, 0.0);
    }
    let sum = TestFunction::new("x1+x2", 2, |x| x[0] + x[1]);
    let terms = mixed_seminorm_terms(&sum, &params(0.5, 2.0, 2), MixedFlavor::GaussKernel, &cfg).unwrap();
    assert_eq!(terms.len(), 3);
    for t in &terms {
        if t.e.len() == 2 {
            assert_eq!(t.integral, 0.0);
        } else {
            assert!(t.integral > 0.0);
        }
    }
    // Singleton terms of x_1 + x_2 equal the d = 1 seminorm of x.
    let x = TestFunction::new("x", 1, |x| x[0]);
    let one = kernel_seminorm_gauss(&x, &params(0.5, 2.0, 1), &IntegratorConfig::default()).unwrap().value;
    for t in terms.iter().filter(|t| t.e.len() == 1) {
        assert!((t.integral.sqrt() / one - 1.0).abs() < 1e-6);
    }
}

#[test]
fn mixed_product_term_factorizes() {
    // For f = x_1 x_2 on the cube the e = {1,2} integral is the square of the
    // univariate integral of (x - y)^2 |x - y|^{-2}.
    let f = TestFunction::new("x1x2", 2, |x| x[0] * x[1]);
    let terms = mixed_seminorm_terms(
        &f,
        &params(0.5, 2.0, 2),
        MixedFlavor::CubeGagliardo { a: 0.0, b: 1.0 },
        &IntegratorConfig::tensor(8),
    )
    .unwrap();
    let both = terms.iter().find(|t| t.e.len() == 2).unwrap();
    assert!((both.integral - 1.0).abs() < 1e-3, "{}", both.integral);
}

#[test]
fn mixed_reduces_to_isotropic_in_one_dimension() {
    let cfg = IntegratorConfig::default();
    for f in [bump(), TestFunction::new("abs", 1, |x| x[0].abs())] {
        for (s, p) in [(0.5, 2.0), (0.3, 3.0)] {
            let iso = kernel_seminorm_gauss(&f, &params(s, p, 1), &cfg).unwrap();
            let mix = mixed_seminorm(&f, &params(s, p, 1), MixedFlavor::GaussKernel, &cfg).unwrap();
            assert!((iso.value / mix.value - 1.0).abs() < 1e-6, "{} vs {}", iso.value, mix.value);
            let iso = gagliardo_seminorm_cube(&f, &params(s, p, 1), (-1.0, 1.5), &cfg).unwrap();
            let mix = mixed_seminorm(&f, &params(s, p, 1), MixedFlavor::CubeGagliardo { a: -1.0, b: 1.5 }, &cfg).unwrap();
            assert!((iso.value / mix.value - 1.0).abs() < 1e-6);
        }
    }
    let mc = IntegratorConfig::monte_carlo(100_000, 8);
    let iso = kernel_seminorm_gauss(&bump(), &params(0.5, 2.0, 1), &mc).unwrap();
    let mix = mixed_seminorm(&bump(), &params(0.5, 2.0, 1), MixedFlavor::GaussKernel, &mc).unwrap();
    let se = (iso.stderr.powi(2) + mix.stderr.powi(2)).sqrt();
    assert!((iso.value - mix.value).abs() < 3.0 * se);
}

#[test]
fn counterexample_scan_examples() {
    let grid = [2.0, 4.0, 6.0, 8.0];
    let div = embedding_counterexample_scan(2, 2.0, 3.0, 1, &grid).unwrap();
    assert!(div.windows(2).all(|w| w[1].1 > w[0].1));
    // The blow-up sets in beyond R = 8 for m = 2.
    let far = embedding_counterexample_scan(2, 2.0, 3.0, 1, &[2.0, 8.0, 12.0, 16.0]).unwrap();
    assert!(far[3].1 / far[0].1 >= 1e3);
    let far_q = |r: f64| {
        let v = integrate(
            |x: f64| 2.0 * (x * x / 4.0).exp() * (1.0 + x * x).powi(-6) / (2.0 * PI).sqrt(),
            0.0,
            r,
            Tolerance::relative(1e-12),
        )
        .unwrap();
        v.cbrt()
    };
    for (r, v) in &far {
        assert!((v / far_q(*r) - 1.0).abs() < 1e-8);
    }
    let stab = embedding_counterexample_scan(2, 2.0, 1.0, 1, &grid).unwrap();
    assert!((stab[3].1 / stab[2].1 - 1.0).abs() < 0.01);
    // p = q: growth is at most polynomial, so the log-log slope stays bounded.
    let marg = embedding_counterexample_scan(2, 2.0, 2.0, 1, &[4.0, 8.0, 16.0, 32.0]).unwrap();
    assert!(marg.iter().all(|v| v.1.is_finite()));
    assert!(embedding_counterexample_scan(0, 2.0, 3.0, 1, &grid).is_err());
}

#[test]
fn spectral_formula_with_monte_carlo() {
    let coeffs = [0.3, -0.8, 0.5, 0.25, -0.4, 0.1, 0.2];
    let pairs: Vec<(Vec<u32>, f64)> = coeffs.iter().enumerate().map(|(k, &c)| (vec![k as u32], c)).collect();
    let f = hermite_fn(1, &pairs);
    let s = 0.5;
    let target: f64 = 2.0
        * abs_gamma_neg(s)
        * coeffs.iter().enumerate().map(|(k, c)| (k as f64).powf(s) * c * c).sum::<f64>();
    let e = kernel_seminorm_gauss(&f, &params(s, 2.0, 1), &IntegratorConfig::monte_carlo(128_000, 21)).unwrap();
    let sq = e.value * e.value;
    let se = 2.0 * e.value * e.stderr;
    assert!((sq - target).abs() < 3.0 * se, "{sq} +- {se} vs {target}");
    let t = kernel_seminorm_gauss(&f, &params(s, 2.0, 1), &IntegratorConfig::default()).unwrap();
    assert!((t.value * t.value / target - 1.0).abs() < 1e-6);
}

#[test]
fn monte_carlo_is_reproducible() {
    let cfg = IntegratorConfig::monte_carlo(20_000, 77);
    let p = params(0.5, 2.0, 1);
    let a = kernel_seminorm_gauss(&bump(), &p, &cfg).unwrap();
    let b = kernel_seminorm_gauss(&bump(), &p, &cfg).unwrap();
    assert_eq!(a, b);
    let c = kernel_seminorm_gauss(&bump(), &p, &IntegratorConfig::monte_carlo(20_000, 78)).unwrap();
    assert_ne!(a.value, c.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn seminorms_are_homogeneous(c in -4.0f64..4.0, s in 0.1f64..0.9) {
        prop_assume!(c.abs() > 1e-3);
        let cfg = IntegratorConfig::default();
        let p = params(s, 2.0, 1);
        let f = bump();
        let g = f.scaled(c);
        let kf = kernel_seminorm_gauss(&f, &p, &cfg).unwrap().value;
        let kg = kernel_seminorm_gauss(&g, &p, &cfg).unwrap().value;
        prop_assert!((kg - c.abs() * kf).abs() <= 1e-9 * kg);
        let gf = gagliardo_seminorm_cube(&f, &p, (-1.0, 1.0), &cfg).unwrap().value;
        let gg = gagliardo_seminorm_cube(&g, &p, (-1.0, 1.0), &cfg).unwrap().value;
        prop_assert!((gg - c.abs() * gf).abs() <= 1e-9 * gg);
    }

    #[test]
    fn triangle_inequality(a in prop::collection::vec(-1.0f64..1.0, 5), b in prop::collection::vec(-1.0f64..1.0, 5)) {
        let cfg = IntegratorConfig::default();
        let p = params(0.5, 2.0, 1);
        let mk = |c: &[f64]| hermite_fn(1, &c.iter().enumerate().map(|(k, &v)| (vec![k as u32], v)).collect::<Vec<_>>());
        let (f, g) = (mk(&a), mk(&b));
        let fg = f.sum(&g).unwrap();
        let n = |h: &TestFunction| kernel_seminorm_gauss(h, &p, &cfg).unwrap().value;
        prop_assert!(n(&fg) <= (n(&f) + n(&g)) * (1.0 + 1e-6));
        let l = |h: &TestFunction| lp_gamma_norm(h, 3.0, &IntegratorConfig::tensor(40)).unwrap().value;
        prop_assert!(l(&fg) <= (l(&f) + l(&g)) * (1.0 + 1e-9));
    }
}
