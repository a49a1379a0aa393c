//! Acceptance harness: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use gausswidth::assembly::{allocate, build_partition, choose_aux_params};
use gausswidth::experiments::{
    assemble_rate_rows, rate_fit_with_errors, run, ExperimentConfig, OperatorFlavor, RateSpec, Verdict,
};
use gausswidth::hermite::{
    derivative_expansion, gauss_hermite_rule, hermite_eval, parseval_l2_norm, synthesize, HermiteExpansion,
    MultiIndex, SmoothnessParams,
};
use gausswidth::norms::{
    gagliardo_seminorm_cube, kernel_seminorm_gauss, mixed_seminorm, IntegratorConfig, MixedFlavor, TestFunction,
};
use gausswidth::ou_kernel::mehler;
use gausswidth::widths::{count_ball, sigma_rearranged, width_curve_exact, width_limit_constant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Harness {
    failed: Vec<String>,
}

impl Harness {
    fn check(&mut self, id: &str, budget: Duration, body: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = body();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = o.pass && in_time;
        println!(
            "{} [{id}] {} | runtime {:.2}s (limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn theorem36_constant() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in 1..=3u32 {
        for s in [0.5, 1.0, 2.0] {
            let n = count_ball(200, d).unwrap();
            let v = sigma_rearranged(n, s, d).unwrap() * (n as f64).powf(s / (2.0 * d as f64));
            let lim = width_limit_constant(s, d).unwrap();
            worst = worst.max((v - lim).abs() / lim);
        }
    }
    let ns: Vec<u64> = (1..=5000).collect();
    let exact = width_curve_exact(2.0, 1, &ns).unwrap().normalized.iter().all(|&v| v == 1.0);
    outcome(
        worst <= 0.02 && exact,
        format!("max rel. deviation {worst:.4e} (<= 0.02); d=1 s=2 normalized == 1 for n<=5000: {exact}"),
    )
}

fn theorem36_bracketing() -> Outcome {
    let mut violations = 0usize;
    let mut checked = 0usize;
    for d in 1..=4u32 {
        for s in [0.5, 1.0, 2.0, 3.0] {
            for r in 2..=100u64 {
                let lo = count_ball(r - 1, d).unwrap();
                let hi = count_ball(r, d).unwrap();
                for n in [lo + 1, (lo + 1 + hi) / 2, hi] {
                    let v = sigma_rearranged(n, s, d).unwrap();
                    checked += 1;
                    if v < (r as f64).powf(-0.5 * s) || v > ((r - 1) as f64).powf(-0.5 * s) {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over {checked} (r, d, s, n) checks"))
}

fn orthonormality() -> Outcome {
    let rule = gauss_hermite_rule(64);
    let mut worst: f64 = 0.0;
    for j in 0..=40 {
        for k in 0..=40 {
            let v = rule.integrate(|x| hermite_eval(j, x) * hermite_eval(k, x));
            worst = worst.max((v - if j == k { 1.0 } else { 0.0 }).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max |<H_j,H_k> - delta_jk| = {worst:.3e} (<= 1e-9)"))
}

fn derivative_representation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for i in 0..50 {
        let dim = 1 + i % 2;
        let deg = rng.random_range(1..=10);
        let pairs: Vec<(MultiIndex, f64)> = MultiIndex::total_degree(dim, deg)
            .into_iter()
            .map(|k| (k, rng.random_range(-1.0..1.0)))
            .collect();
        let e = HermiteExpansion::from_pairs(dim, pairs).unwrap();
        let axis = rng.random_range(0..dim);
        let alpha = MultiIndex::unit(dim, axis);
        let de = derivative_expansion(&e, &alpha).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let exact = synthesize(&de, &x).unwrap();
        let mut xp = x.clone();
        xp[axis] += h;
        let mut xm = x.clone();
        xm[axis] -= h;
        let fd = (synthesize(&e, &xp).unwrap() - synthesize(&e, &xm).unwrap()) / (2.0 * h);
        let scale = exact.abs().max(parseval_l2_norm(&de));
        worst = worst.max((fd - exact).abs() / scale);
    }
    outcome(worst <= 1e-6, format!("max relative FD deviation {worst:.3e} over 50 expansions (<= 1e-6)"))
}

fn semigroup_identity() -> Outcome {
    let rule = gauss_hermite_rule(80);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.random_range(0.1..2.0);
        let s = rng.random_range(0.1..2.0);
        let x = rng.random_range(-2.0..2.0);
        let y = rng.random_range(-2.0..2.0);
        let lhs = rule.integrate(|z| mehler(t, &[x], &[z]).unwrap() * mehler(s, &[z], &[y]).unwrap());
        let rhs = mehler(t + s, &[x], &[y]).unwrap();
        worst = worst.max((lhs / rhs - 1.0).abs());
    }
    outcome(worst <= 1e-6, format!("max rel. error {worst:.3e} at 20 random (t, s, x, y) (<= 1e-6)"))
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).unwrap()
}

fn lower_bound() -> Outcome {
    let rep = run(&config(
        r#"{"kind":"kernel-check","seed":1,"lower_bound":{"sigmas":[0.4,1.0],"dims":[1,2],"pairs":10000}}"#,
    ))
    .unwrap();
    let c = &rep.summary.criteria[0];
    outcome(c.verdict == Verdict::Pass, format!("{} violations over 10^4 pairs (== 0)", c.measured))
}

fn eigenrelation() -> Outcome {
    let rep = run(&config(
        r#"{"kind":"kernel-check","eigen":{"max_k":4,"sigmas":[0.25,0.5,0.75],"points":[-1.3,-0.4,0.2,0.9,1.7],
            "rel_tol":1e-3,"probes_2d":[[[1,1],[0.3,-0.5]],[[2,1],[0.7,0.4]]]}}"#,
    ))
    .unwrap();
    let d1 = rep.summary.criteria.iter().find(|c| c.name == "eigenrelation-d1").unwrap();
    let modes: Vec<String> = rep
        .summary
        .criteria
        .iter()
        .filter(|c| c.verdict == Verdict::Report)
        .map(|c| format!("{}: {}", c.name, c.note.as_deref().unwrap_or("")))
        .collect();
    outcome(
        d1.verdict == Verdict::Pass,
        format!("d=1 max rel. error {:.3e} (<= 1e-3); REPORT d=2 {}", d1.measured, modes.join("; ")),
    )
}

fn budget_feasibility() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut feasible = true;
    for &(p, q) in &[(2.0, 1.0), (3.0, 2.0), (4.0, 1.0)] {
        for d in 1..=2 {
            let params = choose_aux_params(p, q, 1.5, d).unwrap();
            for e in 0..=6 {
                let n = if e == 0 { 2 } else { 10u64.pow(e) };
                match allocate(n, &params, d) {
                    Ok(b) => worst_ratio = worst_ratio.max(b.total() as f64 / n as f64),
                    Err(_) => feasible = false,
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_sum: f64 = 0.0;
    for d in 1..=2 {
        let part = build_partition(1.5, d, 3).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-30.0..30.0)).collect();
            let s: f64 = part.active(&x).iter().map(|c| c.1).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    outcome(
        feasible && worst_ratio <= 1.0 && worst_sum <= 1e-12,
        format!("max sum n_k / n = {worst_ratio:.4} (<= 1); max |sum phi_k - 1| = {worst_sum:.2e} (<= 1e-12)"),
    )
}

fn rate(function: &str) -> gausswidth::experiments::RateFit {
    let ns: Vec<u64> = (6..=12).map(|k| 1u64 << k).collect();
    let spec = RateSpec {
        p: 2.0,
        q: 1.0,
        s: 1.5,
        d: 1,
        flavor: OperatorFlavor::Sampling,
        function: function.into(),
        theta: 1.5,
        seed: 0,
    };
    let (rows, _) = assemble_rate_rows(&spec, &ns, &IntegratorConfig::default()).unwrap();
    let pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.n as f64, r.error, r.stderr)).collect();
    rate_fit_with_errors(&pts, 400, 0).unwrap()
}

fn empirical_rate() -> Outcome {
    let kink = rate("kink-1.5");
    let bump = rate("gauss-bump");
    let kink_ok = (-1.8..=-1.2).contains(&kink.slope) && kink.r2 >= 0.95;
    let bump_ok = bump.slope <= -1.5;
    outcome(
        kink_ok && bump_ok,
        format!(
            "kink-1.5 slope {:.3} (CI90 [{:.3}, {:.3}]) r2 {:.4} (want slope in [-1.8, -1.2], r2 >= 0.95); \
             gauss-bump slope {:.3} r2 {:.4} (want <= -1.5)",
            kink.slope, kink.slope_ci90.0, kink.slope_ci90.1, kink.r2, bump.slope, bump.r2
        ),
    )
}

fn equivalence() -> Outcome {
    let rep = run(&config(r#"{"kind":"norm-check","s_list":[0.5,1.5],"suite_size":20,"max_degree":8,"max_ratio":20}"#))
        .unwrap();
    let parts: Vec<String> = rep.summary.criteria.iter().map(|c| format!("{} c2/c1 = {:.3}", c.name, c.measured)).collect();
    outcome(rep.summary.all_passed, format!("{} (<= 20)", parts.join(", ")))
}

fn counterexample() -> Outcome {
    let rep = run(&config(
        r#"{"kind":"counterexample","m":2,"p":2,"q_diverge":3,"q_stable":1,"radii":[2,4,6,8],
            "growth_factor":10,"stable_tol":0.01}"#,
    ))
    .unwrap();
    let parts: Vec<String> = rep
        .summary
        .criteria
        .iter()
        .map(|c| format!("{} {:?} measured {:.5} ({})", c.name, c.verdict, c.measured, c.threshold))
        .collect();
    outcome(rep.summary.all_passed, parts.join("; "))
}

fn mixed_reduction() -> Outcome {
    let f = TestFunction::new("bump", 1, |x: &[f64]| (-x[0] * x[0]).exp() * (1.0 + 0.5 * x[0]));
    let params = SmoothnessParams::new(0.5, 2.0, 1.0, 1).unwrap();
    let mc = IntegratorConfig::monte_carlo(100_000, 8);
    let iso = kernel_seminorm_gauss(&f, &params, &mc).unwrap();
    let mix = mixed_seminorm(&f, &params, MixedFlavor::GaussKernel, &mc).unwrap();
    let se = (iso.stderr.powi(2) + mix.stderr.powi(2)).sqrt();
    let tensor = IntegratorConfig::default();
    let iso_c = gagliardo_seminorm_cube(&f, &params, (-1.0, 1.5), &tensor).unwrap();
    let mix_c = mixed_seminorm(&f, &params, MixedFlavor::CubeGagliardo { a: -1.0, b: 1.5 }, &tensor).unwrap();
    let rel = (iso_c.value / mix_c.value - 1.0).abs();
    outcome(
        (iso.value - mix.value).abs() <= 3.0 * se && rel <= 1e-6,
        format!(
            "Monte Carlo |iso - mixed| = {:.3e} vs 3 combined SE {:.3e}; tensor cube rel. diff {rel:.2e}",
            (iso.value - mix.value).abs(),
            3.0 * se
        ),
    )
}

fn main() {
    let mut h = Harness { failed: Vec::new() };
    h.check("1 width limit constant", secs(1), theorem36_constant);
    h.check("2 width bracketing", secs(1), theorem36_bracketing);
    h.check("3 Hermite orthonormality", secs(1), orthonormality);
    h.check("4 derivative representation", secs(10), derivative_representation);
    h.check("5 Mehler semigroup", secs(5), semigroup_identity);
    h.check("6 kernel lower bound", secs(120), lower_bound);
    h.check("7 fractional eigenrelation", secs(120), eigenrelation);
    h.check("8 budget feasibility", secs(30), budget_feasibility);
    h.check("9 assembled empirical rate", secs(900), empirical_rate);
    h.check("10 norm equivalence", secs(600), equivalence);
    h.check("11 counterexample", secs(60), counterexample);
    h.check("mixed d=1 reduction", secs(600), mixed_reduction);
    if h.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", h.failed.len(), h.failed.join(", "));
        std::process::exit(1);
    }
}
