use gausswidth::hermite::*;
use gausswidth::widths::*;
use proptest::prelude::*;

/// Brute force: all (1 + |k|_1)^{-s/2} for |k|_1 <= max_l1, sorted descending.
fn brute_sequence(s: f64, d: usize, max_l1: u32) -> Vec<f64> {
    let mut v: Vec<f64> = MultiIndex::total_degree(d, max_l1)
        .iter()
        .map(|k| (1.0 + k.l1() as f64).powf(-0.5 * s))
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn count_ball_examples() {
    for d in 1..=6 {
        assert_eq!(count_ball(1, d).unwrap(), 1);
    }
    assert_eq!(count_ball(2, 2).unwrap(), 3);
    assert_eq!(count_ball(3, 2).unwrap(), 6);
    for d in 1..=4u32 {
        for r in 1..=8u64 {
            let brute = MultiIndex::total_degree(d as usize, (r - 1) as u32).len() as u64;
            assert_eq!(count_ball(r, d).unwrap(), brute);
        }
    }
    assert!(count_ball(0, 2).is_err());
    assert!(matches!(count_ball(1 << 40, 4), Err(gausswidth::Error::Overflow(_))));
}

#[test]
fn sigma_examples() {
    for d in 1..=4 {
        for s in [0.5, 1.0, 3.0] {
            assert_eq!(sigma_rearranged(1, s, d).unwrap(), 1.0);
        }
    }
    for n in 1..=500u64 {
        assert_eq!(sigma_rearranged(n, 2.0, 1).unwrap(), 1.0 / n as f64);
    }
    assert_eq!(sigma_rearranged(4, 2.0, 2).unwrap(), 1.0 / 3.0);
    let brute = brute_sequence(2.0, 2, 10);
    for (i, v) in brute.iter().enumerate().take(60) {
        assert!((sigma_rearranged(i as u64 + 1, 2.0, 2).unwrap() - v).abs() < 1e-15);
    }
    let brute3 = brute_sequence(1.3, 3, 8);
    for (i, v) in brute3.iter().enumerate().take(120) {
        assert!((sigma_rearranged(i as u64 + 1, 1.3, 3).unwrap() - v).abs() < 1e-15);
    }
}

#[test]
fn limit_constant_examples() {
    assert_eq!(width_limit_constant(1.7, 1).unwrap(), 1.0);
    assert!((width_limit_constant(2.0, 2).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
    assert!((width_limit_constant(1.0, 3).unwrap() - 6f64.powf(-1.0 / 6.0)).abs() < 1e-14);
    assert!((width_limit_constant(1.0, 3).unwrap() - 0.74183).abs() < 1e-5);
    assert!(width_limit_constant(2.0, 40).unwrap() > 0.0);
}

#[test]
fn curve_examples() {
    let ns: Vec<u64> = (1..=200).collect();
    let c = width_curve_exact(2.0, 1, &ns).unwrap();
    assert!(c.normalized.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    let n = count_ball(200, 2).unwrap();
    let c2 = width_curve_exact(1.0, 2, &[n]).unwrap();
    assert!((c2.normalized[0] / 2f64.powf(-0.25) - 1.0).abs() < 0.01);
    assert!(width_curve_exact(1.0, 2, &[3, 3]).is_err());
}

#[test]
fn normalized_monotone_on_ball_counts() {
    for d in 1..=3 {
        for s in [0.5, 1.0, 2.0] {
            let ns = ball_counts(d, 300).unwrap();
            let c = width_curve_exact(s, d, &ns[1..]).unwrap();
            let inc = c.normalized.windows(2).all(|w| w[1] >= w[0] - 1e-15);
            let dec = c.normalized.windows(2).all(|w| w[1] <= w[0] + 1e-15);
            assert!(inc || dec, "d={d} s={s}");
        }
    }
}

#[test]
fn limit_within_two_percent() {
    for d in 1..=3 {
        for s in [0.5, 1.0, 2.0] {
            let n = count_ball(200, d).unwrap();
            let v = sigma_rearranged(n, s, d).unwrap() * (n as f64).powf(s / (2.0 * d as f64));
            let lim = width_limit_constant(s, d).unwrap();
            assert!((v - lim).abs() <= 0.02 * lim, "d={d} s={s}: {v} vs {lim}");
        }
    }
}

#[test]
fn bracketing() {
    for d in 1..=4 {
        for s in [0.5, 1.0, 2.5] {
            for r in 2..=100u64 {
                let lo = count_ball(r - 1, d).unwrap();
                let hi = count_ball(r, d).unwrap();
                for n in [lo + 1, (lo + hi) / 2 + 1, hi] {
                    let v = sigma_rearranged(n.min(hi), s, d).unwrap();
                    assert!(v >= (r as f64).powf(-0.5 * s) && v <= ((r - 1) as f64).powf(-0.5 * s));
                }
            }
        }
    }
}

#[test]
fn gram_examples() {
    let h = |k: u32, c: f64| HermiteExpansion::from_pairs(1, [(vec![k], c)]).unwrap();
    assert_eq!(kolmogorov_width_gram(&[h(0, 1.0)], 1).unwrap(), 0.0);
    assert!((kolmogorov_width_gram(&[h(0, 1.0), h(1, 1.0), h(2, 1.0)], 1).unwrap() - 1.0).abs() < 1e-14);
    assert!((kolmogorov_width_gram(&[h(0, 1.0), h(1, 0.5)], 1).unwrap() - 0.5).abs() < 1e-14);
    assert!(kolmogorov_width_gram(&[], 0).is_err());
    let mixed = vec![h(0, 1.0), HermiteExpansion::from_pairs(2, [(vec![0, 0], 1.0)]).unwrap()];
    assert!(kolmogorov_width_gram(&mixed, 0).is_err());
    let curve = width_curve_gram(&[h(0, 1.0), h(1, 0.5), h(2, 0.25)], &[0, 1, 2, 3]).unwrap();
    assert!(curve.entries.windows(2).all(|w| w[1].1 <= w[0].1));
}

#[test]
fn index_convention_on_diagonal_operator() {
    // T e_k = sigma_k e_k; the set T(B) is sampled by its extreme points.
    let diag: Vec<f64> = (1..=12).map(|k| (k as f64).powf(-0.7)).collect();
    let sample: Vec<HermiteExpansion> = diag
        .iter()
        .enumerate()
        .map(|(k, &v)| HermiteExpansion::from_pairs(1, [(vec![k as u32], v)]).unwrap())
        .collect();
    for n in 0..12 {
        let set_width = kolmogorov_width_gram(&sample, n).unwrap();
        let op_number = diagonal_operator_number(&diag, n + 1).unwrap();
        assert!((set_width - op_number).abs() < 1e-14);
    }
    assert!(diagonal_operator_number(&diag, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_optimality(coeffs in prop::collection::vec(-1.0f64..1.0, 28), r in 1u64..7, s in 0.2f64..3.0) {
        let keys = MultiIndex::total_degree(2, 6);
        let e = HermiteExpansion::from_pairs(2, keys.into_iter().zip(coeffs)).unwrap();
        let kept = truncate_ball(&e, r);
        let err2: f64 = e.coeffs.iter().map(|(k, v)| {
            let kv = kept.get(k);
            (v - kv) * (v - kv)
        }).sum();
        let bound = sigma_rearranged(count_ball(r, 2).unwrap() + 1, s, 2).unwrap() * hs_norm(&e, s);
        prop_assert!(err2.sqrt() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn sigma_non_increasing(n in 1u64..1_000_000, d in 1u32..=5, s in 0.1f64..4.0) {
        prop_assert!(sigma_rearranged(n + 1, s, d).unwrap() <= sigma_rearranged(n, s, d).unwrap());
    }
}
