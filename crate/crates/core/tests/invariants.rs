use std::f64::consts::PI;
use std::sync::OnceLock;

use cygan::arith::{build_tables, psi, r2_oracle, squarefree_decompose, ArithTables};
use cygan::lattice::{count_bruteforce, count_exact, decomposition_residual, error_term, s_n_sum, taylor_coeffs, vol_ball};
use cygan::voronoi::{SeriesConfig, SeriesTerms};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn tables() -> &'static ArithTables {
    static T: OnceLock<ArithTables> = OnceLock::new();
    T.get_or_init(|| build_tables(1_000_000).unwrap())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn mu_by_trial_division(mut m: u64) -> i8 {
    let mut sign = 1;
    let mut p = 2;
    while p * p <= m {
        if m % p == 0 {
            m /= p;
            if m % p == 0 {
                return 0;
            }
            sign = -sign;
        }
        p += 1;
    }
    if m > 1 {
        sign = -sign;
    }
    sign
}

#[test]
fn table_examples() {
    let t = build_tables(12).unwrap();
    let r: Vec<u32> = (0..=10).map(|m| t.r2(m)).collect();
    assert_eq!(r, [1, 4, 4, 0, 4, 8, 0, 0, 4, 4, 8]);
    assert_eq!(t.mu(1), 1);
    assert_eq!(t.sqfree_core(12), (3, 2));
    assert_eq!(squarefree_decompose(18, tables()).unwrap(), (2, 3));
    assert_eq!(squarefree_decompose(30, tables()).unwrap(), (30, 1));
    assert!(squarefree_decompose(13, &t).is_err());
    assert_eq!(r2_oracle(25), 12);
}

#[test]
fn mu_matches_trial_division() {
    let t = tables();
    for m in 1..=100_000u64 {
        assert_eq!(t.mu(m as usize), mu_by_trial_division(m), "m = {m}");
    }
}

#[test]
fn quarter_r2_multiplicative_on_odd_coprime() {
    let t = tables();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 100 {
        let a = 2 * rng.gen_range(0..500u64) + 1;
        let b = 2 * rng.gen_range(0..500u64) + 1;
        if gcd(a, b) != 1 {
            continue;
        }
        let lhs = t.r2((a * b) as usize) / 4;
        assert_eq!(lhs, (t.r2(a as usize) / 4) * (t.r2(b as usize) / 4), "{a} {b}");
        checked += 1;
    }
}

#[test]
fn psi_periodic_and_bounded() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let t: f64 = rng.gen_range(-1e3..1e3);
        let v = psi(t).unwrap();
        assert!((-0.5..0.5).contains(&v));
        assert!((psi(t + 1.0).unwrap() - v).abs() < 1e-9);
    }
    assert_eq!(psi(1.0).unwrap(), -0.5);
    assert!(psi(f64::NAN).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counts_are_odd_and_monotone(a in 0.3f64..40.0, b in 0.3f64..40.0) {
        let t = tables();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n_lo = count_exact(lo, t).unwrap();
        let n_hi = count_exact(hi, t).unwrap();
        prop_assert_eq!(n_lo % 2, 1);
        prop_assert!(n_lo <= n_hi);
    }

    #[test]
    fn error_term_reassembles_count(x in 0.5f64..200.0) {
        let s = error_term(x, tables()).unwrap();
        let back = s.e_hat * x * x + vol_ball() * x.powi(4);
        prop_assert!((back - s.n1 as f64).abs() <= 1e-12 * s.n1 as f64 + 1e-9);
    }

    #[test]
    fn brute_force_agrees(x in 0.1f64..9.0) {
        prop_assert_eq!(count_exact(x, tables()).unwrap(), count_bruteforce(x).unwrap());
    }
}

#[test]
fn count_constant_between_representable_radii() {
    let t = tables();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x: f64 = rng.gen_range(2.0..60.0);
        // every radius in (floor(x^4)^(1/4), x] has the same floor of x^4
        let x0 = (x.powi(4).floor()).powf(0.25);
        let inner = 0.5 * (x0 + x);
        if inner.powi(4).floor() != x.powi(4).floor() {
            continue;
        }
        assert_eq!(count_exact(inner, t).unwrap(), count_exact(x, t).unwrap());
    }
}

#[test]
fn taylor_constant_signs() {
    let c = taylor_coeffs(60).unwrap().c;
    assert!((c[0] - 2f64.powf(1.5) * PI / 3.0).abs() < 1e-15);
    assert!(c[1..].iter().all(|&v| v < 0.0));
    for w in c[1..].windows(2) {
        let r = w[1] / w[0];
        assert!(r > 0.0 && r < 0.5);
    }
}

#[test]
fn lemma_two_shape() {
    let t = tables();
    let c = taylor_coeffs(10).unwrap().c;
    for n in [1usize, 2, 5] {
        let y: f64 = 100.0;
        let gap = (s_n_sum(n, y, t).unwrap() - c[n] * y * y).abs();
        assert!(gap <= 10.0 * 0.5f64.powi(n as i32) * y.sqrt(), "n={n}: {gap}");
    }
}

#[test]
fn decomposition_tail_shrinks() {
    let t = tables();
    let n = count_exact(25.7, t).unwrap() as f64;
    let r10 = decomposition_residual(25.7, 10, t).unwrap().abs();
    let r50 = decomposition_residual(25.7, 50, t).unwrap().abs();
    assert!(r50 <= r10);
    assert!(decomposition_residual(10.3, 50, t).unwrap().abs() <= 1e-6 * count_exact(10.3, t).unwrap() as f64);
    assert!(decomposition_residual(50.1, 60, t).unwrap().abs() <= 1e-8 * count_exact(50.1, t).unwrap() as f64);
    assert!(r50 <= 1e-9 * n);
}

#[test]
fn mean_error_near_zero() {
    let t = tables();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let n = 10_000;
    let mean: f64 = (0..n).map(|_| cygan::lattice::normalized_error(rng.gen_range(100.0..200.0), t).unwrap()).sum::<f64>() / n as f64;
    assert!(mean.abs() <= 0.05, "{mean}");
}

#[test]
fn series_window_defaults() {
    let cfg = SeriesConfig::for_window(10.5).unwrap();
    assert_eq!(cfg.m_cutoff, 111);
    let terms = SeriesTerms::new(cfg.m_cutoff, tables()).unwrap();
    let nonzero = (1..=111).filter(|&m| tables().r2(m) > 0).count();
    assert_eq!(terms.len(), nonzero);
    assert!(SeriesConfig::for_window(-1.0).is_err());
}
