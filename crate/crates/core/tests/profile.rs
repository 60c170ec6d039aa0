use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use cygan::arith::{build_tables, ArithTables};
use cygan::profile::{
    char_factor, char_product, decay_diagnostic, density, phi, phi_l2, uniform_bound_constant, CharModel, DensitySpec,
    ModelConfig, PhiSeries,
};
use cygan::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn tables() -> &'static ArithTables {
    static T: OnceLock<ArithTables> = OnceLock::new();
    T.get_or_init(|| build_tables(10_000_000).unwrap())
}

fn model() -> &'static CharModel {
    static M: OnceLock<CharModel> = OnceLock::new();
    M.get_or_init(|| CharModel::build(ModelConfig::default(), tables()).unwrap())
}

fn squarefree_sum_of_squares(m: u64) -> bool {
    let t = tables();
    t.is_squarefree(m as usize) && t.r2(m as usize) > 0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn phi_is_even_and_periodic(m in 1u64..3000, t in 0.0f64..1.0) {
        let s = PhiSeries::new(m, 200).unwrap();
        let v = s.eval(t);
        prop_assert!((v - s.eval(1.0 - t)).abs() <= 1e-12);
        prop_assert!((v - s.eval(t + 1.0)).abs() <= 1e-12);
        prop_assert!((v - s.eval(t - 3.0)).abs() <= 1e-12);
    }
}

#[test]
fn uniform_bound_holds() {
    let a = uniform_bound_constant();
    let t = tables();
    for m in (1..400u64).filter(|&m| squarefree_sum_of_squares(m)) {
        let s = PhiSeries::new(m, 1 << 14).unwrap();
        let bound = a * t.r2(m as usize) as f64 / m as f64;
        let worst = s.grid(1 << 12).iter().fold(0.0f64, |w, v| w.max(v.abs()));
        assert!(worst + s.spec.tail_bound <= bound, "m={m}: {worst} > {bound}");
        assert!(s.sup_bound() <= bound);
    }
}

#[test]
fn parseval_on_random_squarefree() {
    let t = tables();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut done = 0;
    while done < 20 {
        let m: u64 = rng.gen_range(1..20_000);
        if !squarefree_sum_of_squares(m) {
            continue;
        }
        let s = PhiSeries::new(m, 4096).unwrap();
        let n = 1 << 14;
        let quad: f64 = s.grid(n).iter().map(|v| v * v).sum::<f64>() / n as f64;
        let l2 = phi_l2(m, t).unwrap();
        assert!(((quad - l2) / l2).abs() <= 1e-9, "m={m}: {quad} vs {l2}");
        done += 1;
    }
}

#[test]
fn l2_lower_bound() {
    let t = tables();
    for m in [1u64, 2, 5] {
        let r = t.r2(m as usize) as f64;
        assert!(phi_l2(m, t).unwrap() >= r * r / (PI * PI * (m * m) as f64));
    }
    assert_eq!(phi_l2(4, t).unwrap(), 0.0);
}

/// r2(k^2) for k <= n from a smallest-prime-factor sieve of its own.
fn r2_of_squares(n: usize) -> Vec<u64> {
    let mut spf: Vec<u32> = (0..=n as u32).collect();
    let mut i = 2;
    while i * i <= n {
        if spf[i] == i as u32 {
            for j in (i * i..=n).step_by(i) {
                if spf[j] == j as u32 {
                    spf[j] = i as u32;
                }
            }
        }
        i += 1;
    }
    (0..=n)
        .map(|k| {
            if k == 0 {
                return 0;
            }
            let mut out = 4u64;
            let mut r = k;
            while r > 1 {
                let p = spf[r] as usize;
                let mut e = 0;
                while r % p == 0 {
                    r /= p;
                    e += 1;
                }
                if p % 4 == 1 {
                    out *= 2 * e + 1;
                }
            }
            out
        })
        .collect()
}

#[test]
fn phi_at_zero_against_long_direct_sum() {
    let n = 1_000_000;
    let r = r2_of_squares(n);
    let direct: f64 = -SQRT_2 / PI * (1..=n).rev().map(|k| r[k] as f64 / (k as f64 * k as f64)).sum::<f64>();
    let s = PhiSeries::new(1, n as u64).unwrap();
    assert!(((s.eval(0.0) - direct) / direct).abs() < 1e-12);

    let t = tables();
    let v = phi(1, 0.0, 1e-4, t).unwrap();
    assert!(v < 0.0);
    // the series with its tail estimate brackets the long sum
    let short = PhiSeries::with_tolerance(1, 1e-4).unwrap();
    assert!((v - direct).abs() <= short.spec.tail_bound, "{v} vs {direct}");
    assert!(matches!(phi(1, 0.0, 1e-10, t), Err(Error::Resolution { .. })));
}

#[test]
fn char_factor_symmetries() {
    let t = tables();
    for sigma in [0.5, 2.0, 7.0] {
        let a = char_factor(1, sigma, 256, t).unwrap();
        let b = char_factor(1, -sigma, 256, t).unwrap();
        assert!(a.norm() <= 1.0 + 1e-15);
        assert!((a - b.conj()).norm() < 1e-14);
        assert_eq!(char_factor(4, sigma, 64, t).unwrap().re, 1.0);
    }
}

#[test]
fn product_modulus_decreases() {
    let m = model();
    let mods: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0].iter().map(|&s| m.eval(s).unwrap().norm()).collect();
    assert_eq!(mods[0], 1.0);
    for w in mods.windows(2) {
        assert!(w[1] < w[0], "{mods:?}");
    }
}

#[test]
fn product_cutoff_self_consistent() {
    let t = tables();
    let a = char_product(3.0, 10_000, t).unwrap();
    let b = char_product(3.0, 40_000, t).unwrap();
    assert!((a - b).norm() <= 1e-6, "{a} vs {b}");
}

#[test]
fn gram_matrices_are_positive_semidefinite() {
    let m = model();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..10 {
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // real form [[A, -B], [B, A]] of the Hermitian matrix A + iB
        let mut g = DMatrix::<f64>::zeros(16, 16);
        for i in 0..8 {
            for j in 0..8 {
                let z = m.eval(s[i] - s[j]).unwrap();
                g[(i, j)] = z.re;
                g[(i + 8, j + 8)] = z.re;
                g[(i, j + 8)] = -z.im;
                g[(i + 8, j)] = z.im;
            }
        }
        let min = g.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8, "eigenvalue {min}");
    }
}

#[test]
fn density_and_decay() {
    let g = density(&DensitySpec::default(), model()).unwrap();
    assert!(g.cdf.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(g.cdf[0].abs() < 1e-9 && (g.cdf[g.cdf.len() - 1] - 1.0).abs() < 1e-6);
    assert!(g.third < 0.0);

    let d = decay_diagnostic(&g, tables()).unwrap();
    assert!(d.rho > 0.0);
    assert!((d.rho - PI / (5.0 * d.c1)).abs() < 1e-12);
    let a0 = d.alpha0.expect("density falls below exp(-|alpha|) inside the grid");
    assert!(a0 <= g.extent());
    for (&a, &p) in g.alpha_grid.iter().zip(&g.p_values) {
        if a.abs() > a0 {
            assert!(p < (-a.abs()).exp());
        }
    }

    let mut shuffled = g.clone();
    shuffled.alpha_grid.reverse();
    shuffled.p_values.reverse();
    assert_eq!(decay_diagnostic(&shuffled, tables()).unwrap(), d);
}
