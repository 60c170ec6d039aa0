//! Moments of the limit distribution from the constrained sums
//!
//! `Xi(m, l) = (-1)^l (sqrt 2 pi)^-l mu(m)^2 / m^l
//!     sum_{e in {+-1}^l} sum_{k_i >= 1, sum e_i k_i = 0} prod r2(m k_i^2) / k_i^2`,
//!
//! which equal `int_0^1 phi_m^l`, assembled over compositions of `j` with
//! square-free indices taken in ascending order.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::arith::ArithTables;
use crate::error::{Error, Result};
use crate::numeric::{isqrt, par_map, Compensated};
use crate::profile::{self, PhiSeries, R2SquareSums, K_SIEVE};

/// Largest moment order supported.
pub const J_MAX: u32 = 8;

const BRUTE_FORCE_BUDGET: f64 = 1e8;
/// Guard on `l * y`, the half-width of the offset range of the DP.
const DP_WIDTH_LIMIT: u64 = 1 << 24;

fn check_active(m: u64, tables: &ArithTables) -> Result<bool> {
    if m == 0 {
        return Err(Error::domain("Xi needs m >= 1"));
    }
    tables.ensure_covers(m)?;
    Ok(tables.is_squarefree(m as usize) && tables.r2(m as usize) > 0)
}

fn prefactor(m: u64, ell: u32) -> f64 {
    let sign = if ell % 2 == 0 { 1.0 } else { -1.0 };
    sign * (1.0 / (SQRT_2 * PI * m as f64)).powi(ell as i32)
}

/// `D_1 .. D_h` of the sign/offset convolution, `D_i` indexed by offset
/// `s + i y`; `a[k - 1]` is the weight of `k`.
fn offset_distributions(a: &[f64], h: u32) -> Vec<Vec<f64>> {
    let y = a.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(h as usize);
    for i in 1..=h as usize {
        let mut next = vec![0.0; 2 * i * y + 1];
        let prev: &[f64] = out.last().map_or(&[1.0], |v| v.as_slice());
        for (j, &d) in prev.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            // offset s = j - (i - 1) y moves to s +- k, stored at s +- k + i y
            let base = j + y;
            for (k, &ak) in a.iter().enumerate() {
                let v = d * ak;
                next[base + k + 1] += v;
                next[base - k - 1] += v;
            }
        }
        out.push(next);
    }
    out
}

/// Raw constrained sums (no prefactor) for every `l` in `2..=ell_max`.
fn raw_sums(a: &[f64], ell_max: u32) -> Vec<f64> {
    let h = ell_max.div_ceil(2);
    let d = offset_distributions(a, h);
    let y = a.len();
    let mut out = vec![0.0; ell_max as usize + 1];
    for ell in 2..=ell_max {
        let lo = ell / 2;
        let hi = ell - lo;
        let da = &d[lo as usize - 1];
        let db = &d[hi as usize - 1];
        // sum_s D_lo(s) D_hi(-s); both are even in s
        let (wa, wb) = (lo as usize * y, hi as usize * y);
        let mut acc = Compensated::new();
        for (i, &va) in da.iter().enumerate() {
            if va != 0.0 {
                acc.add(va * db[i + wb - wa]);
            }
        }
        out[ell as usize] = acc.value();
    }
    out
}

fn coeffs(m: u64, y: u64) -> Result<Vec<f64>> {
    if y as usize > K_SIEVE {
        return Err(Error::TableTooSmall { needed: y, limit: K_SIEVE as u64 });
    }
    Ok(PhiSeries::new(m, y)?.coeffs().to_vec())
}

/// `Xi(m, l; y)` by the offset convolution.
pub fn xi_truncated(m: u64, ell: u32, y: u64, tables: &ArithTables) -> Result<f64> {
    if ell == 0 || y == 0 {
        return Err(Error::domain("Xi needs l >= 1 and y >= 1"));
    }
    if !check_active(m, tables)? || ell == 1 {
        return Ok(0.0);
    }
    if ell as u64 * y > DP_WIDTH_LIMIT {
        return Err(Error::Resource(format!("offset range l * y = {} too large", ell as u64 * y)));
    }
    let a = coeffs(m, y)?;
    Ok(prefactor(m, ell) * raw_sums(&a, ell)[ell as usize])
}

/// Literal enumeration of every sign/index tuple; reads `r2` from the tables.
pub fn xi_bruteforce(m: u64, ell: u32, y: u64, tables: &ArithTables) -> Result<f64> {
    if ell == 0 || y == 0 {
        return Err(Error::domain("Xi needs l >= 1 and y >= 1"));
    }
    let cost = (2.0 * y as f64).powi(ell as i32);
    if cost > BRUTE_FORCE_BUDGET {
        return Err(Error::CostGuard(format!("(2y)^l = {cost:e} exceeds {BRUTE_FORCE_BUDGET:e}")));
    }
    if !check_active(m, tables)? || ell == 1 {
        return Ok(0.0);
    }
    tables.ensure_covers(m * y * y)?;
    let w: Vec<f64> = (1..=y).map(|k| tables.r2((m * k * k) as usize) as f64 / (k * k) as f64).collect();
    let ell = ell as usize;
    let n = 2 * y as usize;
    let mut idx = vec![0usize; ell];
    let mut acc = Compensated::new();
    loop {
        let mut s: i64 = 0;
        let mut p = 1.0;
        for &i in &idx {
            let k = i / 2 + 1;
            s += if i % 2 == 0 { k as i64 } else { -(k as i64) };
            p *= w[k - 1];
        }
        if s == 0 {
            acc.add(p);
        }
        // odometer
        let mut d = 0;
        loop {
            if d == ell {
                return Ok(prefactor(m, ell as u32) * acc.value());
            }
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiTerm {
    pub m: u64,
    pub ell: u32,
    pub value: f64,
    /// Index cutoff of the final evaluation.
    pub truncation_y: u64,
    pub converged: bool,
    pub tail_estimate: f64,
}

const XI_START_Y: u64 = 8;

/// `Xi(m, l)` for every `l` in `2..=ell_max` with `y` doubled until each
/// value moves by less than `rel_tol` of itself.
fn xi_converged(m: u64, ell_max: u32, rel_tol: f64, y_cap: u64) -> Result<Vec<XiTerm>> {
    let mut y = XI_START_Y.min(y_cap);
    let mut prev = raw_sums(&coeffs(m, y)?, ell_max);
    loop {
        let next_y = (2 * y).min(y_cap);
        if next_y == y || ell_max as u64 * next_y > DP_WIDTH_LIMIT {
            let worst = (2..=ell_max as usize).map(|l| prev[l]).fold(0.0, f64::max);
            return Err(Error::Convergence {
                what: format!("Xi(m = {m}) did not settle by y = {y}"),
                last_delta: worst,
            });
        }
        let next = raw_sums(&coeffs(m, next_y)?, ell_max);
        let done = (2..=ell_max as usize).all(|l| (next[l] - prev[l]).abs() <= rel_tol * next[l].abs());
        if done {
            return Ok((2..=ell_max)
                .map(|l| {
                    let pf = prefactor(m, l);
                    // differences shrink like y^-3, so the remaining tail is ~1/7 of the last step
                    let tail = (pf * (next[l as usize] - prev[l as usize])).abs() / 7.0;
                    XiTerm { m, ell: l, value: pf * next[l as usize], truncation_y: next_y, converged: true, tail_estimate: tail }
                })
                .collect());
        }
        y = next_y;
        prev = next;
    }
}

pub fn xi(m: u64, ell: u32, rel_tol: f64, tables: &ArithTables) -> Result<XiTerm> {
    if ell == 0 {
        return Err(Error::domain("Xi needs l >= 1"));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::domain("rel_tol must be positive"));
    }
    if !check_active(m, tables)? || ell == 1 {
        return Ok(XiTerm { m, ell, value: 0.0, truncation_y: 0, converged: true, tail_estimate: 0.0 });
    }
    let terms = xi_converged(m, ell, rel_tol, K_SIEVE as u64)?;
    Ok(terms.into_iter().last().expect("ell >= 2"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    pub partial: f64,
    pub tail: f64,
    pub value: f64,
    /// Spread of the tail estimate between fits at `L` and `L / 2`.
    pub tail_uncertainty: f64,
}

fn second_from_sums(s: &R2SquareSums, tables: &ArithTables) -> SecondMoment {
    let pi2 = PI * PI;
    let half = (tables.limit() / 2).max(1);
    let mut a_half = 0u64;
    for n in 1..=half {
        a_half += (tables.r2(n) as u64).pow(2);
    }
    let l = s.limit as f64;
    let b_half = a_half as f64 / half as f64 - 4.0 * (half as f64).ln();
    let alt = (4.0 * l.ln() + 8.0 + b_half) / l;
    SecondMoment {
        partial: s.partial / pi2,
        tail: s.beyond / pi2,
        value: (s.partial + s.beyond) / pi2,
        tail_uncertainty: (alt - s.beyond).abs() / pi2,
    }
}

/// `(1/pi^2) sum_n r2(n)^2 / n^2`: direct to the table limit plus the
/// partial-summation tail.
pub fn second_moment_closed(rel_tol: f64, tables: &ArithTables) -> Result<SecondMoment> {
    let s = second_from_sums(&profile::r2_square_sums(tables), tables);
    if s.tail_uncertainty > rel_tol * s.value {
        return Err(Error::Resolution {
            what: format!("tables up to {} too small for relative tolerance {rel_tol:e}", tables.limit()),
            achieved: s.tail_uncertainty / s.value,
        });
    }
    Ok(s)
}

/// `(1/pi^2) sum_{n <= cutoff} r2(n)^2 / n^2`.
pub fn second_moment_partial(cutoff: u64, tables: &ArithTables) -> Result<f64> {
    tables.ensure_covers(cutoff)?;
    let acc: Compensated = (1..=cutoff as usize)
        .map(|n| (tables.r2(n) as f64).powi(2) / (n as f64 * n as f64))
        .collect();
    Ok(acc.value() / (PI * PI))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTerm {
    pub composition: Vec<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub j: u32,
    pub value: f64,
    pub per_composition: Vec<CompositionTerm>,
    pub m_cutoff: u64,
    pub error_budget: f64,
    /// Set when the budget exceeds `rel_tol * |value|`.
    pub flagged: bool,
}

/// Default index cutoff by moment order.
pub fn default_m_cutoff(j: u32) -> u64 {
    if j <= 4 {
        10_000
    } else {
        1_000
    }
}

/// Ordered sum over ascending elements: `state[prefix]` accumulates
/// `prod Xi(m_i, l_i) / l_i!` over `m_1 < ... < m_s` with parts `prefix`.
fn assemble(j: u32, elements: &[Vec<f64>]) -> BTreeMap<Vec<u32>, f64> {
    let mut state: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    state.insert(Vec::new(), 1.0);
    let mut fact = vec![1.0; j as usize + 1];
    for i in 1..=j as usize {
        fact[i] = fact[i - 1] * i as f64;
    }
    for xs in elements {
        let snapshot: Vec<(Vec<u32>, f64)> = state.iter().map(|(k, &v)| (k.clone(), v)).collect();
        for (prefix, v) in snapshot {
            let used: u32 = prefix.iter().sum();
            for ell in 2..=(j - used) {
                let rest = j - used - ell;
                if rest == 1 {
                    continue;
                }
                let x = xs[ell as usize];
                if x == 0.0 {
                    continue;
                }
                let mut key = prefix.clone();
                key.push(ell);
                *state.entry(key).or_insert(0.0) += v * x / fact[ell as usize];
            }
        }
    }
    state.into_iter().filter(|(k, _)| k.iter().sum::<u32>() == j).map(|(k, v)| (k, v * fact[j as usize])).collect()
}

fn total(map: &BTreeMap<Vec<u32>, f64>) -> f64 {
    map.values().copied().collect::<Compensated>().value()
}

/// `int alpha^j P(alpha) d alpha` from the composition expansion.
///
/// Every `m <= m_cutoff` enters with its own `Xi` values. The `l = 2`
/// blocks for `m <= m_cutoff` use `k <= sqrt(L / m)` (L the table limit),
/// and all remaining second-order mass, i.e. every `n = m k^2` not yet
/// counted, enters as one trailing element; this is the same split as
/// [`second_moment_closed`]. Higher blocks with `m > m_cutoff` are bounded
/// and charged to the error budget.
pub fn theoretical_moment(j: u32, m_cutoff: u64, rel_tol: f64, tables: &ArithTables) -> Result<MomentTable> {
    if j == 0 || j > J_MAX {
        return Err(Error::domain(format!("moment order must lie in 1..={J_MAX}, got {j}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::domain("rel_tol must be positive"));
    }
    if m_cutoff == 0 {
        return Err(Error::domain("m_cutoff must be positive"));
    }
    tables.ensure_covers(m_cutoff)?;
    if j == 1 {
        return Ok(MomentTable { j, value: 0.0, per_composition: Vec::new(), m_cutoff, error_budget: 0.0, flagged: false });
    }
    let limit = tables.limit() as u64;
    let ms = tables.active_squarefree(m_cutoff as usize);
    let per_m: Vec<Result<(Vec<f64>, Vec<f64>)>> = par_map(ms.len(), |i| {
        let m = ms[i] as u64;
        let y2 = isqrt(limit / m);
        let a = coeffs(m, y2)?;
        let l2: f64 = a.iter().map(|v| v * v).collect::<Compensated>().value();
        let mut xs = vec![0.0; j as usize + 1];
        let mut tails = vec![0.0; j as usize + 1];
        xs[2] = prefactor(m, 2) * 2.0 * l2;
        if j >= 3 {
            for t in xi_converged(m, j, rel_tol, K_SIEVE as u64)? {
                if t.ell >= 3 {
                    xs[t.ell as usize] = t.value;
                    tails[t.ell as usize] = t.tail_estimate;
                }
            }
        }
        Ok((xs, tails))
    });
    let (mut elements, tails): (Vec<_>, Vec<_>) = per_m.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let sums = profile::r2_square_sums(tables);
    let s_tail = profile::tail_l2(m_cutoff as usize, tables, &sums);
    let mut tail_elem = vec![0.0; j as usize + 1];
    tail_elem[2] = s_tail;
    elements.push(tail_elem.clone());
    let main = assemble(j, &elements);
    let value = total(&main);

    // Error budget from absolute-value runs of the same assembly:
    // (a) Xi truncation, each value widened by its tail estimate;
    // (b) blocks of order >= 3 for m > m_cutoff, bounded by amp^(l-2) S;
    // (c) several order-2 blocks beyond the cutoff, which the single
    //     trailing element folds into one.
    let abs_elems: Vec<Vec<f64>> = elements.iter().map(|x| x.iter().map(|v| v.abs()).collect()).collect();
    let base = total(&assemble(j, &abs_elems));
    let mut widened = abs_elems.clone();
    for (w, t) in widened.iter_mut().zip(&tails) {
        for (v, e) in w.iter_mut().zip(t) {
            *v += e;
        }
    }
    if let Some(last) = widened.last_mut() {
        last[2] += second_from_sums(&sums, tables).tail_uncertainty;
    }
    let trunc = total(&assemble(j, &widened)) - base;

    let mut ratio = 0.0f64;
    for m in (m_cutoff as usize + 1)..=tables.limit() {
        if tables.is_squarefree(m) {
            ratio = ratio.max(tables.r2(m) as f64 / m as f64);
        }
    }
    let amp = profile::uniform_bound_constant() * ratio;
    let mut higher = abs_elems.clone();
    if let Some(last) = higher.last_mut() {
        for ell in 3..=j as usize {
            last[ell] = amp.powi(ell as i32 - 2) * s_tail;
        }
    }
    let beyond = total(&assemble(j, &higher)) - base;

    let without = total(&assemble(j, &abs_elems[..abs_elems.len() - 1]));
    let mut doubled = abs_elems.clone();
    doubled.push(tail_elem);
    let pairs = total(&assemble(j, &doubled)) - 2.0 * base + without;

    let budget = trunc + beyond + pairs.max(0.0);

    Ok(MomentTable {
        j,
        value,
        per_composition: main.into_iter().map(|(composition, value)| CompositionTerm { composition, value }).collect(),
        m_cutoff,
        error_budget: budget,
        flagged: budget > rel_tol * value.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::build_tables;

    #[test]
    fn dp_matches_enumeration_on_grid() {
        let t = build_tables(10 * 20 * 20).unwrap();
        for m in [1u64, 2, 5, 10] {
            for ell in [2u32, 3, 4] {
                for y in [5u64, 10, 20] {
                    let a = xi_truncated(m, ell, y, &t).unwrap();
                    let b = xi_bruteforce(m, ell, y, &t).unwrap();
                    assert!((a - b).abs() <= 1e-13 * b.abs(), "m={m} l={ell} y={y}: {a} vs {b}");
                    assert!(a != 0.0);
                    assert_eq!(a.signum(), if ell % 2 == 0 { 1.0 } else { -1.0 });
                }
            }
        }
    }

    #[test]
    fn vanishing_cases() {
        let t = build_tables(10_000).unwrap();
        assert_eq!(xi_truncated(7, 1, 10, &t).unwrap(), 0.0);
        assert_eq!(xi_truncated(1, 1, 10, &t).unwrap(), 0.0);
        assert_eq!(xi_truncated(4, 3, 10, &t).unwrap(), 0.0);
        assert_eq!(xi(3, 2, 1e-8, &t).unwrap().value, 0.0);
        assert_eq!(xi_bruteforce(3, 2, 30, &t).unwrap(), 0.0);
        assert!(matches!(xi_bruteforce(1, 5, 100, &t), Err(Error::CostGuard(_))));
    }

    #[test]
    fn brute_force_examples() {
        let t = build_tables(2 * 15 * 15).unwrap();
        assert!(xi_bruteforce(1, 2, 10, &t).unwrap() > 0.0);
        assert!(xi_bruteforce(1, 3, 8, &t).unwrap() < 0.0);
        let closed: f64 = (1..=15u64).map(|k| (t.r2((2 * k * k) as usize) as f64).powi(2) / (k as f64).powi(4)).sum();
        let want = 2.0 / (2.0 * PI * PI) / 4.0 * closed;
        assert!((xi_bruteforce(2, 2, 15, &t).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn xi_two_matches_l2() {
        let t = build_tables(100_000).unwrap();
        for m in [1u64, 2, 5, 13] {
            let v = xi(m, 2, 1e-10, &t).unwrap();
            let l2 = profile::phi_l2(m, &t).unwrap();
            assert!((v.value - l2).abs() < 1e-9 * l2, "m={m}: {} vs {l2}", v.value);
        }
        assert!(xi(1, 4, 1e-6, &t).unwrap().value > 0.0);
    }

    #[test]
    fn composition_assembly_small() {
        // two elements, j = 4: X(a,4) + X(b,4) + 6 X(a,2) X(b,2)
        let e1 = vec![0.0, 0.0, 0.3, -0.1, 0.2];
        let e2 = vec![0.0, 0.0, 0.5, -0.05, 0.7];
        let r = assemble(4, &[e1.clone(), e2.clone()]);
        let want = 0.2 + 0.7 + 6.0 * 0.3 * 0.5;
        assert!((total(&r) - want).abs() < 1e-15);
        assert_eq!(r.keys().cloned().collect::<Vec<_>>(), vec![vec![2, 2], vec![4]]);
        // j = 5 splits as (2,3) and (3,2) with weight 10 each
        let pad = |mut v: Vec<f64>| {
            v.push(0.0);
            v
        };
        let r5 = assemble(5, &[pad(e1), pad(e2)]);
        assert_eq!(r5.len(), 2);
        assert!((r5[&vec![2, 3]] - 10.0 * 0.3 * -0.05).abs() < 1e-15);
        assert!((r5[&vec![3, 2]] - 10.0 * -0.1 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn assembly_order_symmetry() {
        let elems: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let a = 0.1 * (i as f64 + 1.0);
                vec![0.0, 0.0, a, -a * a, a * a * a, -a.powi(4)]
            })
            .collect();
        let mut rev = elems.clone();
        rev.reverse();
        // the two-block j = 4 term is symmetric in the elements
        let fwd = assemble(4, &elems);
        let bwd = assemble(4, &rev);
        let s: f64 = elems.iter().map(|e| e[2]).sum();
        let sq: f64 = elems.iter().map(|e| e[2] * e[2]).sum();
        assert!((fwd[&vec![2, 2]] - 3.0 * (s * s - sq)).abs() < 1e-14);
        assert!((fwd[&vec![2, 2]] - bwd[&vec![2, 2]]).abs() < 1e-14);
        // ordered j = 5 blocks swap under reversal
        let f5 = assemble(5, &elems);
        let b5 = assemble(5, &rev);
        assert!((f5[&vec![2, 3]] - b5[&vec![3, 2]]).abs() < 1e-14);
        assert!((total(&f5) - total(&b5)).abs() < 1e-14);
    }

    #[test]
    fn sign_law() {
        let t = build_tables(100_000).unwrap();
        for m in t.active_squarefree(60) {
            for ell in 2..=5u32 {
                let v = xi(m as u64, ell, 1e-6, &t).unwrap().value;
                assert!(v != 0.0);
                assert_eq!(v.signum(), if ell % 2 == 0 { 1.0 } else { -1.0 }, "m={m} l={ell}");
            }
        }
    }

    #[test]
    fn second_moment_partials_increase() {
        let t = build_tables(10_000).unwrap();
        let mut last = 0.0;
        for c in [10u64, 100, 1000, 10_000] {
            let v = second_moment_partial(c, &t).unwrap();
            assert!(v > last);
            last = v;
        }
    }
}
