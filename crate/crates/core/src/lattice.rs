//! Exact lattice counts for Cygan-Korányi balls in R^3 and the pieces of
//! the exact decomposition `N(x) = 2 sum_n S_n(x^2) - 2 T(x^2)`.
//!
//! A point `(u1, u2, u3)` lies in the ball of radius `x` when
//! `(u1^2 + u2^2)^2 + u3^2 <= x^4`. Grouping by `m = u1^2 + u2^2` gives
//! `N(x) = sum_{m <= x^2} r2(m) (2 floor(sqrt(x^4 - m^2)) + 1)`, and since
//! `n^2 + m^2` is an integer the inner floor only depends on `floor(x^4)`.
//! That integer is computed exactly from the binary expansion of `x`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::arith::ArithTables;
use crate::error::{Error, Result};
use crate::numeric::{isqrt, two_prod, Compensated, ExactPower};

/// Default number of Taylor terms in the exact decomposition.
pub const DEFAULT_TAYLOR_TERMS: usize = 50;

const BRUTE_FORCE_MAX_X: f64 = 30.0;

/// Euclidean volume of the unit Cygan-Korányi ball, `pi^2 / 2`.
pub fn vol_ball() -> f64 {
    PI * PI / 2.0
}

/// Twice the sum of the first `n_terms` Taylor constants; tends to the volume.
pub fn vol_ball_from_taylor(n_terms: usize) -> Result<f64> {
    let c = taylor_coeffs(n_terms)?;
    Ok(2.0 * c.sum())
}

/// `2 pi * int_0^1 2 r sqrt(1 - r^4) dr` by the composite midpoint rule.
///
/// The integrand has a square-root endpoint at `r = 1`; the substitution
/// `r = 1 - t^2` turns it into `8 pi * int_0^1 r t^2 sqrt((1 + r)(1 + r^2)) dt`,
/// which is smooth, so the midpoint rule converges at its full second order.
pub fn vol_ball_radial_quadrature(panels: usize) -> f64 {
    let h = 1.0 / panels as f64;
    let mut acc = Compensated::new();
    for i in 0..panels {
        let t = (i as f64 + 0.5) * h;
        let r = 1.0 - t * t;
        acc.add(r * t * t * ((1.0 + r) * (1.0 + r * r)).sqrt());
    }
    8.0 * PI * h * acc.value()
}

/// The constants `c_n` with `S_n(Y) = c_n Y^2 + R_n(Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorCoeffs {
    pub c: Vec<f64>,
    pub n_terms: usize,
}

impl TaylorCoeffs {
    pub fn sum(&self) -> f64 {
        crate::numeric::compensated_sum(self.c.iter().copied())
    }
}

pub fn taylor_coeffs(n_terms: usize) -> Result<TaylorCoeffs> {
    if n_terms < 2 {
        return Err(Error::domain("need at least two Taylor constants"));
    }
    let sqrt2 = 2f64.sqrt();
    let mut c = Vec::with_capacity(n_terms);
    c.push(2.0 * sqrt2 * PI / 3.0);
    c.push(-PI / (5.0 * sqrt2));
    // prod_{k=1}^{n-1} (1 - 1/(2k)), accumulated as n grows
    let mut prod = 1.0;
    for n in 2..n_terms {
        prod *= 1.0 - 1.0 / (2.0 * (n - 1) as f64);
        let nf = n as f64;
        c.push(-PI * prod / (sqrt2 * 2f64.powi(n as i32) * nf * (nf + 1.5)));
    }
    Ok(TaylorCoeffs { c, n_terms })
}

/// `floor(x^4)` and its fractional remainder for a radius `x > 0`.
pub(crate) fn quartic(x: f64) -> Result<ExactPower> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::domain(format!("radius must be positive and finite, got {x}")));
    }
    ExactPower::new(x, 4).ok_or_else(|| Error::domain(format!("x^4 overflows 64 bits for x = {x}")))
}

/// `sum_{m^2 <= F} r2(m) (2 isqrt(F - m^2) + 1)`, the count for `floor(x^4) = F`.
pub(crate) fn count_for_floor(f: u64, tables: &ArithTables) -> Result<u64> {
    let mmax = isqrt(f);
    tables.ensure_covers(mmax)?;
    let r2 = tables.r2_slice();
    let mut total = 0u64;
    for &m in tables.represented_upto(mmax) {
        let m = m as u64;
        total += r2[m as usize] as u64 * (2 * isqrt(f - m * m) + 1);
    }
    Ok(total)
}

/// Exact number of integer points of Cygan-Korányi norm at most `x`.
pub fn count_exact(x: f64, tables: &ArithTables) -> Result<u64> {
    let q = quartic(x)?;
    count_for_floor(q.floor, tables)
}

/// Literal triple loop over candidate points; the oracle for [`count_exact`].
pub fn count_bruteforce(x: f64) -> Result<u64> {
    if x > BRUTE_FORCE_MAX_X {
        return Err(Error::CostGuard(format!(
            "brute-force count limited to x <= {BRUTE_FORCE_MAX_X}, got {x}"
        )));
    }
    let f = quartic(x)?.floor as i64;
    let r = isqrt(isqrt(f as u64)) as i64;
    let h = isqrt(f as u64) as i64;
    let mut count = 0u64;
    for u1 in -r..=r {
        for u2 in -r..=r {
            let s = u1 * u1 + u2 * u2;
            if s * s > f {
                continue;
            }
            for u3 in -h..=h {
                if s * s + u3 * u3 <= f {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// `T` evaluated at the level whose square is `sq = floor + frac`, i.e.
/// `sum_{m^2 <= sq} r2(m) psi(sqrt(sq - m^2))`.
///
/// The integer part `n = floor(sqrt(sq - m^2))` is exact, and the
/// fractional part is formed as `(sq - m^2 - n^2) / (sqrt(sq - m^2) + n)`
/// so no digits are lost to cancellation; perfect squares give exactly
/// `psi = -1/2`.
pub(crate) fn t_remainder_at(sq: ExactPower, tables: &ArithTables) -> Result<f64> {
    let f = sq.floor;
    let delta = sq.frac;
    let mmax = isqrt(f);
    tables.ensure_covers(mmax)?;
    let r2 = &tables.r2_slice()[..=mmax as usize];
    let mut n = mmax;
    let mut acc = Compensated::new();
    for (m, &w) in r2.iter().enumerate() {
        let rest = f - (m as u64) * (m as u64);
        while n * n > rest {
            n -= 1;
        }
        if w == 0 {
            continue;
        }
        let num = (rest - n * n) as f64 + delta;
        let frac = if num == 0.0 {
            0.0
        } else {
            let s = (rest as f64 + delta).sqrt();
            (num / (s + n as f64)).min(1.0 - f64::EPSILON / 2.0)
        };
        acc.add(w as f64 * (frac - 0.5));
    }
    Ok(acc.value())
}

/// `T(Y) = sum_{0 <= m <= Y} r2(m) psi(sqrt(Y^2 - m^2))`.
pub fn t_remainder(y: f64, tables: &ArithTables) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("T(Y) needs Y > 0, got {y}")));
    }
    let sq = ExactPower::new(y, 2).ok_or_else(|| Error::domain("Y^2 overflows"))?;
    t_remainder_at(sq, tables)
}

/// All `S_n(Y)` for `n < n_terms`, with `Y = y_hi + y_lo` given as an
/// unevaluated sum so that `Y - m` keeps its low digits near `m ~ Y`.
///
/// `S_n(Y) = a_n sqrt(2Y) sum_m r2(m) sqrt(Y - m) u_m^n` with
/// `u_m = (Y - m) / (2Y)` and `a_n = a_{n-1} (n - 3/2) / n`, `a_0 = 1`.
fn s_sums(y_hi: f64, y_lo: f64, mmax: u64, n_terms: usize, tables: &ArithTables) -> Result<Vec<f64>> {
    tables.ensure_covers(mmax)?;
    let y = y_hi + y_lo;
    let two_y = 2.0 * y;
    let mut acc = vec![Compensated::new(); n_terms];
    for m in 0..=mmax as usize {
        let w = tables.r2(m);
        if w == 0 {
            continue;
        }
        let d = ((y_hi - m as f64) + y_lo).max(0.0);
        let u = d / two_y;
        let mut term = w as f64 * d.sqrt();
        for a in acc.iter_mut() {
            if term == 0.0 {
                break;
            }
            a.add(term);
            term *= u;
        }
    }
    let root = two_y.sqrt();
    let mut coeff = 1.0;
    let mut out = Vec::with_capacity(n_terms);
    for (n, a) in acc.iter().enumerate() {
        if n > 0 {
            coeff *= (n as f64 - 1.5) / n as f64;
        }
        out.push(coeff * root * a.value());
    }
    Ok(out)
}

/// `S_n(Y) = ((-1)^n / n!) f^(n)(2Y) sum_{0 <= m <= Y} r2(m) (Y - m)^(n + 1/2)`
/// with `f = sqrt`.
pub fn s_n_sum(n: usize, y: f64, tables: &ArithTables) -> Result<f64> {
    if n > 200 {
        return Err(Error::domain("S_n supported for n <= 200"));
    }
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::domain(format!("S_n(Y) needs Y > 0, got {y}")));
    }
    let sums = s_sums(y, 0.0, y.floor() as u64, n + 1, tables)?;
    Ok(sums[n])
}

/// `N(x) - 2 sum_{n < n_terms} S_n(x^2) + 2 T(x^2)`; zero up to the Taylor
/// tail and rounding.
pub fn decomposition_residual(x: f64, n_terms: usize, tables: &ArithTables) -> Result<f64> {
    if n_terms == 0 || n_terms > 201 {
        return Err(Error::domain("n_terms must lie in 1..=201"));
    }
    let q = quartic(x)?;
    let n1 = count_for_floor(q.floor, tables)?;
    let (y_hi, y_lo) = two_prod(x, x);
    let s = s_sums(y_hi, y_lo, isqrt(q.floor), n_terms, tables)?;
    let t = t_remainder_at(q, tables)?;
    let mut acc = Compensated::new();
    acc.add(n1 as f64);
    for v in s {
        acc.add(-2.0 * v);
    }
    acc.add(2.0 * t);
    Ok(acc.value())
}

/// One evaluation of the normalized error term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub x: f64,
    pub n1: u64,
    pub e_hat: f64,
    pub t_rem: f64,
    pub voronoi_residual: Option<f64>,
}

/// `(n1 - vol * x^4) / x^2` with `x^4` taken from its exact split.
fn normalize(n1: u64, q: ExactPower, x: f64) -> f64 {
    let vol = vol_ball();
    let (p, e) = two_prod(vol, q.floor as f64);
    let err = ((n1 as f64 - p) - e) - vol * q.frac;
    err / (x * x)
}

/// Normalized error `(N(x) - vol x^4) / x^2` only; the hot path of scans.
pub fn normalized_error(x: f64, tables: &ArithTables) -> Result<f64> {
    let q = quartic(x)?;
    let n1 = count_for_floor(q.floor, tables)?;
    Ok(normalize(n1, q, x))
}

pub fn error_term(x: f64, tables: &ArithTables) -> Result<ErrorSample> {
    let q = quartic(x)?;
    let n1 = count_for_floor(q.floor, tables)?;
    let t_rem = t_remainder_at(q, tables)?;
    Ok(ErrorSample { x, n1, e_hat: normalize(n1, q, x), t_rem, voronoi_residual: None })
}
