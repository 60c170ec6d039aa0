//! Sieved arithmetic tables: the sum-of-two-squares function r2(m), the
//! Möbius function, and the square-free decomposition m = core * k^2.
//! Everything else in the crate reads from one immutable [`ArithTables`].

use crate::error::{Error, Result};
use crate::numeric::isqrt;

#[derive(Debug, Clone)]
pub struct ArithTables {
    limit: usize,
    r2: Vec<u32>,
    mu: Vec<i8>,
    core: Vec<u32>,
    k: Vec<u32>,
    /// Every `m >= 0` with `r2(m) > 0`, ascending.
    represented: Vec<u32>,
}

fn alloc<T: Clone>(len: usize, fill: T) -> Result<Vec<T>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|e| Error::Resource(format!("cannot allocate table of {len} entries: {e}")))?;
    v.resize(len, fill);
    Ok(v)
}

/// Sieve r2, mu and the square-free decomposition for every m in `0..=limit`.
pub fn build_tables(limit: usize) -> Result<ArithTables> {
    if limit == 0 {
        return Err(Error::domain("table limit must be at least 1"));
    }
    if limit > u32::MAX as usize {
        return Err(Error::domain(format!("table limit {limit} exceeds 32-bit range")));
    }
    let len = limit + 1;

    let mut r2 = alloc(len, 0u32)?;
    let root = isqrt(limit as u64) as usize;
    for a in 0..=root {
        let a2 = a * a;
        let wa = if a == 0 { 1 } else { 2 };
        let bmax = isqrt((limit - a2) as u64) as usize;
        for b in 0..=bmax {
            let wb = if b == 0 { 1 } else { 2 };
            r2[a2 + b * b] += wa * wb;
        }
    }

    // Smallest-prime-factor sieve, then mu/core/k by the recurrence on m = p*q.
    let mut spf = alloc(len, 0u32)?;
    for i in 2..len {
        if spf[i] == 0 {
            let mut j = i;
            while j < len {
                if spf[j] == 0 {
                    spf[j] = i as u32;
                }
                j += i;
            }
        }
    }
    let mut mu = alloc(len, 0i8)?;
    let mut core = alloc(len, 0u32)?;
    let mut k = alloc(len, 0u32)?;
    mu[1] = 1;
    core[1] = 1;
    k[1] = 1;
    for m in 2..len {
        let p = spf[m] as usize;
        let q = m / p;
        mu[m] = if q % p == 0 { 0 } else { -mu[q] };
        if core[q] as usize % p == 0 {
            core[m] = core[q] / p as u32;
            k[m] = k[q] * p as u32;
        } else {
            core[m] = core[q] * p as u32;
            k[m] = k[q];
        }
    }

    let count = r2.iter().filter(|&&v| v > 0).count();
    let mut represented = alloc(count, 0u32)?;
    represented.clear();
    represented.extend((0..len).filter(|&m| r2[m] > 0).map(|m| m as u32));

    Ok(ArithTables { limit, r2, mu, core, k, represented })
}

impl ArithTables {
    pub fn limit(&self) -> usize {
        self.limit
    }

    #[inline]
    pub fn r2(&self, m: usize) -> u32 {
        self.r2[m]
    }

    pub fn r2_slice(&self) -> &[u32] {
        &self.r2
    }

    /// Ascending `m <= upto` with `r2(m) > 0`.
    pub fn represented_upto(&self, upto: u64) -> &[u32] {
        let end = self.represented.partition_point(|&m| m as u64 <= upto);
        &self.represented[..end]
    }

    /// Möbius function; `mu(0)` is reported as 0.
    #[inline]
    pub fn mu(&self, m: usize) -> i8 {
        self.mu[m]
    }

    #[inline]
    pub fn is_squarefree(&self, m: usize) -> bool {
        m >= 1 && self.mu[m] != 0
    }

    /// `(core, k)` with `m = core * k^2` and `core` square-free; `m >= 1`.
    #[inline]
    pub fn sqfree_core(&self, m: usize) -> (u32, u32) {
        (self.core[m], self.k[m])
    }

    pub fn ensure_covers(&self, needed: u64) -> Result<()> {
        if needed > self.limit as u64 {
            Err(Error::TableTooSmall { needed, limit: self.limit as u64 })
        } else {
            Ok(())
        }
    }

    /// Square-free m whose profile function is not identically zero, i.e.
    /// mu(m) != 0 and r2(m) > 0, in ascending order up to `upto`.
    pub fn active_squarefree(&self, upto: usize) -> Vec<usize> {
        (1..=upto.min(self.limit))
            .filter(|&m| self.mu[m] != 0 && self.r2[m] > 0)
            .collect()
    }
}

/// Number of `(a, b)` in Z^2 with `a^2 + b^2 = m`, by direct enumeration.
pub fn r2_oracle(m: u64) -> u64 {
    let root = isqrt(m);
    let mut count = 0;
    for a in 0..=root {
        let rest = m - a * a;
        let b = isqrt(rest);
        if b * b == rest {
            let wa = if a == 0 { 1 } else { 2 };
            let wb = if b == 0 { 1 } else { 2 };
            count += wa * wb;
        }
    }
    count
}

/// Jacobi's two-square identity `r2(m) = 4 (d1(m) - d3(m))`, evaluated by
/// enumerating divisors. Independent of the sieve; `m >= 1`.
pub fn r2_divisor_formula(m: u64) -> i64 {
    let mut d1 = 0i64;
    let mut d3 = 0i64;
    let mut tally = |d: u64| match d % 4 {
        1 => d1 += 1,
        3 => d3 += 1,
        _ => {}
    };
    let mut d = 1;
    while d * d <= m {
        if m % d == 0 {
            tally(d);
            if d * d != m {
                tally(m / d);
            }
        }
        d += 1;
    }
    4 * (d1 - d3)
}

/// Sawtooth `t - floor(t) - 1/2`; exactly `-1/2` at integers.
pub fn psi(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("psi of non-finite argument {t}")));
    }
    Ok(psi_unchecked(t))
}

#[inline]
pub(crate) fn psi_unchecked(t: f64) -> f64 {
    t - t.floor() - 0.5
}

pub fn squarefree_decompose(m: u64, tables: &ArithTables) -> Result<(u64, u64)> {
    if m == 0 {
        return Err(Error::domain("square-free decomposition of 0"));
    }
    tables.ensure_covers(m)?;
    let (c, k) = tables.sqfree_core(m as usize);
    Ok((c as u64, k as u64))
}
