//! Small numerical building blocks shared by every module: compensated
//! accumulation, error-free products, exact integer square roots, the exact
//! integer/fractional split of `x^p` for a double `x`, and the data-parallel
//! map used by batch evaluations.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for Compensated {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Compensated::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<Compensated>().value()
}

/// Error-free product: returns `(p, e)` with `p + e == a * b` exactly.
#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Fractional part of `a * b` computed from the error-free product, so that
/// products far above 2^30 keep their sub-unit digits.
#[inline]
pub fn frac_of_product(a: f64, b: f64) -> f64 {
    let (p, e) = two_prod(a, b);
    let r = (p - p.floor()) + e;
    r - r.floor()
}

/// Largest `r` with `r * r <= n`.
#[inline]
pub fn isqrt(n: u64) -> u64 {
    if n < 1 << 52 {
        // exact: below 2^52 the rounded root never crosses an integer
        return (n as f64).sqrt() as u64;
    }
    let mut r = (n as f64).sqrt() as u64;
    while r.checked_mul(r).is_none_or(|s| s > n) {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).is_some_and(|s| s <= n) {
        r += 1;
    }
    r
}

/// `value^power` split exactly as `floor + frac`, with `floor` an integer and
/// `0 <= frac < 1`. The floor is exact (big-integer arithmetic on the binary
/// representation of `value`); `frac` is accurate to ~2^-64 absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPower {
    pub floor: u64,
    pub frac: f64,
}

impl ExactPower {
    pub fn new(value: f64, power: u32) -> Option<Self> {
        if !value.is_finite() || value < 0.0 {
            return None;
        }
        if value == 0.0 {
            return Some(Self { floor: 0, frac: 0.0 });
        }
        let bits = value.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let (mantissa, exponent) = if biased == 0 {
            (bits & ((1 << 52) - 1), -1074)
        } else {
            ((bits & ((1 << 52) - 1)) | (1 << 52), biased - 1075)
        };
        let m = BigUint::from(mantissa).pow(power);
        let shift = exponent * power as i64;
        if shift >= 0 {
            let v = m << (shift as usize);
            return v.to_u64().map(|floor| Self { floor, frac: 0.0 });
        }
        let s = (-shift) as usize;
        let floor = &m >> s;
        let rem = m - (&floor << s);
        let frac = if rem.is_zero() {
            0.0
        } else if s <= 64 {
            rem.to_f64().unwrap_or(0.0) / 2f64.powi(s as i32)
        } else {
            let top = (rem >> (s - 64)).to_u64().unwrap_or(0);
            top as f64 / 2f64.powi(64)
        };
        floor.to_u64().map(|floor| Self { floor, frac })
    }

    pub fn is_integer(&self) -> bool {
        self.frac == 0.0
    }

    pub fn to_f64(&self) -> f64 {
        self.floor as f64 + self.frac
    }
}

/// Order-preserving map over `0..n`. Runs on the rayon pool when the
/// `parallel` feature is on; results are always returned in index order so
/// any fold over them is independent of the thread count.
#[cfg(feature = "parallel")]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` with `threads` workers. `0` keeps the current pool.
#[cfg(feature = "parallel")]
pub fn with_threads<T, F>(threads: usize, f: F) -> crate::Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::Error::Resource(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T, F>(_threads: usize, f: F) -> crate::Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    Ok(f())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_recovers_cancelled_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn isqrt_edges() {
        for n in 0..10_000u64 {
            let r = isqrt(n);
            assert!(r * r <= n && (r + 1) * (r + 1) > n);
        }
        assert_eq!(isqrt(u64::MAX), 4294967295);
        assert_eq!(isqrt((1 << 52) * (1 << 10) - 1), (1 << 31) - 1);
        for k in [(1u64 << 26) - 1, 1 << 25, 67_108_863, 94_906_265] {
            assert_eq!(isqrt(k * k - 1), k - 1);
            assert_eq!(isqrt(k * k), k);
        }
    }

    #[test]
    fn exact_power_small_values() {
        let p = ExactPower::new(1.5, 4).unwrap();
        assert_eq!(p.floor, 5);
        assert_eq!(p.frac, 0.0625);
        let p = ExactPower::new(2.0, 4).unwrap();
        assert_eq!((p.floor, p.frac), (16, 0.0));
        let p = ExactPower::new(0.5, 2).unwrap();
        assert_eq!((p.floor, p.frac), (0, 0.25));
        assert!(ExactPower::new(-1.0, 2).is_none());
        assert!(ExactPower::new(f64::NAN, 2).is_none());
    }

    #[test]
    fn exact_power_detects_floor_below_integer() {
        // 10 - 2^-49 raised to the fourth power lies just below 10000.
        let x = 10.0 - 2f64.powi(-49);
        let p = ExactPower::new(x, 4).unwrap();
        assert_eq!(p.floor, 9999);
        // x^4 = 10^4 - 4000 * 2^-49 + O(2^-98)
        assert!(((1.0 - p.frac) - 4000.0 * 2f64.powi(-49)).abs() < 1e-15);
    }

    #[test]
    fn frac_of_large_product() {
        let f = frac_of_product(1e6 + 0.25, 4.0);
        assert!((f - 0.0).abs() < 1e-12);
        let f = frac_of_product(123456.789, 1000.0);
        assert!((f - 0.0).abs() < 1e-6 || (f - 1.0).abs() < 1e-6);
    }
}
