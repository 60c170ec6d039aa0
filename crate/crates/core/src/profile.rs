//! The limit profile: periodic functions `phi_m`, their characteristic
//! factors `Phi_m(sigma) = int_0^1 exp(2 pi i sigma phi_m(t)) dt`, the
//! product `Phi` over square-free `m`, and the density recovered from it by
//! Fourier inversion.
//!
//! `phi_m(t) = -(sqrt 2 / pi) (mu(m)^2 / m) sum_k r2(m k^2) / k^2 cos(2 pi k t)`.
//!
//! The coefficients `r2(m k^2)` are produced from a factorization sieve on
//! `k`, so a series can be taken far past the range of the `r2` table.

use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::arith::ArithTables;
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, frac_of_product, par_map, Compensated};

/// Largest `k` any single profile series may reach.
pub const K_SIEVE: usize = 1 << 20;

const MIN_QUAD: usize = 64;
const MAX_QUAD: usize = 1 << 18;
const QUAD_DELTA: f64 = 1e-12;
const TAYLOR_ORDER: usize = 30;
const PRODUCT_FLOOR: f64 = 1e-40;

/// Factorization sieve over `k <= K_SIEVE` and suffix sums used for tail
/// estimates of the profile series.
struct KSieve {
    spf: Vec<u32>,
    /// `sum_{k > K} rho(k^2) / k^2` for `K < K_SIEVE`, `rho = r2 / 4`.
    tail1: Vec<f64>,
    /// `sum_{k > K} rho(k^2)^2 / k^4`.
    tail2: Vec<f64>,
    /// `(a, b)` with `sum_{k <= K} rho(k^2) ~ K (a log K + b)`.
    fit: (f64, f64),
}

fn ksieve() -> &'static KSieve {
    static CELL: OnceLock<KSieve> = OnceLock::new();
    CELL.get_or_init(KSieve::build)
}

impl KSieve {
    fn build() -> Self {
        let n = K_SIEVE;
        let mut spf = vec![0u32; n + 1];
        for i in 2..=n {
            if spf[i] == 0 {
                let mut j = i;
                while j <= n {
                    if spf[j] == 0 {
                        spf[j] = i as u32;
                    }
                    j += i;
                }
            }
        }
        let mut s = KSieve { spf, tail1: Vec::new(), tail2: Vec::new(), fit: (0.0, 0.0) };
        let rho: Vec<f64> = (0..=n).map(|k| if k == 0 { 0.0 } else { s.rho_mk2(&[], k) as f64 }).collect();

        // least squares of F(K)/K on log K over the upper part of the range
        let mut prefix = 0.0;
        let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &r) in rho.iter().enumerate().skip(1) {
            prefix += r;
            if k >= 1 << 12 && k % 64 == 0 {
                let x = (k as f64).ln();
                let y = prefix / k as f64;
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                cnt += 1.0;
            }
        }
        let a = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
        let b = (sy - a * sx) / cnt;
        s.fit = (a, b);

        let kf = n as f64;
        let lk = kf.ln();
        let mut t1 = (a * lk + 2.0 * a + b) / kf;
        let mut t2 = (a * lk + b).powi(2) / (3.0 * kf.powi(3));
        let mut tail1 = vec![0.0; n + 1];
        let mut tail2 = vec![0.0; n + 1];
        for k in (0..=n).rev() {
            tail1[k] = t1;
            tail2[k] = t2;
            if k > 0 {
                let kf = k as f64;
                t1 += rho[k] / (kf * kf);
                t2 += rho[k] * rho[k] / (kf * kf * kf * kf);
            }
        }
        s.tail1 = tail1;
        s.tail2 = tail2;
        s
    }

    /// `r2(m k^2) / 4` for square-free `m` given by its prime factors; only
    /// called with `m` composed of 2 and primes `1 mod 4`.
    fn rho_mk2(&self, m_primes: &[u64], k: usize) -> u64 {
        let mut out: u64 = m_primes.iter().filter(|&&p| p % 4 == 1).map(|_| 2).product();
        let mut k = k;
        while k > 1 {
            let p = self.spf[k] as usize;
            let mut a = 0;
            while k % p == 0 {
                k /= p;
                a += 1;
            }
            if p % 4 == 1 {
                let in_m = m_primes.contains(&(p as u64)) as u64;
                out = out / (1 + in_m) * (2 * a + 1 + in_m);
            }
        }
        out
    }
}

fn prime_factors(mut m: u64) -> Vec<u64> {
    let mut ps = Vec::new();
    let mut p = 2;
    while p * p <= m {
        if m % p == 0 {
            ps.push(p);
            while m % p == 0 {
                m /= p;
            }
        }
        p += 1;
    }
    if m > 1 {
        ps.push(m);
    }
    ps
}

/// True when `phi_m` is not identically zero: `m` square-free and a sum of
/// two squares.
fn is_active(m: u64) -> bool {
    if m == 0 {
        return false;
    }
    let mut n = m;
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            n /= p;
            if n % p == 0 || p % 4 == 3 {
                return false;
            }
        }
        p += 1;
    }
    n % 4 != 3
}

/// `sum_{k >= 1} r2(k^2) / k^2`, direct to `K_SIEVE` plus the fitted tail.
pub fn r2_square_series() -> f64 {
    4.0 * ksieve().tail1[0]
}

/// The uniform-bound constant `2^(5/2) / pi * sum_k r2(k^2) / k^2`, so that
/// `|phi_m(t)| <= a * mu(m)^2 r2(m) / m`.
pub fn uniform_bound_constant() -> f64 {
    2f64.powf(2.5) / PI * r2_square_series()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSeriesSpec {
    pub m: u64,
    pub k_cutoff: u64,
    /// Estimate of `sqrt 2 / (pi m) sum_{k > K} r2(m k^2) / k^2`, the largest
    /// possible pointwise change from the dropped terms.
    pub tail_bound: f64,
}

/// A truncated profile series with its coefficients `r2(m k^2) / k^2`.
#[derive(Debug, Clone)]
pub struct PhiSeries {
    pub spec: PhiSeriesSpec,
    coeffs: Vec<f64>,
    scale: f64,
    r2_m: u64,
}

impl PhiSeries {
    /// Series for `m` truncated at `k_cutoff`.
    pub fn new(m: u64, k_cutoff: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("profile index m must be positive"));
        }
        if k_cutoff as usize > K_SIEVE {
            return Err(Error::Resolution {
                what: format!("k cutoff {k_cutoff} beyond sieve range {K_SIEVE}"),
                achieved: f64::NAN,
            });
        }
        let sieve = ksieve();
        let primes = prime_factors(m);
        let active = is_active(m);
        let r2_m = if active { 4 * sieve.rho_mk2(&primes, 1) } else { 0 };
        let coeffs = if active {
            (1..=k_cutoff as usize)
                .map(|k| 4.0 * sieve.rho_mk2(&primes, k) as f64 / (k as f64 * k as f64))
                .collect()
        } else {
            Vec::new()
        };
        let scale = -SQRT_2 / (PI * m as f64);
        let mut s = Self {
            spec: PhiSeriesSpec { m, k_cutoff, tail_bound: 0.0 },
            coeffs,
            scale,
            r2_m,
        };
        s.spec.tail_bound = s.tail_after(k_cutoff as usize);
        Ok(s)
    }

    /// Shortest series whose tail estimate is below `tol`.
    pub fn with_tolerance(m: u64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::domain("tolerance must be positive"));
        }
        let probe = Self::new(m, 0)?;
        if probe.r2_m == 0 {
            return Ok(probe);
        }
        let per_unit = SQRT_2 / (PI * m as f64) * probe.r2_m as f64;
        let tail1 = &ksieve().tail1;
        if per_unit * tail1[K_SIEVE] >= tol {
            return Err(Error::Resolution {
                what: format!("profile series for m = {m} cannot reach tolerance {tol:e}"),
                achieved: per_unit * tail1[K_SIEVE],
            });
        }
        // tail1 is decreasing; find the first K with per_unit * tail1[K] < tol
        let k = tail1.partition_point(|&t| per_unit * t >= tol).max(1);
        Self::new(m, k as u64)
    }

    fn tail_after(&self, k: usize) -> f64 {
        if self.r2_m == 0 {
            return 0.0;
        }
        // r2(m k^2) / 4 <= (r2(m) / 4) (r2(k^2) / 4)
        SQRT_2 / (PI * self.spec.m as f64) * self.r2_m as f64 * ksieve().tail1[k.min(K_SIEVE)]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let acc: Compensated = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| a * (2.0 * PI * frac_of_product((i + 1) as f64, t)).cos())
            .collect();
        self.scale * acc.value()
    }

    /// `int_0^1 phi^2 dt` for the truncated series.
    pub fn l2(&self) -> f64 {
        let s = compensated_sum(self.coeffs.iter().map(|a| a * a));
        s / (PI * PI * (self.spec.m as f64).powi(2))
    }

    /// `sum_k |coefficient|` times the scale: a bound on `sup |phi|`.
    pub fn sup_bound(&self) -> f64 {
        -self.scale * compensated_sum(self.coeffs.iter().copied())
    }

    /// `phi(j / n)` for `j < n`.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if self.is_zero() {
            return vec![0.0; n];
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            buf[(i + 1) % n] += a;
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|z| self.scale * z.re).collect()
    }
}

pub fn phi(m: u64, t: f64, tol: f64, tables: &ArithTables) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("phi at non-finite t = {t}")));
    }
    tables.ensure_covers(m)?;
    if !tables.is_squarefree(m as usize) || tables.r2(m as usize) == 0 {
        return Ok(0.0);
    }
    Ok(PhiSeries::with_tolerance(m, tol)?.eval(t))
}

/// `pi^-2 mu(m)^2 / m^2 sum_k r2(m k^2)^2 / k^4` summed to `K_SIEVE`; the
/// neglected tail is below `1e-12` of the value.
pub fn phi_l2(m: u64, tables: &ArithTables) -> Result<f64> {
    tables.ensure_covers(m)?;
    if !tables.is_squarefree(m as usize) || tables.r2(m as usize) == 0 {
        return Ok(0.0);
    }
    // the k^-4 tail: a few thousand terms already reach 1e-12
    let s = PhiSeries::new(m, 1 << 16)?;
    let v = s.l2();
    let rho_m = s.r2_m as f64 / 4.0;
    let tail = 16.0 * rho_m * rho_m * ksieve().tail2[1 << 16] / (PI * PI * (m as f64).powi(2));
    if tail > 1e-12 * v {
        return Err(Error::Resolution { what: format!("phi_l2({m}) tail"), achieved: tail / v });
    }
    Ok(v)
}

/// `int_0^1 exp(2 pi i sigma phi(t)) dt` by the periodic trapezoid rule on
/// `n` nodes.
fn trapezoid_factor(grid: &[f64], sigma: f64) -> Complex64 {
    let mut re = Compensated::new();
    let mut im = Compensated::new();
    for &p in grid {
        let (s, c) = (2.0 * PI * sigma * p).sin_cos();
        re.add(c);
        im.add(s);
    }
    let n = grid.len() as f64;
    Complex64::new(re.value() / n, im.value() / n)
}

fn check_quad_points(n: usize) -> Result<()> {
    if n < MIN_QUAD || !n.is_power_of_two() {
        return Err(Error::domain(format!("quadrature points must be a power of two >= {MIN_QUAD}, got {n}")));
    }
    Ok(())
}

/// Doubles the node count from `start` until two successive values agree
/// to `QUAD_DELTA`; returns the grid and the converged value.
fn converge_factor(series: &PhiSeries, sigma: f64, start: usize) -> Result<(Vec<f64>, Complex64)> {
    let mut n = start;
    let mut grid = series.grid(n);
    let mut prev = trapezoid_factor(&grid, sigma);
    loop {
        if n >= MAX_QUAD {
            let fine = series.grid(n);
            let v = trapezoid_factor(&fine, sigma);
            return Err(Error::Convergence {
                what: format!("characteristic factor m = {} at sigma = {sigma}", series.spec.m),
                last_delta: (v - prev).norm(),
            });
        }
        let finer = series.grid(2 * n);
        let next = trapezoid_factor(&finer, sigma);
        if (next - prev).norm() < QUAD_DELTA {
            // keep the coarser grid: it already meets the stopping rule
            return Ok((grid, prev));
        }
        n *= 2;
        grid = finer;
        prev = next;
    }
}

/// Largest `k` whose coefficient fits in a table of the given limit.
fn k_for_table(m: u64, limit: usize) -> u64 {
    (crate::numeric::isqrt(limit as u64 / m)).min(K_SIEVE as u64)
}

pub fn char_factor(m: u64, sigma: f64, quad_points: usize, tables: &ArithTables) -> Result<Complex64> {
    check_quad_points(quad_points)?;
    if !sigma.is_finite() {
        return Err(Error::domain("sigma must be finite"));
    }
    tables.ensure_covers(m)?;
    if !tables.is_squarefree(m as usize) || tables.r2(m as usize) == 0 || sigma == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let series = PhiSeries::new(m, k_for_table(m, tables.limit()))?;
    Ok(converge_factor(&series, sigma, quad_points)?.1)
}

/// One characteristic factor prepared for repeated evaluation.
#[derive(Debug, Clone)]
struct Factor {
    m: u64,
    grid: Vec<f64>,
    /// `mu_l (2 pi)^l / l!` where `mu_l = mean(phi^l)` over the grid.
    taylor: Vec<f64>,
    amplitude: f64,
}

impl Factor {
    fn eval(&self, sigma: f64) -> Complex64 {
        if 2.0 * PI * sigma.abs() * self.amplitude <= 1.0 {
            // sum_l b_l (i sigma)^l
            let mut re = 0.0;
            let mut im = 0.0;
            let mut pw = 1.0;
            for (l, &b) in self.taylor.iter().enumerate() {
                let t = b * pw;
                match l % 4 {
                    0 => re += t,
                    1 => im += t,
                    2 => re -= t,
                    _ => im -= t,
                }
                pw *= sigma;
            }
            Complex64::new(re, im)
        } else {
            trapezoid_factor(&self.grid, sigma)
        }
    }
}

/// Split of `(1/pi^2) sum_n r2(n)^2 / n^2` used by the Gaussian tail of the
/// characteristic product and by the second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2SquareSums {
    /// `sum_{n <= L} r2(n)^2 / n^2`.
    pub partial: f64,
    /// Estimate of `sum_{n > L} r2(n)^2 / n^2` from `sum_{n <= x} r2(n)^2 ~ 4 x log x + B x`.
    pub beyond: f64,
    pub b_fit: f64,
    pub limit: u64,
}

pub fn r2_square_sums(tables: &ArithTables) -> R2SquareSums {
    let lim = tables.limit();
    let mut acc = Compensated::new();
    let mut a = 0u64;
    for n in 1..=lim {
        let r = tables.r2(n) as u64;
        a += r * r;
        let nf = n as f64;
        acc.add((r * r) as f64 / (nf * nf));
    }
    let l = lim as f64;
    let b = a as f64 / l - 4.0 * l.ln();
    R2SquareSums { partial: acc.value(), beyond: (4.0 * l.ln() + 8.0 + b) / l, b_fit: b, limit: lim as u64 }
}

/// `sum_{m > M} int phi_m^2`: every `n <= L` whose square-free core exceeds
/// `M`, plus all `n > L` (which includes the `k` beyond each factor's cutoff).
pub(crate) fn tail_l2(m_cutoff: usize, tables: &ArithTables, sums: &R2SquareSums) -> f64 {
    let mut acc = Compensated::new();
    for n in 1..=tables.limit() {
        let r = tables.r2(n);
        if r > 0 && tables.sqfree_core(n).0 as usize > m_cutoff {
            let nf = n as f64;
            acc.add((r as f64).powi(2) / (nf * nf));
        }
    }
    (acc.value() + sums.beyond) / (PI * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Factors with `m <= m_cutoff` are evaluated, the rest go into the tail.
    pub m_cutoff: usize,
    /// Quadrature node counts are calibrated at this `sigma`.
    pub sigma_cal: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { m_cutoff: 10_000, sigma_cal: 16.0 }
    }
}

/// The characteristic function `Phi(sigma)`: explicit factors for small `m`
/// and a Gaussian correction for the rest.
#[derive(Debug, Clone)]
pub struct CharModel {
    factors: Arc<Vec<Factor>>,
    pub m_cutoff: usize,
    pub sigma_cal: f64,
    pub tail_l2: f64,
    pub sums: R2SquareSums,
    pub table_limit: usize,
}

/// Smallest admissible factor cutoff for evaluating at `sigma`.
pub fn required_cutoff(sigma: f64) -> usize {
    (16.0 * (1.0 + sigma.abs()).powi(2)).ceil() as usize
}

impl CharModel {
    pub fn build(cfg: ModelConfig, tables: &ArithTables) -> Result<Self> {
        if cfg.m_cutoff == 0 {
            return Err(Error::domain("m_cutoff must be positive"));
        }
        tables.ensure_covers(cfg.m_cutoff as u64)?;
        let ms = tables.active_squarefree(cfg.m_cutoff);
        let built: Vec<Result<Factor>> = par_map(ms.len(), |i| {
            let m = ms[i] as u64;
            let k = k_for_table(m, tables.limit());
            let series = PhiSeries::new(m, k)?;
            let start = (4 * k as usize).next_power_of_two().max(MIN_QUAD);
            let (grid, _) = converge_factor(&series, cfg.sigma_cal, start)?;
            let amplitude = grid.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let n = grid.len() as f64;
            let mut taylor = Vec::with_capacity(TAYLOR_ORDER + 1);
            let mut pw = vec![1.0; grid.len()];
            let mut coef = 1.0;
            for l in 0..=TAYLOR_ORDER {
                if l > 0 {
                    for (p, &g) in pw.iter_mut().zip(&grid) {
                        *p *= g;
                    }
                    coef *= 2.0 * PI / l as f64;
                }
                taylor.push(coef * compensated_sum(pw.iter().copied()) / n);
            }
            Ok(Factor { m, grid, taylor, amplitude })
        });
        let factors = built.into_iter().collect::<Result<Vec<_>>>()?;
        let sums = r2_square_sums(tables);
        let tail = tail_l2(cfg.m_cutoff, tables, &sums);
        Ok(Self {
            factors: Arc::new(factors),
            m_cutoff: cfg.m_cutoff,
            sigma_cal: cfg.sigma_cal,
            tail_l2: tail,
            sums,
            table_limit: tables.limit(),
        })
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    /// Quadrature node count per explicit factor, ascending `m`.
    pub fn quad_points(&self) -> Vec<(u64, usize)> {
        self.factors.iter().map(|f| (f.m, f.grid.len())).collect()
    }

    /// `Phi(sigma)`; negative `sigma` by conjugation.
    pub fn eval(&self, sigma: f64) -> Result<Complex64> {
        if !sigma.is_finite() {
            return Err(Error::domain("sigma must be finite"));
        }
        let need = required_cutoff(sigma);
        if self.m_cutoff < need {
            return Err(Error::domain(format!(
                "sigma = {sigma} needs m_cutoff >= {need}, model has {}",
                self.m_cutoff
            )));
        }
        if sigma < 0.0 {
            return Ok(self.eval(-sigma)?.conj());
        }
        let w = 2.0 * PI * sigma;
        let mut prod = Complex64::new((-0.5 * w * w * self.tail_l2).exp(), 0.0);
        for f in self.factors.iter() {
            prod *= f.eval(sigma);
            if prod.norm() < PRODUCT_FLOOR {
                break;
            }
        }
        Ok(prod)
    }

    pub fn profile(&self, sigma_grid: &[f64]) -> Result<CharProfile> {
        let values = par_map(sigma_grid.len(), |i| self.eval(sigma_grid[i]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(CharProfile {
            sigma_grid: sigma_grid.to_vec(),
            values: values.iter().map(|z| (z.re, z.im)).collect(),
            m_cutoff: self.m_cutoff,
            tail_l2: self.tail_l2,
            quad_points: self.quad_points(),
        })
    }
}

pub fn char_product(sigma: f64, m_cutoff: usize, tables: &ArithTables) -> Result<Complex64> {
    let need = required_cutoff(sigma);
    if m_cutoff < need {
        return Err(Error::domain(format!("sigma = {sigma} needs m_cutoff >= {need}, got {m_cutoff}")));
    }
    let cfg = ModelConfig { m_cutoff, sigma_cal: sigma.abs().max(1.0) };
    CharModel::build(cfg, tables)?.eval(sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharProfile {
    pub sigma_grid: Vec<f64>,
    /// `(re, im)` of `Phi` at each grid point.
    pub values: Vec<(f64, f64)>,
    pub m_cutoff: usize,
    pub tail_l2: f64,
    pub quad_points: Vec<(u64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub alpha_extent: f64,
    pub n_alpha: usize,
    /// Upper end of the sigma integral; `None` searches for it.
    pub sigma_max: Option<f64>,
    pub d_sigma: f64,
}

impl DensitySpec {
    pub fn with_extent(alpha_extent: f64, n_alpha: usize) -> Self {
        Self { alpha_extent, n_alpha, sigma_max: None, d_sigma: 1.0 / (8.0 * alpha_extent) }
    }
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self::with_extent(12.0, 4097)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub alpha_grid: Vec<f64>,
    pub p_values: Vec<f64>,
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
    pub fourth: f64,
    pub cdf: Vec<f64>,
    pub sigma_max: f64,
    pub d_sigma: f64,
    pub envelope_at_sigma_max: f64,
    pub m_cutoff: usize,
    pub tail_l2: f64,
}

const SIGMA_ENVELOPE: f64 = 1e-14;

/// First grid point past which `|Phi|` stays below the envelope.
fn search_sigma_max(model: &CharModel, d_sigma: f64, start: f64) -> Result<f64> {
    let mut cap = start;
    loop {
        let n = (cap / d_sigma).ceil() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 * d_sigma).collect();
        let vals = model.profile(&grid)?;
        let last_big = vals.values.iter().rposition(|&(re, im)| re.hypot(im) >= SIGMA_ENVELOPE);
        match last_big {
            Some(i) if i == n => {
                if cap >= model.sigma_cal {
                    return Err(Error::Resolution {
                        what: format!("|Phi| above {SIGMA_ENVELOPE:e} at sigma = {cap}"),
                        achieved: vals.values[n].0.hypot(vals.values[n].1),
                    });
                }
                cap = (2.0 * cap).min(model.sigma_cal);
            }
            Some(i) => return Ok((i + 1) as f64 * d_sigma),
            None => return Ok(d_sigma),
        }
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let acc: Compensated = x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).collect();
    acc.value()
}

/// `P(alpha) = 2 Re int_0^sigma_max Phi(sigma) e^{-2 pi i alpha sigma} d sigma`.
pub fn density(spec: &DensitySpec, model: &CharModel) -> Result<DensityGrid> {
    if !(spec.alpha_extent > 0.0) || spec.n_alpha < 3 {
        return Err(Error::domain("density needs a positive extent and at least 3 grid points"));
    }
    if !(spec.d_sigma > 0.0) || spec.d_sigma > 1.0 / (4.0 * spec.alpha_extent) {
        return Err(Error::domain(format!(
            "d_sigma must lie in (0, {}] for extent {}",
            1.0 / (4.0 * spec.alpha_extent),
            spec.alpha_extent
        )));
    }
    let h = spec.d_sigma;
    let sigma_max = match spec.sigma_max {
        Some(s) => s,
        None => search_sigma_max(model, h, 2.0f64.min(model.sigma_cal))?,
    };
    let n_sigma = (sigma_max / h).round() as usize;
    let sigmas: Vec<f64> = (0..=n_sigma).map(|i| i as f64 * h).collect();
    let profile = model.profile(&sigmas)?;
    let (last_re, last_im) = profile.values[n_sigma];
    let envelope = last_re.hypot(last_im);
    if envelope >= SIGMA_ENVELOPE {
        return Err(Error::Resolution {
            what: format!("|Phi(sigma_max = {sigma_max})| not below {SIGMA_ENVELOPE:e}"),
            achieved: envelope,
        });
    }
    let a = spec.alpha_extent;
    let na = spec.n_alpha;
    let alpha: Vec<f64> = (0..na).map(|i| -a + 2.0 * a * i as f64 / (na - 1) as f64).collect();
    let vals = &profile.values;
    let p: Vec<f64> = par_map(na, |i| {
        let mut acc = Compensated::new();
        for (j, &(re, im)) in vals.iter().enumerate() {
            let w = if j == 0 || j == n_sigma { 0.5 } else { 1.0 };
            let (s, c) = (2.0 * PI * frac_of_product(alpha[i], sigmas[j])).sin_cos();
            // Re[(re + i im)(c - i s)]
            acc.add(w * (re * c + im * s));
        }
        2.0 * h * acc.value()
    });
    let moment = |j: i32| {
        let y: Vec<f64> = alpha.iter().zip(&p).map(|(&x, &v)| x.powi(j) * v).collect();
        trapezoid(&alpha, &y)
    };
    let mass = moment(0);
    let mean = moment(1);
    let variance = moment(2) - mean * mean;
    let third = moment(3);
    let fourth = moment(4);
    let mut cdf = Vec::with_capacity(na);
    let mut acc = Compensated::new();
    cdf.push(0.0);
    for i in 1..na {
        acc.add(0.5 * (alpha[i] - alpha[i - 1]) * (p[i] + p[i - 1]));
        cdf.push(acc.value());
    }
    Ok(DensityGrid {
        alpha_grid: alpha,
        p_values: p,
        mass,
        mean,
        variance,
        third,
        fourth,
        cdf,
        sigma_max,
        d_sigma: h,
        envelope_at_sigma_max: envelope,
        m_cutoff: model.m_cutoff,
        tail_l2: model.tail_l2,
    })
}

impl DensityGrid {
    pub fn extent(&self) -> f64 {
        *self.alpha_grid.last().unwrap_or(&0.0)
    }

    /// Limit CDF at `alpha` by linear interpolation.
    pub fn cdf_at(&self, alpha: f64) -> Result<f64> {
        let a = self.extent();
        if !(alpha.abs() <= a) {
            return Err(Error::GridExtent { value: alpha, extent: a });
        }
        let g = &self.alpha_grid;
        let i = g.partition_point(|&x| x <= alpha).clamp(1, g.len() - 1);
        let t = (alpha - g[i - 1]) / (g[i] - g[i - 1]);
        Ok(self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1]))
    }

    /// `int alpha^j P` on the grid.
    pub fn moment(&self, j: u32) -> f64 {
        let y: Vec<f64> = self.alpha_grid.iter().zip(&self.p_values).map(|(&x, &v)| x.powi(j as i32) * v).collect();
        trapezoid(&self.alpha_grid, &y)
    }

    /// Inverse of the interpolated CDF.
    pub fn quantile(&self, q: f64) -> f64 {
        let c = &self.cdf;
        let i = c.partition_point(|&v| v < q);
        if i == 0 {
            return self.alpha_grid[0];
        }
        if i >= c.len() {
            return self.extent();
        }
        let span = c[i] - c[i - 1];
        let t = if span > 0.0 { (q - c[i - 1]) / span } else { 0.0 };
        self.alpha_grid[i - 1] + t * (self.alpha_grid[i] - self.alpha_grid[i - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    /// Smallest `c` with `r2(m) <= m^(c / log log m)` over the tabulated `m >= 16`.
    pub c_r2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub rho: f64,
    pub rho_left: Option<f64>,
    pub rho_right: Option<f64>,
    /// Beyond this `|alpha|` the density stays below `exp(-|alpha|)`.
    pub alpha0: Option<f64>,
    pub fit_points: usize,
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    sxy / sxx
}

/// Fits `rho` in `P(alpha) ~ exp(-(pi/2) |alpha| exp(rho |alpha|))` on each
/// side separately, using points with `1e-12 < P < 1e-3`; the reported `rho`
/// is the smaller (heavier tail).
pub fn decay_diagnostic(grid: &DensityGrid, tables: &ArithTables) -> Result<DecayEnvelope> {
    let mut pts: Vec<(f64, f64)> = grid.alpha_grid.iter().copied().zip(grid.p_values.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let side = |sign: f64| -> Vec<(f64, f64)> {
        pts.iter()
            .filter(|&&(a, p)| a * sign > 0.0 && p > 1e-12 && p < 1e-3)
            .map(|&(a, p)| (a.abs(), (-2.0 * p.ln() / (PI * a.abs())).ln()))
            .collect()
    };
    let (left, right) = (side(-1.0), side(1.0));
    let p_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).max(1e-300);
    if left.len().max(right.len()) < 8 || p_min > 1e-6 {
        return Err(Error::Resolution {
            what: "density grid does not cover enough decades for a decay fit".into(),
            achieved: p_min,
        });
    }
    let fit_side = |v: &[(f64, f64)]| if v.len() >= 8 { Some(slope(v)) } else { None };
    let rho_left = fit_side(&left);
    let rho_right = fit_side(&right);
    let rho = match (rho_left, rho_right) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!(),
    };

    // alpha0: beyond it (on both sides) P < exp(-|alpha|)
    let mut alpha0 = Some(0.0f64);
    for &(a, p) in &pts {
        if p >= (-a.abs()).exp() {
            alpha0 = alpha0.map(|z| z.max(a.abs()));
        }
    }
    if alpha0 == Some(grid.extent()) {
        alpha0 = None;
    }

    let mut c_r2 = 0.0f64;
    for m in 16..=tables.limit() {
        let r = tables.r2(m);
        if r > 0 {
            let lm = (m as f64).ln();
            c_r2 = c_r2.max((r as f64).ln() * lm.ln() / lm);
        }
    }
    Ok(DecayEnvelope { c_r2, c1: PI / (5.0 * rho), rho, rho_left, rho_right, alpha0, fit_points: left.len() + right.len() })
}
