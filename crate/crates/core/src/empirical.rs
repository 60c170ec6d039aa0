//! Window statistics of the exact normalized error over `[X, 2X]`:
//! Monte-Carlo moments, the empirical distribution and its distance to the
//! limit law, and the mean square of the remainder `x^-2 T(x^2)`.
//!
//! Sample points come from ChaCha20 seeded with `seed_from_u64`, drawn
//! serially so that every sample depends only on `(seed, X, n, estimator)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arith::ArithTables;
use crate::error::{Error, Result};
use crate::lattice::{error_term, normalized_error};
use crate::numeric::{par_map, Compensated};
use crate::profile::DensityGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    UniformRandom,
    /// One draw in each of `n` equal strata.
    Stratified,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "uniform-random" => Ok(Self::UniformRandom),
            "stratified" => Ok(Self::Stratified),
            _ => Err(Error::domain(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    #[serde(rename = "X")]
    pub x_window: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub estimator: Estimator,
}

impl ScanConfig {
    pub fn new(x_window: f64, n_samples: usize, seed: u64) -> Self {
        Self { x_window, n_samples, seed, estimator: Estimator::UniformRandom }
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_window.is_finite() && self.x_window > 0.0) {
            return Err(Error::domain(format!("window X must be positive, got {}", self.x_window)));
        }
        if self.n_samples == 0 {
            return Err(Error::domain("need at least one sample"));
        }
        Ok(())
    }

    /// Table limit the scan needs: `r2(m)` for `m <= (2X)^2`.
    pub fn required_limit(&self) -> u64 {
        (4.0 * self.x_window * self.x_window).floor() as u64 + 1
    }
}

/// The sample radii of a scan, in draw order.
pub fn sample_points(cfg: &ScanConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let x = cfg.x_window;
    let n = cfg.n_samples as f64;
    let pts = (0..cfg.n_samples)
        .map(|i| {
            let u: f64 = rng.gen();
            let t = match cfg.estimator {
                Estimator::UniformRandom => u,
                Estimator::Stratified => (i as f64 + u) / n,
            };
            // stays inside [X, 2X] after rounding
            (x * (1.0 + t)).min(2.0 * x)
        })
        .collect();
    Ok(pts)
}

/// Exact `E(x)/x^2` at every sample point, plus optionally `x^-2 T(x^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub cfg: ScanConfig,
    pub x: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub t_scaled: Option<Vec<f64>>,
}

pub fn scan(cfg: &ScanConfig, with_remainder: bool, tables: &ArithTables) -> Result<Scan> {
    let x = sample_points(cfg)?;
    tables.ensure_covers(cfg.required_limit().saturating_sub(1))?;
    if with_remainder {
        let rows = par_map(x.len(), |i| error_term(x[i], tables)).into_iter().collect::<Result<Vec<_>>>()?;
        let e_hat = rows.iter().map(|r| r.e_hat).collect();
        let t = rows.iter().map(|r| r.t_rem / (r.x * r.x)).collect();
        Ok(Scan { cfg: *cfg, x, e_hat, t_scaled: Some(t) })
    } else {
        let e_hat = par_map(x.len(), |i| normalized_error(x[i], tables)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Scan { cfg: *cfg, x, e_hat, t_scaled: None })
    }
}

/// Mean and standard error of `values`; the standard error uses the i.i.d.
/// formula, which is conservative for stratified draws.
fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().collect::<Compensated>().value() / n;
    if n < 2.0 {
        return (mean, f64::INFINITY);
    }
    let ss = values.map(|v| (v - mean) * (v - mean)).collect::<Compensated>().value();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

impl Scan {
    /// Estimate and standard error of `(1/X) int_X^2X E(x)^j / x^2j dx`.
    pub fn moment(&self, j: u32) -> Result<(f64, f64)> {
        if j == 0 || j > 8 {
            return Err(Error::domain(format!("moment order must lie in 1..=8, got {j}")));
        }
        Ok(mean_and_se(self.e_hat.iter().map(|v| v.powi(j as i32))))
    }

    pub fn cdf(&self) -> EmpiricalCdf {
        EmpiricalCdf::new(self.e_hat.clone())
    }

    pub fn remainder_ms(&self) -> Result<(f64, f64)> {
        let t = self.t_scaled.as_ref().ok_or_else(|| Error::domain("scan was run without the remainder"))?;
        Ok(mean_and_se(t.iter().map(|v| v * v)))
    }

    /// KS distance of the first `n` samples (all when `None`).
    pub fn ks(&self, grid: &DensityGrid, n: Option<usize>) -> Result<f64> {
        let n = n.unwrap_or(self.e_hat.len()).min(self.e_hat.len());
        EmpiricalCdf::new(self.e_hat[..n].to_vec()).ks_against(grid)
    }
}

/// Sorted sample values; `eval` is the right-continuous staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    pub sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { sorted: values }
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= alpha) as f64 / self.sorted.len() as f64
    }

    pub fn median(&self) -> f64 {
        let n = self.sorted.len();
        if n % 2 == 1 {
            self.sorted[n / 2]
        } else {
            0.5 * (self.sorted[n / 2 - 1] + self.sorted[n / 2])
        }
    }

    /// `sup |F_n - F|` over the jump points of the staircase.
    pub fn ks_against(&self, grid: &DensityGrid) -> Result<f64> {
        let n = self.sorted.len() as f64;
        let mut d = 0.0f64;
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = grid.cdf_at(v)?;
            d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
        }
        Ok(d)
    }
}

pub fn empirical_moment(j: u32, cfg: &ScanConfig, tables: &ArithTables) -> Result<(f64, f64)> {
    scan(cfg, false, tables)?.moment(j)
}

pub fn empirical_cdf(cfg: &ScanConfig, tables: &ArithTables) -> Result<EmpiricalCdf> {
    Ok(scan(cfg, false, tables)?.cdf())
}

pub fn ks_distance(cfg: &ScanConfig, grid: &DensityGrid, tables: &ArithTables) -> Result<f64> {
    scan(cfg, false, tables)?.ks(grid, None)
}

/// Monte-Carlo `(1/X) int (x^-2 T(x^2))^2 dx`.
pub fn remainder_ms(cfg: &ScanConfig, tables: &ArithTables) -> Result<f64> {
    Ok(scan(cfg, true, tables)?.remainder_ms()?.0)
}

/// `KS` distance of the limit CDF against itself at its own grid nodes,
/// a self-check of the interpolation.
pub fn ks_self(grid: &DensityGrid) -> Result<f64> {
    let mut d = 0.0f64;
    for (a, &c) in grid.alpha_grid.iter().zip(&grid.cdf) {
        d = d.max((grid.cdf_at(*a)? - c).abs());
    }
    Ok(d)
}
