//! Truncated oscillatory series for the normalized error term,
//!
//! `E(x)/x^2 = -(sqrt 2 / pi) sum_{m <= M} r2(m)/m cos(2 pi sqrt(m) x) - 2 x^-2 T(x^2) + small`,
//!
//! valid for `X <= x <= 2X` with `M = X^2`, and the residual of that
//! expansion against the exact count.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::arith::ArithTables;
use crate::error::{Error, Result};
use crate::lattice::{error_term, ErrorSample};
use crate::numeric::{frac_of_product, Compensated};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub m_cutoff: u64,
    pub window_x: f64,
}

impl SeriesConfig {
    /// Window anchored at `x` with the default cutoff `ceil(x^2)`.
    pub fn for_window(window_x: f64) -> Result<Self> {
        if !(window_x.is_finite() && window_x > 0.0) {
            return Err(Error::domain(format!("window X must be positive, got {window_x}")));
        }
        Ok(Self { m_cutoff: (window_x * window_x).ceil() as u64, window_x })
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if !(x >= self.window_x && x <= 2.0 * self.window_x) {
            return Err(Error::domain(format!(
                "x = {x} outside the window [{}, {}]",
                self.window_x,
                2.0 * self.window_x
            )));
        }
        Ok(())
    }
}

/// The nonzero terms of the series up to a cutoff, precomputed once and
/// reused across every evaluation point of a scan.
#[derive(Debug, Clone)]
pub struct SeriesTerms {
    roots: Vec<f64>,
    weights: Vec<f64>,
}

impl SeriesTerms {
    pub fn new(m_cutoff: u64, tables: &ArithTables) -> Result<Self> {
        tables.ensure_covers(m_cutoff)?;
        let mut roots = Vec::new();
        let mut weights = Vec::new();
        for m in 1..=m_cutoff as usize {
            let w = tables.r2(m);
            if w > 0 {
                roots.push((m as f64).sqrt());
                weights.push(w as f64 / m as f64);
            }
        }
        Ok(Self { roots, weights })
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    #[inline]
    fn term(&self, i: usize, x: f64) -> f64 {
        // Range-reduce sqrt(m) * x before the cosine: the product reaches
        // ~10^6 at desk scale and its sub-unit digits carry the phase.
        self.weights[i] * (2.0 * PI * frac_of_product(self.roots[i], x)).cos()
    }

    /// Series value at `x`, summed in ascending `m`.
    pub fn eval(&self, x: f64) -> f64 {
        let acc: Compensated = (0..self.len()).map(|i| self.term(i, x)).collect();
        -SQRT_2 / PI * acc.value()
    }

    /// Same sum taken in an arbitrary order of term indices.
    pub fn eval_in_order(&self, x: f64, order: &[usize]) -> f64 {
        let acc: Compensated = order.iter().map(|&i| self.term(i, x)).collect();
        -SQRT_2 / PI * acc.value()
    }
}

pub fn truncated_series(x: f64, cfg: &SeriesConfig, tables: &ArithTables) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("series at non-finite x = {x}")));
    }
    Ok(SeriesTerms::new(cfg.m_cutoff, tables)?.eval(x))
}

/// `E(x)/x^2 - series(x) + 2 x^-2 T(x^2)` together with its pieces.
pub fn residual_sample(x: f64, cfg: &SeriesConfig, terms: &SeriesTerms, tables: &ArithTables) -> Result<(ErrorSample, f64)> {
    cfg.check_x(x)?;
    let mut s = error_term(x, tables)?;
    let series = terms.eval(x);
    let r = s.e_hat - series + 2.0 * s.t_rem / (x * x);
    s.voronoi_residual = Some(r);
    Ok((s, series))
}

pub fn prop1_residual(x: f64, cfg: &SeriesConfig, tables: &ArithTables) -> Result<f64> {
    cfg.check_x(x)?;
    let terms = SeriesTerms::new(cfg.m_cutoff, tables)?;
    let (s, _) = residual_sample(x, cfg, &terms, tables)?;
    Ok(s.voronoi_residual.unwrap_or(f64::NAN))
}

/// One row of a residual scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub x: f64,
    pub e_hat: f64,
    pub series: f64,
    pub t_rem: f64,
    pub residual: f64,
}

/// Residuals at every `x` in `xs`; rows come back in input order.
pub fn residual_scan(xs: &[f64], cfg: &SeriesConfig, tables: &ArithTables) -> Result<Vec<ResidualRow>> {
    let terms = SeriesTerms::new(cfg.m_cutoff, tables)?;
    crate::numeric::par_map(xs.len(), |i| {
        let (s, series) = residual_sample(xs[i], cfg, &terms, tables)?;
        Ok(ResidualRow {
            x: s.x,
            e_hat: s.e_hat,
            series,
            t_rem: s.t_rem,
            residual: s.voronoi_residual.unwrap_or(f64::NAN),
        })
    })
    .into_iter()
    .collect()
}

pub fn rms<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut n = 0usize;
    let acc: Compensated = values
        .into_iter()
        .map(|v| {
            n += 1;
            v * v
        })
        .collect();
    if n == 0 {
        0.0
    } else {
        (acc.value() / n as f64).sqrt()
    }
}
