//! Browser front-end: three views of the lattice-count error term.

use std::cell::RefCell;

use cygan::arith::{build_tables, ArithTables};
use cygan::lattice::normalized_error;
use cygan::profile::{density, CharModel, DensitySpec, ModelConfig, PhiSeries};
use wasm_bindgen::prelude::*;

thread_local! {
    static TABLES: RefCell<Option<ArithTables>> = const { RefCell::new(None) };
}

fn js_err(e: cygan::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Runs `f` with tables covering at least `limit`, rebuilding when needed.
fn with_tables<T>(limit: usize, f: impl FnOnce(&ArithTables) -> Result<T, JsValue>) -> Result<T, JsValue> {
    TABLES.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.as_ref().is_none_or(|t| t.limit() < limit) {
            *slot = Some(build_tables(limit).map_err(js_err)?);
        }
        f(slot.as_ref().unwrap())
    })
}

/// `[x0, e0, x1, e1, ...]` for `n` evenly spaced radii in `[x_min, x_max]`.
#[wasm_bindgen]
pub fn error_scan(x_min: f64, x_max: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    if !(x_min > 0.0 && x_max > x_min && n >= 2) {
        return Err(JsValue::from_str("need 0 < x_min < x_max and n >= 2"));
    }
    with_tables((x_max * x_max).ceil() as usize + 1, |t| {
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let x = x_min + (x_max - x_min) * i as f64 / (n - 1) as f64;
            out.push(x);
            out.push(normalized_error(x, t).map_err(js_err)?);
        }
        Ok(out)
    })
}

/// One period of `phi_m` sampled at `n` points (`n` a power of two).
#[wasm_bindgen]
pub fn phi_profile(m: u64, k_cutoff: u64, n: usize) -> Result<Vec<f64>, JsValue> {
    if !n.is_power_of_two() {
        return Err(JsValue::from_str("n must be a power of two"));
    }
    Ok(PhiSeries::new(m, k_cutoff).map_err(js_err)?.grid(n))
}

/// `[a0, p0, a1, p1, ...]`: the limit density from a small table, followed
/// by `mass, mean, variance`.
#[wasm_bindgen]
pub fn limit_density(table_limit: usize, m_cutoff: usize, n_alpha: usize) -> Result<Vec<f64>, JsValue> {
    with_tables(table_limit, |t| {
        let model = CharModel::build(ModelConfig { m_cutoff, sigma_cal: 8.0 }, t).map_err(js_err)?;
        let g = density(&DensitySpec::with_extent(12.0, n_alpha), &model).map_err(js_err)?;
        let mut out: Vec<f64> = g.alpha_grid.iter().zip(&g.p_values).flat_map(|(&a, &p)| [a, p]).collect();
        out.extend([g.mass, g.mean, g.variance]);
        Ok(out)
    })
}
