//! The end-to-end acceptance suite: twelve numbered checks tying the
//! arithmetic, counting, series, profile, moment and sampling layers together.
//!
//! Each check returns a [`CriterionResult`] with the numbers it looked at.
//! Failures inside a check (including library errors) mark that check as
//! failed and never abort the suite. Reports serialize deterministically;
//! wall-clock times are kept out of the serialized form.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arith::{build_tables, r2_divisor_formula, r2_oracle, ArithTables};
use crate::empirical::{remainder_ms, sample_points, scan, Scan, ScanConfig};
use crate::error::{Error, Result};
use crate::lattice::{count_bruteforce, count_exact, decomposition_residual, taylor_coeffs, vol_ball_radial_quadrature};
use crate::moments::{default_m_cutoff, second_moment_closed, theoretical_moment, xi_bruteforce, xi_truncated};
use crate::numeric::with_threads;
use crate::profile::{density, CharModel, DensityGrid, DensitySpec, ModelConfig};
use crate::voronoi::{residual_scan, rms, SeriesConfig};

/// Table limit used by the whole suite.
pub const SUITE_TABLE_LIMIT: usize = 10_000_000;
/// Criteria that finish in well under a minute.
pub const QUICK: [u32; 5] = [1, 2, 3, 4, 7];
pub const ALL: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

const SEED: u64 = 20_240_601;
const MOMENT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    /// Set when the check could not run to completion.
    pub error: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub criteria: Vec<CriterionResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `criterion N: PASS|FAIL` line per check.
    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(CriterionResult::line).collect()
    }
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("criterion {:>2}: {status}  {}", self.id, self.title);
        let shown: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        if !shown.is_empty() {
            s.push_str(&format!("  [{}]", shown.join(", ")));
        }
        if let Some(e) = &self.error {
            s.push_str(&format!("  error: {e}"));
        }
        s.push_str(&format!("  ({:.1}s)", self.seconds));
        s
    }
}

pub fn title(id: u32) -> &'static str {
    match id {
        1 => "sieve matches oracle and divisor formula",
        2 => "exact count matches brute force",
        3 => "volume from Taylor constants and radial quadrature",
        4 => "exact count decomposition",
        5 => "series residual decays in X",
        6 => "remainder mean square band",
        7 => "Xi dynamic programme matches enumeration",
        8 => "moment identities",
        9 => "density axioms",
        10 => "KS distance to the limit law",
        11 => "empirical moments close the chain",
        12 => "determinism across thread counts",
        _ => "unknown",
    }
}

type Metrics = BTreeMap<String, f64>;

/// Shared, lazily built inputs.
#[derive(Default)]
pub struct Suite {
    tables: OnceLock<Result<ArithTables>>,
    density: OnceLock<Result<DensityGrid>>,
    window: OnceLock<Result<Scan>>,
    second: OnceLock<Result<f64>>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tables(&self) -> Result<&ArithTables> {
        self.tables.get_or_init(|| build_tables(SUITE_TABLE_LIMIT)).as_ref().map_err(Clone::clone)
    }

    /// The limit density on the default grid.
    pub fn density(&self) -> Result<&DensityGrid> {
        self.density
            .get_or_init(|| {
                let t = self.tables()?;
                let model = CharModel::build(ModelConfig::default(), t)?;
                density(&DensitySpec::default(), &model)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Closed-form second moment.
    pub fn second(&self) -> Result<f64> {
        self.second
            .get_or_init(|| Ok(second_moment_closed(MOMENT_REL_TOL, self.tables()?)?.value))
            .clone()
    }

    /// The `X = 400`, `n = 2 * 10^5` window scan shared by criteria 10 and 11.
    pub fn window_scan(&self) -> Result<&Scan> {
        self.window
            .get_or_init(|| scan(&ScanConfig::new(400.0, 200_000, SEED), false, self.tables()?))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Runs the given criteria in order.
    pub fn run(&self, ids: &[u32]) -> Report {
        let criteria = ids.iter().map(|&id| self.run_one(id)).collect();
        Report { criteria }
    }

    pub fn run_one(&self, id: u32) -> CriterionResult {
        let start = Instant::now();
        let mut m = Metrics::new();
        let outcome = match id {
            1 => self.c1(&mut m),
            2 => self.c2(&mut m),
            3 => c3(&mut m),
            4 => self.c4(&mut m),
            5 => self.c5(&mut m),
            6 => self.c6(&mut m),
            7 => self.c7(&mut m),
            8 => self.c8(&mut m),
            9 => self.c9(&mut m),
            10 => self.c10(&mut m),
            11 => self.c11(&mut m),
            12 => self.c12(&mut m),
            _ => Err(Error::Domain(format!("no criterion {id}"))),
        };
        let (passed, error) = match outcome {
            Ok(p) => (p, None),
            Err(e) => (false, Some(e.to_string())),
        };
        CriterionResult { id, title: title(id).to_string(), passed, metrics: m, error, seconds: start.elapsed().as_secs_f64() }
    }

    fn c1(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut bad = 0u64;
        for n in 1..=10_000u64 {
            bad += u64::from(t.r2(n as usize) as u64 != r2_oracle(n));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 1);
        for _ in 0..10_000 {
            let n: u64 = rng.gen_range(1..=1_000_000);
            bad += u64::from(t.r2(n as usize) as u64 != r2_oracle(n));
        }
        for n in 1..=100_000u64 {
            bad += u64::from(t.r2(n as usize) as i64 != r2_divisor_formula(n));
        }
        m.insert("mismatches".into(), bad as f64);
        Ok(bad == 0)
    }

    fn c2(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut xs: Vec<f64> = (1..=24).map(|i| 0.5 * i as f64).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 2);
        xs.extend((0..50).map(|_| 12.0 * (1.0 - rng.gen::<f64>())));
        let mut bad = 0u64;
        for &x in &xs {
            bad += u64::from(count_exact(x, t)? != count_bruteforce(x)?);
        }
        m.insert("points".into(), xs.len() as f64);
        m.insert("mismatches".into(), bad as f64);
        Ok(bad == 0)
    }

    fn c4(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut worst = 0.0f64;
        for x in [10.3, 25.7, 50.1] {
            let r = decomposition_residual(x, 50, t)?;
            worst = worst.max(r.abs() / count_exact(x, t)? as f64);
        }
        m.insert("max_relative_residual".into(), worst);
        Ok(worst <= 1e-8)
    }

    fn c5(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut r = Vec::new();
        for x in [100.0, 200.0, 400.0] {
            let xs = sample_points(&ScanConfig::new(x, 1000, SEED ^ 5))?;
            let rows = residual_scan(&xs, &SeriesConfig::for_window(x)?, t)?;
            let v = rms(rows.iter().map(|row| row.residual));
            m.insert(format!("rms_X{x}"), v);
            r.push(v);
        }
        Ok(r[2] < r[1] && r[1] < r[0] && r[2] <= 0.05)
    }

    fn c6(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut raw = Vec::new();
        let mut scaled = Vec::new();
        for x in [100.0f64, 200.0, 400.0] {
            let v = remainder_ms(&ScanConfig::new(x, 2000, SEED ^ 6), t)?;
            let s = v * x * x / x.ln().powi(4);
            m.insert(format!("ms_X{x}"), v);
            m.insert(format!("scaled_X{x}"), s);
            raw.push(v);
            scaled.push(s);
        }
        let hi = scaled.iter().copied().fold(f64::MIN, f64::max);
        let lo = scaled.iter().copied().fold(f64::MAX, f64::min);
        m.insert("band_ratio".into(), hi / lo);
        Ok(lo > 0.0 && hi / lo <= 10.0 && raw[2] < raw[1] && raw[1] < raw[0])
    }

    fn c7(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let mut worst = 0.0f64;
        let mut points = 0;
        for mm in [1u64, 2, 5, 10] {
            for ell in [2u32, 3, 4] {
                for y in [5u64, 10, 20] {
                    let a = xi_truncated(mm, ell, y, t)?;
                    let b = xi_bruteforce(mm, ell, y, t)?;
                    let rel = if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
                    worst = worst.max(rel);
                    points += 1;
                }
            }
        }
        m.insert("points".into(), points as f64);
        m.insert("max_relative_gap".into(), worst);
        Ok(points == 36 && worst <= 1e-13)
    }

    fn c8(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let moment = |j| theoretical_moment(j, default_m_cutoff(j), MOMENT_REL_TOL, t);
        let m1 = moment(1)?;
        let m2 = moment(2)?;
        let m3 = moment(3)?;
        let m4 = moment(4)?;
        let closed = self.second()?;
        let fourth = self.density()?.moment(4);
        let rel2 = ((m2.value - closed) / closed).abs();
        let rel4 = ((m4.value - fourth) / fourth).abs();
        m.insert("m1".into(), m1.value);
        m.insert("m2_rel_gap".into(), rel2);
        m.insert("m3".into(), m3.value);
        m.insert("m3_budget".into(), m3.error_budget);
        m.insert("m4".into(), m4.value);
        m.insert("m4_density".into(), fourth);
        m.insert("m4_rel_gap".into(), rel4);
        Ok(m1.value == 0.0 && rel2 <= 1e-9 && m3.value + m3.error_budget < 0.0 && rel4 <= 1e-2)
    }

    fn c9(&self, m: &mut Metrics) -> Result<bool> {
        let g = self.density()?;
        let closed = self.second()?;
        let min_p = g.p_values.iter().copied().fold(f64::INFINITY, f64::min);
        let var_gap = ((g.variance - closed) / closed).abs();
        m.insert("mass".into(), g.mass);
        m.insert("mean".into(), g.mean);
        m.insert("min_p".into(), min_p);
        m.insert("variance_rel_gap".into(), var_gap);
        m.insert("third".into(), g.third);
        Ok((g.mass - 1.0).abs() <= 1e-6 && g.mean.abs() <= 1e-6 && min_p >= -1e-8 && var_gap <= 1e-3 && g.third < 0.0)
    }

    fn c10(&self, m: &mut Metrics) -> Result<bool> {
        let t = self.tables()?;
        let g = self.density()?;
        let low = scan(&ScanConfig::new(100.0, 100_000, SEED), false, t)?.ks(g, None)?;
        // the first 10^5 draws of the larger scan are exactly the n = 10^5 scan
        let high = self.window_scan()?.ks(g, Some(100_000))?;
        m.insert("ks_X100".into(), low);
        m.insert("ks_X400".into(), high);
        Ok(high <= 0.1 && high < low)
    }

    fn c11(&self, m: &mut Metrics) -> Result<bool> {
        let s = self.window_scan()?;
        let closed = self.second()?;
        let (m2, se2) = s.moment(2)?;
        let (m3, se3) = s.moment(3)?;
        m.insert("m2".into(), m2);
        m.insert("m2_se".into(), se2);
        m.insert("m2_closed".into(), closed);
        m.insert("m3".into(), m3);
        m.insert("m3_se".into(), se3);
        let ok2 = (m2 - closed).abs() <= (0.05 * closed).max(3.0 * se2);
        Ok(ok2 && m3 + 3.0 * se3 < 0.0)
    }

    fn c12(&self, m: &mut Metrics) -> Result<bool> {
        let here = current_threads();
        let other = if here > 1 { 1 } else { 3 };
        let a = self.deterministic_bundle()?;
        let b = with_threads(other, || self.deterministic_bundle())??;
        m.insert("threads_a".into(), here as f64);
        m.insert("threads_b".into(), other as f64);
        m.insert("bytes".into(), a.len() as f64);
        Ok(a == b)
    }

    /// Serialized results of the quick subset plus a few parallel workloads,
    /// as written to a result file.
    pub fn deterministic_bundle(&self) -> Result<String> {
        let report = self.run(&QUICK);
        let t = self.tables()?;
        let s = scan(&ScanConfig::new(60.0, 4000, SEED ^ 12), true, t)?;
        let xs = sample_points(&ScanConfig::new(60.0, 300, SEED ^ 13))?;
        let rows = residual_scan(&xs, &SeriesConfig::for_window(60.0)?, t)?;
        let model = CharModel::build(ModelConfig { m_cutoff: 600, sigma_cal: 4.0 }, t)?;
        let sigmas: Vec<f64> = (0..96).map(|i| i as f64 / 32.0).collect();
        let profile = model.profile(&sigmas)?;
        let bundle = serde_json::json!({
            "report": report,
            "scan": s,
            "residuals": rows,
            "profile": profile,
        });
        Ok(serde_json::to_string(&bundle).expect("bundle serializes"))
    }
}

fn c3(m: &mut Metrics) -> Result<bool> {
    let exact = PI * PI / 2.0;
    let taylor = 2.0 * taylor_coeffs(61)?.sum();
    let quad = vol_ball_radial_quadrature(1_000_000);
    m.insert("taylor_gap".into(), (taylor - exact).abs());
    m.insert("quadrature_gap".into(), (quad - exact).abs());
    Ok((taylor - exact).abs() <= 1e-9 && (quad - exact).abs() <= 1e-10)
}

#[cfg(feature = "parallel")]
fn current_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn current_threads() -> usize {
    1
}

/// Runs `ids` (all criteria when `quick` is false) on a fresh suite.
pub fn run_suite(quick: bool) -> Report {
    let suite = Suite::new();
    if quick {
        let mut ids = QUICK.to_vec();
        ids.push(12);
        suite.run(&ids)
    } else {
        suite.run(&ALL)
    }
}
