//! Command-line front-end.
//!
//! Settings resolve as flag, then config file (`key=value` lines), then the
//! built-in default. `THREADS` in the environment stands in for a missing
//! `--threads`. Exit status: 0 on success, 1 on usage or domain errors, 2 when
//! the acceptance suite has a failing criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::acceptance::{Suite, ALL, QUICK};
use crate::arith::{build_tables, ArithTables};
use crate::empirical::{sample_points, scan, Estimator, ScanConfig};
use crate::error::Error;
use crate::lattice::{count_bruteforce, error_term};
use crate::moments::{default_m_cutoff, theoretical_moment, J_MAX};
use crate::numeric::{par_map, with_threads};
use crate::profile::{decay_diagnostic, density, CharModel, DensityGrid, DensitySpec, ModelConfig};
use crate::voronoi::{residual_scan, rms, SeriesConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Table limit for everything that touches the limit law.
const WIDE_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

impl Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "cygan", version, about = "Lattice points in Cygan-Koranyi balls: counts, error term, limit law")]
struct Cli {
    /// Plain `key=value` file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to $THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Output file, `-` for standard output.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Dump r2, mu and the square-free split for m = 1..=limit.
    Sieve {
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Exact lattice count in the ball of radius x.
    Count {
        #[arg(long)]
        x: Option<f64>,
        /// Count by direct enumeration instead.
        #[arg(long)]
        brute: bool,
    },
    /// Error term at random radii in [x-min, x-max].
    Scan {
        #[arg(long)]
        x_min: Option<f64>,
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Residual of the truncated series on [X, 2X].
    VoronoiCheck {
        #[arg(long = "X")]
        x_window: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Series cutoff, default ceil(X^2).
        #[arg(long)]
        m_cutoff: Option<u64>,
    },
    /// Limiting density on [-A, A].
    Profile {
        #[arg(long)]
        alpha_extent: Option<f64>,
        #[arg(long)]
        n_alpha: Option<usize>,
        #[arg(long)]
        m_cutoff: Option<usize>,
        #[arg(long)]
        table_limit: Option<usize>,
        /// Summary JSON path, default `<out>.json`.
        #[arg(long)]
        sidecar: Option<String>,
    },
    /// Moments of the limit law from the composition expansion.
    Moments {
        #[arg(long)]
        j_max: Option<u32>,
        #[arg(long)]
        rel_tol: Option<f64>,
        #[arg(long)]
        m_cutoff: Option<u64>,
        #[arg(long)]
        table_limit: Option<usize>,
    },
    /// Window statistics of the error term on [X, 2X].
    Empirical {
        #[arg(long = "X")]
        x_window: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        j_max: Option<u32>,
        #[arg(long)]
        estimator: Option<String>,
        /// Summary JSON path, default `<out>.json`.
        #[arg(long)]
        sidecar: Option<String>,
    },
    /// Run the acceptance criteria.
    Acceptance {
        /// Sub-minute subset plus the determinism check.
        #[arg(long)]
        quick: bool,
        /// Comma-separated criterion numbers.
        #[arg(long)]
        criteria: Option<String>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Sieve { .. } => "sieve",
            Cmd::Count { .. } => "count",
            Cmd::Scan { .. } => "scan",
            Cmd::VoronoiCheck { .. } => "voronoi-check",
            Cmd::Profile { .. } => "profile",
            Cmd::Moments { .. } => "moments",
            Cmd::Empirical { .. } => "empirical",
            Cmd::Acceptance { .. } => "acceptance",
        }
    }
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Lib(Error),
    Acceptance,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type CliResult<T> = Result<T, Fail>;

/// Resolved settings of one run. `echo` is what goes into the provenance.
struct Params {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    echo: BTreeMap<String, String>,
}

impl Params {
    fn load(path: Option<&PathBuf>) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Fail::Usage(format!("cannot read config {}: {e}", p.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Fail::Usage(format!("{}:{}: expected key=value", p.display(), i + 1)))?;
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self { file, used: BTreeSet::new(), echo: BTreeMap::new() })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e| Fail::Usage(format!("config key {key}: {e}"))),
        }
    }

    fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let from_file = self.from_file(key)?;
        let v = flag.or(from_file);
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(match self.opt(key, flag)? {
            Some(v) => v,
            None => {
                self.echo.insert(key.to_string(), default.to_string());
                default
            }
        })
    }

    fn need<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| Fail::Usage(format!("missing required --{key}")))
    }

    fn flag(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let v = flag || self.from_file::<bool>(key)?.unwrap_or(false);
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Fail::Usage(format!("unknown config keys: {unknown:?}")))
        }
    }
}

/// Where output goes and in which shape.
struct Sink {
    out: Option<String>,
    format: Format,
}

impl Sink {
    fn to_stdout(&self) -> bool {
        matches!(self.out.as_deref(), None | Some("-"))
    }

    fn write(&self, bytes: &[u8], stdout: &mut (dyn Write + Send)) -> CliResult<()> {
        match self.out.as_deref() {
            None | Some("-") => stdout.write_all(bytes).map_err(|e| Fail::Lib(e.into())),
            Some(path) => std::fs::write(path, bytes).map_err(|e| Fail::Lib(Error::Io(format!("{path}: {e}")))),
        }
    }

    /// Sidecar path: explicit, else `<out>.json` for file output.
    fn sidecar(&self, explicit: Option<String>) -> Option<String> {
        explicit.or_else(|| if self.to_stdout() { None } else { self.out.as_ref().map(|o| format!("{o}.json")) })
    }
}

struct Provenance {
    command: &'static str,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
}

impl Provenance {
    fn csv_header(&self) -> String {
        let mut s = format!("# cygan {VERSION}\n# command: {}\n", self.command);
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed: {seed}\n"));
        }
        let cfg: Vec<String> = self.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!("# config: {}\n", cfg.join(" ")));
        s
    }

    fn json(&self) -> Value {
        json!({ "tool": "cygan", "version": VERSION, "command": self.command, "seed": self.seed, "config": self.config })
    }
}

fn csv_bytes(prov: &Provenance, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut buf = prov.csv_header().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Fail::Lib(Error::Io(e.to_string()));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        w.flush().map_err(|e| Fail::Lib(e.into()))?;
    }
    Ok(buf)
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s.into_bytes()
}

fn num(v: f64) -> String {
    // shortest round-trip form
    format!("{v:?}")
}

fn positive(key: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Fail::Usage(format!("--{key} must be positive, got {v}")))
    }
}

fn tables_for(limit: usize) -> CliResult<ArithTables> {
    Ok(build_tables(limit)?)
}

fn limit_density(table_limit: usize, alpha_extent: f64, n_alpha: usize, m_cutoff: usize) -> CliResult<(ArithTables, DensityGrid)> {
    let t = tables_for(table_limit)?;
    let model = CharModel::build(ModelConfig { m_cutoff, ..ModelConfig::default() }, &t)?;
    let g = density(&DensitySpec::with_extent(alpha_extent, n_alpha), &model)?;
    Ok((t, g))
}

/// Runs the command line `argv` (program name first) with the process
/// standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with_io(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with_io<I, T>(argv: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let mut text = e.render().to_string();
            if code == 1 && !text.contains("Usage:") {
                text.push_str(&format!("\n{}\n", Cli::command().render_usage()));
            }
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(Fail::Acceptance) => 2,
        Err(Fail::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\nRun `cygan --help` for usage.");
            1
        }
        Err(Fail::Lib(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> CliResult<()> {
    let mut p = Params::load(cli.config.as_ref())?;
    let env_threads = match std::env::var("THREADS") {
        Ok(s) if cli.threads.is_none() && !s.trim().is_empty() => {
            Some(s.trim().parse::<usize>().map_err(|e| Fail::Usage(format!("THREADS: {e}")))?)
        }
        _ => None,
    };
    let file_threads = p.from_file::<usize>("threads")?;
    let threads = cli.threads.or(env_threads).or(file_threads).unwrap_or(0);
    if cli.threads == Some(0) || env_threads == Some(0) || file_threads == Some(0) {
        return Err(Fail::Usage("threads must be a positive integer".into()));
    }
    let default_format = match cli.cmd {
        Cmd::Moments { .. } | Cmd::Acceptance { .. } => None,
        _ => Some(Format::Csv),
    };
    let format_file = p.from_file::<Format>("format")?;
    let out_file = p.from_file::<String>("out")?;
    let sink = Sink { out: cli.out.clone().or(out_file), format: cli.format.or(format_file).or(default_format).unwrap_or(Format::Json) };
    let command = cli.cmd.name();
    with_threads(threads, || execute(cli.cmd, command, p, &sink, stdout, stderr)).map_err(Fail::Lib)?
}

fn execute(cmd: Cmd, command: &'static str, mut p: Params, sink: &Sink, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> CliResult<()> {
    match cmd {
        Cmd::Sieve { limit } => {
            let limit = p.get("limit", limit, 1000usize)?;
            p.finish()?;
            let prov = Provenance { command, seed: None, config: p.echo };
            let t = tables_for(limit)?;
            let row = |m: usize| {
                let (c, k) = t.sqfree_core(m);
                (m, t.r2(m), t.mu(m), c, k)
            };
            let bytes = match sink.format {
                Format::Csv => csv_bytes(
                    &prov,
                    &["m", "r2", "mu", "core", "k"],
                    (1..=limit).map(|m| {
                        let (m, r, mu, c, k) = row(m);
                        vec![m.to_string(), r.to_string(), mu.to_string(), c.to_string(), k.to_string()]
                    }),
                )?,
                Format::Json => {
                    let rows: Vec<Value> = (1..=limit)
                        .map(|m| {
                            let (m, r, mu, c, k) = row(m);
                            json!({ "m": m, "r2": r, "mu": mu, "core": c, "k": k })
                        })
                        .collect();
                    json_bytes(&json!({ "provenance": prov.json(), "rows": rows }))
                }
            };
            sink.write(&bytes, stdout)
        }

        Cmd::Count { x, brute } => {
            let x = positive("x", p.need("x", x)?)?;
            let brute = p.flag("brute", brute)?;
            p.finish()?;
            let prov = Provenance { command, seed: None, config: p.echo };
            let t = tables_for((x * x).floor() as usize + 1)?;
            let s = error_term(x, &t)?;
            let n1 = if brute { count_bruteforce(x)? } else { s.n1 };
            let bytes = match sink.format {
                Format::Json => json_bytes(&json!({ "provenance": prov.json(), "x": x, "n1": n1, "e_hat": s.e_hat, "t_rem": s.t_rem })),
                Format::Csv => format!("n1={n1}\n").into_bytes(),
            };
            sink.write(&bytes, stdout)
        }

        Cmd::Scan { x_min, x_max, samples, seed } => {
            let a = positive("x-min", p.need("x-min", x_min)?)?;
            let b = positive("x-max", p.need("x-max", x_max)?)?;
            let n = p.get("samples", samples, 1000usize)?;
            let seed = p.get("seed", seed, 1u64)?;
            p.finish()?;
            if a > b {
                return Err(Fail::Usage(format!("--x-min {a} exceeds --x-max {b}")));
            }
            let prov = Provenance { command, seed: Some(seed), config: p.echo };
            let t = tables_for((b * b).floor() as usize + 1)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..n).map(|_| a + (b - a) * rng.gen::<f64>()).collect();
            let rows = par_map(xs.len(), |i| error_term(xs[i], &t)).into_iter().collect::<Result<Vec<_>, _>>()?;
            let bytes = match sink.format {
                Format::Csv => csv_bytes(
                    &prov,
                    &["x", "n1", "e_hat", "t_rem"],
                    rows.iter().map(|r| vec![num(r.x), r.n1.to_string(), num(r.e_hat), num(r.t_rem)]),
                )?,
                Format::Json => {
                    let rows: Vec<Value> =
                        rows.iter().map(|r| json!({ "x": r.x, "n1": r.n1, "e_hat": r.e_hat, "t_rem": r.t_rem })).collect();
                    json_bytes(&json!({ "provenance": prov.json(), "rows": rows }))
                }
            };
            sink.write(&bytes, stdout)
        }

        Cmd::VoronoiCheck { x_window, samples, seed, m_cutoff } => {
            let x = positive("X", p.need("X", x_window)?)?;
            let n = p.get("samples", samples, 1000usize)?;
            let seed = p.get("seed", seed, 1u64)?;
            let mut cfg = SeriesConfig::for_window(x)?;
            cfg.m_cutoff = p.get("m-cutoff", m_cutoff, cfg.m_cutoff)?;
            p.finish()?;
            let prov = Provenance { command, seed: Some(seed), config: p.echo };
            let limit = ((4.0 * x * x).floor() as usize + 1).max(cfg.m_cutoff as usize);
            let t = tables_for(limit)?;
            let xs = sample_points(&ScanConfig::new(x, n, seed))?;
            let rows = residual_scan(&xs, &cfg, &t)?;
            let bytes = match sink.format {
                Format::Csv => csv_bytes(
                    &prov,
                    &["x", "e_hat", "series", "t_rem", "residual"],
                    rows.iter().map(|r| vec![num(r.x), num(r.e_hat), num(r.series), num(r.t_rem), num(r.residual)]),
                )?,
                Format::Json => json_bytes(&json!({
                    "provenance": prov.json(),
                    "rms_residual": rms(rows.iter().map(|r| r.residual)),
                    "rows": rows,
                })),
            };
            sink.write(&bytes, stdout)
        }

        Cmd::Profile { alpha_extent, n_alpha, m_cutoff, table_limit, sidecar } => {
            let a = positive("alpha-extent", p.get("alpha-extent", alpha_extent, 12.0)?)?;
            let n = p.get("n-alpha", n_alpha, 4097usize)?;
            let mc = p.get("m-cutoff", m_cutoff, ModelConfig::default().m_cutoff)?;
            let limit = p.get("table-limit", table_limit, WIDE_LIMIT)?;
            let sidecar = p.opt("sidecar", sidecar)?;
            p.finish()?;
            let prov = Provenance { command, seed: None, config: p.echo };
            let (t, g) = limit_density(limit, a, n, mc)?;
            let rho = match decay_diagnostic(&g, &t) {
                Ok(d) => json!(d.rho),
                Err(e) => {
                    let _ = writeln!(stderr, "warning: decay fit skipped: {e}");
                    Value::Null
                }
            };
            let summary = json!({
                "provenance": prov.json(),
                "mass": g.mass,
                "mean": g.mean,
                "variance": g.variance,
                "sigma_max": g.sigma_max,
                "m_cutoff": g.m_cutoff,
                "tail_l2": g.tail_l2,
                "rho_fit": rho,
            });
            match sink.format {
                Format::Csv => {
                    let rows = (0..g.alpha_grid.len()).map(|i| vec![num(g.alpha_grid[i]), num(g.p_values[i]), num(g.cdf[i])]);
                    sink.write(&csv_bytes(&prov, &["alpha", "p", "cdf"], rows)?, stdout)?;
                    if let Some(path) = sink.sidecar(sidecar) {
                        Sink { out: Some(path), format: Format::Json }.write(&json_bytes(&summary), stdout)?;
                    }
                    Ok(())
                }
                Format::Json => {
                    let mut v = summary;
                    v["alpha"] = json!(g.alpha_grid);
                    v["p"] = json!(g.p_values);
                    v["cdf"] = json!(g.cdf);
                    sink.write(&json_bytes(&v), stdout)
                }
            }
        }

        Cmd::Moments { j_max, rel_tol, m_cutoff, table_limit } => {
            let j_max = p.get("j-max", j_max, 4u32)?;
            let rel_tol = positive("rel-tol", p.get("rel-tol", rel_tol, 1e-6)?)?;
            let mc = p.opt("m-cutoff", m_cutoff)?;
            let limit = p.get("table-limit", table_limit, WIDE_LIMIT)?;
            p.finish()?;
            if j_max == 0 || j_max > J_MAX {
                return Err(Fail::Usage(format!("--j-max must lie in 1..={J_MAX}")));
            }
            let prov = Provenance { command, seed: None, config: p.echo };
            let t = tables_for(limit)?;
            let mut tables = Vec::new();
            for j in 1..=j_max {
                tables.push(theoretical_moment(j, mc.unwrap_or_else(|| default_m_cutoff(j)), rel_tol, &t)?);
            }
            let bytes = match sink.format {
                Format::Json => {
                    let mut v = serde_json::Map::new();
                    v.insert("provenance".into(), prov.json());
                    for m in &tables {
                        let comps: Vec<Value> =
                            m.per_composition.iter().map(|c| json!({ "composition": c.composition, "value": c.value })).collect();
                        v.insert(
                            m.j.to_string(),
                            json!({
                                "value": m.value,
                                "error_budget": m.error_budget,
                                "flagged": m.flagged,
                                "m_cutoff": m.m_cutoff,
                                "compositions": comps,
                            }),
                        );
                    }
                    json_bytes(&Value::Object(v))
                }
                Format::Csv => csv_bytes(
                    &prov,
                    &["j", "value", "error_budget", "flagged"],
                    tables.iter().map(|m| vec![m.j.to_string(), num(m.value), num(m.error_budget), m.flagged.to_string()]),
                )?,
            };
            sink.write(&bytes, stdout)
        }

        Cmd::Empirical { x_window, samples, seed, j_max, estimator, sidecar } => {
            let x = positive("X", p.need("X", x_window)?)?;
            let n = p.get("samples", samples, 10_000usize)?;
            let seed = p.get("seed", seed, 1u64)?;
            let j_max = p.get("j-max", j_max, 4u32)?;
            let est: Estimator = p.get("estimator", estimator, "uniform".to_string())?.parse()?;
            let sidecar = p.opt("sidecar", sidecar)?;
            p.finish()?;
            if j_max == 0 || j_max > 8 {
                return Err(Fail::Usage("--j-max must lie in 1..=8".into()));
            }
            let prov = Provenance { command, seed: Some(seed), config: p.echo };
            let cfg = ScanConfig { estimator: est, ..ScanConfig::new(x, n, seed) };
            let limit = (cfg.required_limit() as usize).max(WIDE_LIMIT);
            let (t, g) = limit_density(limit, 12.0, 4097, ModelConfig::default().m_cutoff)?;
            let s = scan(&cfg, true, &t)?;
            let mut moments = serde_json::Map::new();
            let mut errors = serde_json::Map::new();
            for j in 1..=j_max {
                let (m, se) = s.moment(j)?;
                moments.insert(j.to_string(), json!(m));
                errors.insert(j.to_string(), json!(se));
            }
            let (rms_t, rms_se) = s.remainder_ms()?;
            let summary = json!({
                "provenance": prov.json(),
                "moments": moments,
                "std_errors": errors,
                "ks": s.ks(&g, None)?,
                "remainder_ms": rms_t,
                "remainder_ms_se": rms_se,
            });
            match sink.format {
                Format::Csv => {
                    let rows = s.x.iter().zip(&s.e_hat).map(|(a, b)| vec![num(*a), num(*b)]);
                    sink.write(&csv_bytes(&prov, &["x", "e_hat"], rows)?, stdout)?;
                    if let Some(path) = sink.sidecar(sidecar) {
                        Sink { out: Some(path), format: Format::Json }.write(&json_bytes(&summary), stdout)?;
                    }
                    Ok(())
                }
                Format::Json => {
                    let mut v = summary;
                    v["x"] = json!(s.x);
                    v["e_hat"] = json!(s.e_hat);
                    sink.write(&json_bytes(&v), stdout)
                }
            }
        }

        Cmd::Acceptance { quick, criteria } => {
            let quick = p.flag("quick", quick)?;
            let list = p.opt("criteria", criteria)?;
            p.finish()?;
            let ids: Vec<u32> = match list {
                Some(s) => s
                    .split(',')
                    .map(|v| v.trim().parse::<u32>().ok().filter(|id| ALL.contains(id)))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Fail::Usage(format!("--criteria takes numbers in 1..=12, got {s:?}")))?,
                None if quick => QUICK.iter().copied().chain([12]).collect(),
                None => ALL.to_vec(),
            };
            let suite = Suite::new();
            let mut results = Vec::new();
            // the table goes wherever the JSON report does not
            let table: &mut (dyn Write + Send) = if sink.out.as_deref() == Some("-") { stderr } else { stdout };
            for id in ids {
                let r = suite.run_one(id);
                let _ = writeln!(table, "{}", r.line());
                results.push(r);
            }
            let report = crate::acceptance::Report { criteria: results };
            let passed = report.passed();
            let _ = writeln!(table, "{}", if passed { "all criteria passed" } else { "some criteria FAILED" });
            if let Some(out) = &sink.out {
                let prov = Provenance { command, seed: None, config: p.echo };
                let v = json!({ "provenance": prov.json(), "passed": passed, "criteria": report.criteria });
                let bytes = json_bytes(&v);
                if out == "-" {
                    stdout.write_all(&bytes).map_err(|e| Fail::Lib(e.into()))?;
                } else {
                    sink.write(&bytes, stdout)?;
                }
            }
            if passed {
                Ok(())
            } else {
                Err(Fail::Acceptance)
            }
        }
    }
}
