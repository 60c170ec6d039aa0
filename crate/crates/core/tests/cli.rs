use std::path::Path;
use std::process::Command;

use cygan::cli::run_with_io;
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cygan").chain(args.iter().copied());
    let code = run_with_io(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(name: &str, text: &str) -> Value {
    let v: Value = serde_json::from_str(text).unwrap();
    let s = schema(name);
    if let Err(e) = s.validate(&v) {
        panic!("{name}: {e}");
    }
    v
}

/// Rows of a CSV with `#` provenance lines, plus the header.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    assert!(text.starts_with("# cygan "));
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn count_prints_n1() {
    assert_eq!(run(&["count", "--x", "1"]), (0, "n1=7\n".into(), String::new()));
    assert_eq!(run(&["count", "--x", "1", "--brute"]).1, "n1=7\n");
    let (code, out, _) = run(&["count", "--x", "2.5", "--format", "json"]);
    assert_eq!(code, 0);
    assert_valid("count", &out);
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = run(&["count", "--x"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));
    assert_eq!(run(&["nonsense"]).0, 1);
    assert_eq!(run(&["count"]).0, 1);
    assert_eq!(run(&["count", "--x", "-3"]).0, 1);
    assert_eq!(run(&["acceptance", "--criteria", "13"]).0, 1);
    assert_eq!(run(&["sieve", "--limit", "0"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sieve settings\nlimit = 6\n").unwrap();
    let c = cfg.to_str().unwrap();
    let (_, rows) = csv_rows(&run(&["sieve", "--config", c]).1);
    assert_eq!(rows.len(), 6);
    let (_, rows) = csv_rows(&run(&["sieve", "--config", c, "--limit", "3"]).1);
    assert_eq!(rows.len(), 3);
    std::fs::write(&cfg, "limit=6\nlimt=7\n").unwrap();
    let (code, _, err) = run(&["sieve", "--config", c]);
    assert_eq!(code, 1);
    assert!(err.contains("limt"));
}

#[test]
fn sieve_csv_and_json() {
    let (code, out, _) = run(&["sieve", "--limit", "12"]);
    assert_eq!(code, 0);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["m", "r2", "mu", "core", "k"]);
    assert_eq!(rows[11], ["12", "0", "0", "3", "2"]);
    assert!(out.contains("# config: limit=12"));
    let v = assert_valid("sieve", &run(&["sieve", "--limit", "12", "--format", "json"]).1);
    assert_eq!(v["rows"][4]["r2"], 8);
}

#[test]
fn scan_and_voronoi_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("scan.csv");
    let f = f.to_str().unwrap();
    assert_eq!(run(&["scan", "--x-min", "10", "--x-max", "20", "--samples", "25", "--seed", "4", "--out", f]).0, 0);
    let text = std::fs::read_to_string(f).unwrap();
    assert!(text.contains("# seed: 4"));
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, ["x", "n1", "e_hat", "t_rem"]);
    assert_eq!(rows.len(), 25);
    assert_valid("scan", &run(&["scan", "--x-min", "1", "--x-max", "3", "--samples", "5", "--format", "json"]).1);

    let (header, rows) = csv_rows(&run(&["voronoi-check", "--X", "15", "--samples", "10", "--seed", "2"]).1);
    assert_eq!(header, ["x", "e_hat", "series", "t_rem", "residual"]);
    assert_eq!(rows.len(), 10);
    assert_valid("voronoi-check", &run(&["voronoi-check", "--X", "15", "--samples", "10", "--format", "json", "--out", "-"]).1);
}

#[test]
fn profile_and_moments_agree() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.csv");
    let f = f.to_str().unwrap();
    assert_eq!(run(&["profile", "--out", f]).0, 0);
    let (header, rows) = csv_rows(&std::fs::read_to_string(f).unwrap());
    assert_eq!(header, ["alpha", "p", "cdf"]);
    assert_eq!(rows.len(), 4097);
    let side = assert_valid("profile-summary", &std::fs::read_to_string(format!("{f}.json")).unwrap());

    let (code, out, _) = run(&["moments", "--j-max", "2"]);
    assert_eq!(code, 0);
    let m = assert_valid("moments", &out);
    let v2 = m["2"]["value"].as_f64().unwrap();
    let var = side["variance"].as_f64().unwrap();
    assert!(((v2 - var) / var).abs() <= 1e-3);
    assert_eq!(m["1"]["value"].as_f64().unwrap(), 0.0);

    let small = run(&["profile", "--table-limit", "200000", "--m-cutoff", "2000", "--n-alpha", "257", "--format", "json"]).1;
    assert_valid("profile", &small);
}

#[test]
fn empirical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("e.csv");
    let f = f.to_str().unwrap();
    let args = ["empirical", "--X", "20", "--samples", "300", "--seed", "5", "--j-max", "3", "--out", f];
    assert_eq!(run(&args).0, 0);
    let (header, rows) = csv_rows(&std::fs::read_to_string(f).unwrap());
    assert_eq!(header, ["x", "e_hat"]);
    assert_eq!(rows.len(), 300);
    let s = assert_valid("empirical-summary", &std::fs::read_to_string(format!("{f}.json")).unwrap());
    assert!(s["moments"]["3"].is_number());
    let j = run(&["empirical", "--X", "20", "--samples", "50", "--estimator", "stratified", "--format", "json"]).1;
    assert_valid("empirical", &j);
    assert_eq!(run(&["empirical", "--X", "20", "--estimator", "sobol"]).0, 1);
}

#[test]
fn acceptance_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.json");
    let f = f.to_str().unwrap();
    let (code, out, _) = run(&["acceptance", "--criteria", "3,2", "--out", f]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("criterion")).count(), 2);
    let v = assert_valid("acceptance", &std::fs::read_to_string(f).unwrap());
    assert_eq!(v["passed"], true);
    assert_eq!(v["criteria"][0]["id"], 3);
}

#[test]
fn binary_output_independent_of_threads() {
    let exe = env!("CARGO_BIN_EXE_cygan");
    let go = |threads: &str| {
        let o = Command::new(exe)
            .args(["voronoi-check", "--X", "30", "--samples", "200", "--seed", "8"])
            .env("THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(go("1"), go("3"));
    let flag = Command::new(exe).args(["count", "--x", "1", "--threads", "2"]).env("THREADS", "x").output().unwrap();
    assert_eq!(flag.status.code(), Some(0));
    let bad = Command::new(exe).args(["count", "--x", "1"]).env("THREADS", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
