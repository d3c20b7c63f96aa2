use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const PUT: &str = r#"
[instance]
name = "american_put"
strike = 1.0

[grid]
T = 1.0
N = 4
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbsvie"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], cfgs: &[&Path], out: &Path) -> Output {
    let mut c = bin();
    c.args(args);
    for cfg in cfgs {
        c.arg("--config").arg(cfg);
    }
    c.arg("--out").arg(out);
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_artifacts_that_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "put.toml", PUT);
    let out = tmp.path().join("out");
    let o = run(&["solve"], &[&cfg], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let doc = json(out.join("solution.json"));
    assert_eq!(doc["engine"], "lattice");
    assert_eq!(doc["instance"]["name"], "american_put");
    assert_eq!(doc["instance"]["params"]["strike"], 1.0);
    assert_eq!(doc["grid"]["N"], 4);
    assert_eq!(doc["converged"], true);
    let hist = doc["residual_history"].as_array().unwrap();
    assert_eq!(hist.len() as u64, doc["iterations"].as_u64().unwrap());

    // y_diag.csv must agree bit-for-bit with the JSON solution.
    let y0 = doc["y0"].as_f64().unwrap();
    let csv = fs::read_to_string(out.join("y_diag.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("anchor_time,node_index,state,y"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * 6 / 2);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), y0);
    let diag = &doc["solution"]["y_diag"];
    let last = rows.last().unwrap();
    assert_eq!(last[0].parse::<f64>().unwrap(), 1.0);
    let terminal = diag[4]["values"][4].as_f64().unwrap();
    assert_eq!(last[3].parse::<f64>().unwrap(), terminal);
}

#[test]
fn solve_output_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "put.toml", PUT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["solve"], &[&cfg], &a)), 0);
    assert_eq!(code(&run(&["solve"], &[&cfg], &b)), 0);
    for f in ["y_diag.csv", "solution.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn malformed_config_exits_1_without_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for (i, body) in [
        "this is not toml [".to_string(),
        PUT.replace("strike", "strik"),
        PUT.replace("N = 4", "N = -3"),
        format!("{PUT}\n[picard]\nmode = \"windowed\"\ndelta = 0.3\n"),
    ]
    .iter()
    .enumerate()
    {
        let cfg = write(tmp.path(), &format!("bad{i}.toml"), body);
        let o = run(&["solve"], &[&cfg], &out);
        assert_eq!(code(&o), 1, "{body}");
        assert!(!out.exists(), "artifacts written for {body}");
    }
    let o = run(&["solve"], &[&tmp.path().join("missing.toml")], &out);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&bin().arg("solve").arg("--engine").arg("gpu").output().unwrap()), 1);
}

#[test]
fn no_convergence_exits_2_with_history() {
    let tmp = TempDir::new().unwrap();
    let body = r#"
[instance]
name = "linear_z"
a = 0.5

[grid]
T = 1.0
N = 10

[picard]
max_iters = 2
tolerance = 1e-14
"#;
    let cfg = write(tmp.path(), "lz.toml", body);
    let out = tmp.path().join("out");
    let o = run(&["solve"], &[&cfg], &out);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no convergence"), "{err}");
    let rep = json(out.join("residuals.json"));
    assert_eq!(rep["residual_history"].as_array().unwrap().len(), 2);
    assert!(!out.join("solution.json").exists());
}

#[test]
fn oracle_check_passes_and_respects_max_n() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "put.toml", PUT);
    let out = tmp.path().join("out");
    let o = run(&["oracle-check"], &[&cfg], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(out.join("report.json"));
    assert_eq!(rep["passed"], true);
    assert!(rep["report"]["max_deviation"].as_f64().unwrap() <= 1e-10);

    let o = run(&["oracle-check", "--max-n", "3"], &[&cfg], &tmp.path().join("o2"));
    assert_eq!(code(&o), 1);
}

#[test]
fn compare_orders_and_detects_bad_data() {
    let tmp = TempDir::new().unwrap();
    let lo = write(tmp.path(), "lo.toml", PUT);
    let hi = write(tmp.path(), "hi.toml", &PUT.replace("[grid]", "driver_shift = 0.1\nterminal_shift = 0.05\n\n[grid]"));
    let out = tmp.path().join("out");
    let o = run(&["compare"], &[&lo, &hi], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(out.join("compare.json"));
    assert_eq!(rep["holds"], true);
    assert!(rep["report"]["max_excess"].as_f64().unwrap() <= 0.0);

    // Swapped order: the data are not ordered.
    let o = run(&["compare"], &[&hi, &lo], &tmp.path().join("swap"));
    assert_eq!(code(&o), 3);
    assert_eq!(json(tmp.path().join("swap/compare.json"))["ordered_data"], false);

    let other = write(tmp.path(), "grid.toml", &PUT.replace("N = 4", "N = 5"));
    assert_eq!(code(&run(&["compare"], &[&lo, &other], &tmp.path().join("g"))), 1);
    assert_eq!(code(&run(&["compare"], &[&lo], &tmp.path().join("g"))), 1);
}

#[test]
fn stop_writes_frontier_and_report() {
    let tmp = TempDir::new().unwrap();
    let body = r#"
[instance]
name = "hyperbolic_discount"

[grid]
T = 1.0
N = 12
"#;
    let cfg = write(tmp.path(), "hyp.toml", body);
    let out = tmp.path().join("out");
    let o = run(&["stop"], &[&cfg], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("frontier.csv")).unwrap();
    assert!(csv.starts_with("anchor_time,time,critical_state_low,critical_state_high"));
    let rep = json(out.join("inconsistency.json"));
    assert_eq!(rep["premature_k"], 0.0);
    assert!(rep["report"]["max_optimality_defect"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn verify_assumptions_flags_violations() {
    let tmp = TempDir::new().unwrap();
    let good = write(tmp.path(), "put.toml", PUT);
    let o = run(&["verify-assumptions"], &[&good], &tmp.path().join("a"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(tmp.path().join("a/assumptions.json"))["passed"], true);

    let bad = write(tmp.path(), "bad.toml", &PUT.replace("[grid]", "obstacle_shift = 0.5\n\n[grid]"));
    let o = run(&["verify-assumptions"], &[&bad], &tmp.path().join("b"));
    assert_eq!(code(&o), 3);
    assert_eq!(json(tmp.path().join("b/assumptions.json"))["passed"], false);
}

#[test]
fn mc_engine_solves_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let body = format!("{PUT}\n[mc]\nn_paths = 4000\nseed = 7\n");
    let cfg = write(tmp.path(), "mc.toml", &body);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["solve", "--engine", "mc"], &[&cfg], d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("y_diag.csv")).unwrap(), fs::read(b.join("y_diag.csv")).unwrap());
    let doc = json(a.join("solution.json"));
    assert_eq!(doc["engine"], "mc");
    assert!(doc["y0_standard_error"].as_f64().unwrap() > 0.0);

    let o = run(&["stop", "--engine", "mc"], &[&cfg], &tmp.path().join("c"));
    assert_eq!(code(&o), 1);
}
