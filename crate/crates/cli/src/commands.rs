use std::path::PathBuf;

use rbsvie::compare::{comparison_of_solutions, OrderedPair};
use rbsvie::grid::{build_lattice, Lattice};
use rbsvie::instances::{self, Param};
use rbsvie::mc::{simulate, solve_mc};
use rbsvie::oracle::oracle_sweep;
use rbsvie::stopping::{
    compare_with_diagonal, extract_frontier, frontier_rows, inconsistency_report, premature_k, DEFAULT_ATOL,
};
use rbsvie::volterra::{solve as solve_lattice, Solution};
use rbsvie::Error;
use serde_json::{json, Value};

use crate::config::{Engine, RunConfig};
use crate::output::{ensure_dir, real, write_csv, write_json};
use crate::Status;

pub const DEFAULT_MAX_N: usize = 5;
const ASSUMPTION_SAMPLES: usize = 2000;

pub struct Options {
    pub configs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub engine: Option<Engine>,
    pub max_n: Option<usize>,
}

fn fail(status: Status, msg: impl std::fmt::Display) -> Status {
    eprintln!("rbsvie: {msg}");
    status
}

fn load_one(opts: &Options) -> Result<RunConfig, Status> {
    match opts.configs.as_slice() {
        [path] => RunConfig::load(path, opts.engine, opts.out.as_deref()).map_err(|e| fail(Status::Config, e)),
        [] => Err(fail(Status::Config, "--config PATH is required")),
        _ => Err(fail(Status::Config, "this command takes a single --config")),
    }
}

fn require_lattice_engine(cfg: &RunConfig, command: &str) -> Result<(), Status> {
    if cfg.engine == Engine::Mc {
        return Err(fail(Status::Config, format!("`{command}` only supports the lattice engine")));
    }
    Ok(())
}

fn lattice_of(cfg: &RunConfig) -> Result<Lattice, Status> {
    build_lattice(&cfg.grid, cfg.spec.x0, &cfg.spec.dynamics).map_err(|e| match e {
        Error::Unsupported(m) => fail(Status::Config, format!("{m}; use --engine mc")),
        e => fail(Status::Config, e),
    })
}

fn params_json(cfg: &RunConfig) -> Value {
    let map: serde_json::Map<String, Value> = cfg
        .params
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Param::Num(x) => json!(x),
                Param::Text(s) => json!(s),
            };
            (k.clone(), v)
        })
        .collect();
    Value::Object(map)
}

fn header(cfg: &RunConfig) -> Value {
    json!({
        "instance": { "name": cfg.instance_name, "params": params_json(cfg) },
        "grid": { "T": cfg.grid.horizon(), "N": cfg.grid.steps() },
        "engine": cfg.engine.tag(),
        "picard": cfg.picard,
    })
}

/// Maps a solver error to an exit status, writing the residual report on non-convergence.
fn solver_failure(cfg: &RunConfig, err: Error) -> Status {
    match err {
        Error::NoConvergence {
            iters,
            last_residual,
            residual_history,
        } => {
            eprintln!("rbsvie: no convergence after {iters} iterations (last residual {last_residual:e})");
            for (k, r) in residual_history.iter().enumerate() {
                eprintln!("  iteration {:>4}: residual {r:e}", k + 1);
            }
            let report = json!({
                "converged": false,
                "iterations": iters,
                "last_residual": last_residual,
                "residual_history": residual_history,
            });
            if ensure_dir(&cfg.out_dir).is_ok() {
                let _ = write_json(&cfg.out_dir, "residuals.json", &report);
            }
            Status::NoConvergence
        }
        e => fail(Status::Config, e),
    }
}

fn solve_with(cfg: &RunConfig, lat: &Lattice) -> Result<Solution, Status> {
    let sol = solve_lattice(lat, &cfg.spec, &cfg.picard).map_err(|e| solver_failure(cfg, e))?;
    for w in &sol.warnings {
        eprintln!("rbsvie: warning: {w}");
    }
    Ok(sol)
}

fn io(r: Result<(), String>) -> Result<(), Status> {
    r.map_err(|e| fail(Status::Config, e))
}

pub fn solve(opts: &Options) -> Status {
    match run_solve(opts) {
        Ok(()) => Status::Ok,
        Err(s) => s,
    }
}

fn run_solve(opts: &Options) -> Result<(), Status> {
    let cfg = load_one(opts)?;
    match cfg.engine {
        Engine::Lattice => {
            let lat = lattice_of(&cfg)?;
            let sol = solve_with(&cfg, &lat)?;
            let frontier = extract_frontier(&sol, &lat, &cfg.spec, DEFAULT_ATOL).map_err(|e| fail(Status::Config, e))?;
            let anchor0: Vec<_> = frontier_rows(&frontier, &lat)
                .into_iter()
                .filter(|r| r.anchor_time == 0.0)
                .collect();
            let anchor_dependent = (1..=lat.steps()).any(|i| frontier.region_difference(0, i) > 0);
            let mut doc = header(&cfg);
            doc["converged"] = json!(true);
            doc["iterations"] = json!(sol.iterations);
            doc["residual_history"] = json!(sol.residual_history);
            doc["y0"] = json!(sol.y0());
            doc["warnings"] = json!(sol.warnings);
            doc["frontier_summary"] = json!({
                "atol": DEFAULT_ATOL,
                "anchor_dependent": anchor_dependent,
                "anchor0": anchor0,
            });
            doc["solution"] = serde_json::to_value(&sol).map_err(|e| fail(Status::Config, e))?;
            io(ensure_dir(&cfg.out_dir))?;
            io(write_json(&cfg.out_dir, "solution.json", &doc))?;
            let rows = (0..=lat.steps()).flat_map(|i| {
                let (t, xs, ys) = (lat.time(i), lat.x(i), sol.y_diag[i].values());
                (0..=i).map(move |k| vec![real(t), k.to_string(), real(xs[k]), real(ys[k])])
            });
            io(write_csv(&cfg.out_dir, "y_diag.csv", &["anchor_time", "node_index", "state", "y"], rows))?;
        }
        Engine::Mc => {
            let bundle = simulate(&cfg.grid, &cfg.spec, cfg.mc.n_paths, cfg.mc.seed).map_err(|e| fail(Status::Config, e))?;
            let sol = solve_mc(&bundle, &cfg.spec, cfg.mc.basis, &cfg.picard).map_err(|e| solver_failure(&cfg, e))?;
            let mut doc = header(&cfg);
            doc["converged"] = json!(true);
            doc["iterations"] = json!(sol.iterations);
            doc["residual_history"] = json!(sol.residual_history);
            doc["y0"] = json!(sol.y0);
            doc["y0_standard_error"] = json!(sol.y0_se);
            doc["frontier_summary"] = json!({
                "anchor0": sol.frontier.iter().filter(|r| r.anchor_time == 0.0).collect::<Vec<_>>(),
            });
            doc["solution"] = serde_json::to_value(&sol).map_err(|e| fail(Status::Config, e))?;
            io(ensure_dir(&cfg.out_dir))?;
            io(write_json(&cfg.out_dir, "solution.json", &doc))?;
            let row = vec![real(0.0), "0".to_string(), real(cfg.spec.x0), real(sol.y0)];
            io(write_csv(&cfg.out_dir, "y_diag.csv", &["anchor_time", "node_index", "state", "y"], [row]))?;
            let grid = &cfg.grid;
            let rows = sol
                .y_mean
                .iter()
                .enumerate()
                .map(|(i, y)| vec![real(grid.time(i)), real(*y)]);
            io(write_csv(&cfg.out_dir, "y_mean.csv", &["anchor_time", "y_mean"], rows))?;
        }
    }
    Ok(())
}

pub fn oracle_check(opts: &Options) -> Status {
    let run = || -> Result<Status, Status> {
        let cfg = load_one(opts)?;
        require_lattice_engine(&cfg, "oracle-check")?;
        let max_n = opts.max_n.unwrap_or(DEFAULT_MAX_N);
        if cfg.grid.steps() > max_n {
            return Err(fail(
                Status::Config,
                format!("N = {} exceeds the enumeration bound --max-n {max_n}", cfg.grid.steps()),
            ));
        }
        let lat = lattice_of(&cfg)?;
        let sol = solve_with(&cfg, &lat)?;
        let rep = oracle_sweep(&lat, &cfg.spec, &sol).map_err(|e| fail(Status::Config, e))?;
        let mut doc = header(&cfg);
        doc["passed"] = json!(rep.passed());
        doc["report"] = serde_json::to_value(&rep).map_err(|e| fail(Status::Config, e))?;
        io(ensure_dir(&cfg.out_dir))?;
        io(write_json(&cfg.out_dir, "report.json", &doc))?;
        if rep.nodes_skipped > 0 {
            eprintln!("rbsvie: {} nodes skipped (subtree too large to enumerate)", rep.nodes_skipped);
        }
        if rep.passed() {
            Ok(Status::Ok)
        } else {
            Ok(fail(
                Status::Verification,
                format!("max deviation {:e} exceeds {:e}", rep.max_deviation, rep.tolerance),
            ))
        }
    };
    run().unwrap_or_else(|s| s)
}

pub fn compare(opts: &Options) -> Status {
    let run = || -> Result<Status, Status> {
        let [lo_path, hi_path] = opts.configs.as_slice() else {
            return Err(fail(Status::Config, "compare takes --config LOWER --config UPPER"));
        };
        let lo = RunConfig::load(lo_path, opts.engine, opts.out.as_deref()).map_err(|e| fail(Status::Config, e))?;
        let hi = RunConfig::load(hi_path, opts.engine, opts.out.as_deref()).map_err(|e| fail(Status::Config, e))?;
        require_lattice_engine(&lo, "compare")?;
        if lo.grid != hi.grid {
            return Err(fail(Status::Config, "the two configurations must share grid.T and grid.N"));
        }
        if lo.spec.dynamics != hi.spec.dynamics || lo.spec.x0 != hi.spec.x0 {
            return Err(fail(Status::Config, "the two configurations must share the state dynamics and x0"));
        }
        let lat = lattice_of(&lo)?;
        let mut doc = json!({
            "lower": header(&lo),
            "upper": header(&hi),
        });
        io(ensure_dir(&lo.out_dir))?;
        let pair = match OrderedPair::new(lo.spec.clone(), hi.spec.clone(), &lat) {
            Ok(p) => p,
            Err(e @ Error::OrderingViolation { .. }) => {
                doc["ordered_data"] = json!(false);
                doc["holds"] = json!(false);
                doc["violation"] = json!(e.to_string());
                io(write_json(&lo.out_dir, "compare.json", &doc))?;
                return Ok(fail(Status::Verification, e));
            }
            Err(e) => return Err(fail(Status::Config, e)),
        };
        let sol_lo = solve_with(&lo, &lat)?;
        let sol_hi = solve_with(&hi, &lat)?;
        let rep = comparison_of_solutions(&lat, &pair, &sol_lo, &sol_hi);
        doc["ordered_data"] = json!(true);
        doc["holds"] = json!(rep.holds);
        doc["report"] = serde_json::to_value(&rep).map_err(|e| fail(Status::Config, e))?;
        doc["witness_time"] = json!(lat.time(rep.witness.0));
        doc["witness_state"] = json!(lat.x(rep.witness.0)[rep.witness.1]);
        io(write_json(&lo.out_dir, "compare.json", &doc))?;
        if !rep.driver_ordered {
            eprintln!("rbsvie: warning: drivers are not ordered on the sampled (y, z) range");
        }
        if rep.holds {
            Ok(Status::Ok)
        } else {
            let (j, k) = rep.witness;
            Ok(fail(
                Status::Verification,
                format!("Y_lo exceeds Y_hi by {:e} at layer {j}, node {k}", rep.max_excess),
            ))
        }
    };
    run().unwrap_or_else(|s| s)
}

pub fn stop(opts: &Options) -> Status {
    let run = || -> Result<Status, Status> {
        let cfg = load_one(opts)?;
        require_lattice_engine(&cfg, "stop")?;
        let lat = lattice_of(&cfg)?;
        let sol = solve_with(&cfg, &lat)?;
        let cfail = |e: Error| fail(Status::Config, e);
        let frontier = extract_frontier(&sol, &lat, &cfg.spec, DEFAULT_ATOL).map_err(cfail)?;
        let rep = inconsistency_report(&lat, &cfg.spec, &sol, DEFAULT_ATOL).map_err(cfail)?;
        let early_k = premature_k(&frontier, &sol).map_err(cfail)?;
        let diag = compare_with_diagonal(&frontier, &sol, &lat, &cfg.spec);
        io(ensure_dir(&cfg.out_dir))?;
        let rows = frontier_rows(&frontier, &lat).into_iter().map(|r| {
            vec![
                real(r.anchor_time),
                real(r.time),
                real(r.critical_state_low),
                real(r.critical_state_high),
            ]
        });
        io(write_csv(
            &cfg.out_dir,
            "frontier.csv",
            &["anchor_time", "time", "critical_state_low", "critical_state_high"],
            rows,
        ))?;
        let mut doc = header(&cfg);
        doc["report"] = serde_json::to_value(&rep).map_err(|e| fail(Status::Config, e))?;
        doc["premature_k"] = json!(early_k);
        doc["diagonal_frontier"] = serde_json::to_value(&diag).map_err(|e| fail(Status::Config, e))?;
        io(write_json(&cfg.out_dir, "inconsistency.json", &doc))?;
        if rep.max_optimality_defect > 1e-9 || rep.min_gap < -1e-10 || early_k != 0.0 {
            return Ok(fail(
                Status::Verification,
                format!(
                    "optimality defect {:e}, smallest gap {:e}, early K {:e}",
                    rep.max_optimality_defect, rep.min_gap, early_k
                ),
            ));
        }
        Ok(Status::Ok)
    };
    run().unwrap_or_else(|s| s)
}

pub fn verify_assumptions(opts: &Options) -> Status {
    let run = || -> Result<Status, Status> {
        let cfg = load_one(opts)?;
        require_lattice_engine(&cfg, "verify-assumptions")?;
        let lat = lattice_of(&cfg)?;
        let rep = instances::verify_assumptions(&cfg.spec, &lat, ASSUMPTION_SAMPLES);
        let mut doc = header(&cfg);
        doc["passed"] = json!(rep.passed());
        doc["report"] = serde_json::to_value(&rep).map_err(|e| fail(Status::Config, e))?;
        io(ensure_dir(&cfg.out_dir))?;
        io(write_json(&cfg.out_dir, "assumptions.json", &doc))?;
        if rep.passed() {
            Ok(Status::Ok)
        } else {
            for v in &rep.violations {
                eprintln!("rbsvie: {}: {}", v.check, v.detail);
            }
            Ok(Status::Verification)
        }
    };
    run().unwrap_or_else(|s| s)
}
