//! Three operations for the static page in `www/`: a solve summary, the
//! stopping frontier of every anchor and the time-inconsistency report.
//! Each returns a JSON string; the `*_json` functions are the plain Rust
//! versions the exports wrap.

use rbsvie::instances::catalog_instance;
use rbsvie::stopping::{extract_frontier, frontier_rows, inconsistency_report, DEFAULT_ATOL};
use rbsvie::{build_lattice, InstanceSpec, Lattice, Param, ParamMap, PicardConfig, Solution, TimeGrid};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Keeps a page from freezing the tab; N² anchors·nodes grows fast.
pub const MAX_STEPS: usize = 120;

fn params_from(text: &str) -> Result<ParamMap, String> {
    if text.trim().is_empty() {
        return Ok(ParamMap::new());
    }
    let obj: serde_json::Map<String, Value> = serde_json::from_str(text).map_err(|e| format!("params: {e}"))?;
    obj.into_iter()
        .map(|(k, v)| match v {
            Value::Number(n) => Ok((k, Param::Num(n.as_f64().unwrap_or(f64::NAN)))),
            Value::String(s) => Ok((k, Param::Text(s))),
            other => Err(format!("params.{k}: unsupported value {other}")),
        })
        .collect()
}

fn run(name: &str, params: &str, steps: usize) -> Result<(InstanceSpec, Lattice, Solution), String> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("N must lie in 1..={MAX_STEPS}"));
    }
    let spec = catalog_instance(name, &params_from(params)?, 1.0).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(spec.horizon, steps).map_err(|e| e.to_string())?;
    let lat = build_lattice(&grid, spec.x0, &spec.dynamics).map_err(|e| e.to_string())?;
    let sol = rbsvie::solve(&lat, &spec, &PicardConfig::default()).map_err(|e| e.to_string())?;
    Ok((spec, lat, sol))
}

pub fn summary_json(name: &str, params: &str, steps: usize) -> Result<String, String> {
    let (_, lat, sol) = run(name, params, steps)?;
    let diag: Vec<Value> = (0..=lat.steps())
        .map(|i| json!({ "t": lat.time(i), "mean_y": lat.expectation(i, sol.y_diag[i].values()) }))
        .collect();
    Ok(json!({
        "y0": sol.y0(),
        "iterations": sol.iterations,
        "residual_history": sol.residual_history,
        "diagonal": diag,
    })
    .to_string())
}

pub fn frontier_json(name: &str, params: &str, steps: usize) -> Result<String, String> {
    let (spec, lat, sol) = run(name, params, steps)?;
    let frontier = extract_frontier(&sol, &lat, &spec, DEFAULT_ATOL).map_err(|e| e.to_string())?;
    serde_json::to_string(&frontier_rows(&frontier, &lat)).map_err(|e| e.to_string())
}

pub fn inconsistency_json(name: &str, params: &str, steps: usize) -> Result<String, String> {
    let (spec, lat, sol) = run(name, params, steps)?;
    let rep = inconsistency_report(&lat, &spec, &sol, DEFAULT_ATOL).map_err(|e| e.to_string())?;
    serde_json::to_string(&rep).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn solve_summary(name: &str, params: &str, steps: usize) -> Result<String, JsValue> {
    summary_json(name, params, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn stopping_frontier(name: &str, params: &str, steps: usize) -> Result<String, JsValue> {
    frontier_json(name, params, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn time_inconsistency(name: &str, params: &str, steps: usize) -> Result<String, JsValue> {
    inconsistency_json(name, params, steps).map_err(|e| JsValue::from_str(&e))
}
