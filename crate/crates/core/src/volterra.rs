//! Volterra coupling of the anchor slices.
//!
//! The Picard map `Φ(U, V) = (Y, Z)` solves every anchor slice with the
//! candidate diagonal `U` (and candidate `V` for the `z` slot, in
//! [`ZCoupling::Frozen`]) frozen inside the driver and returns the new
//! diagonal `Y(t_i) = Ỹ(t_i, t_i)` and field `Z`. [`solve_global`] iterates
//! `Φ` on all of `[0, T]`; [`solve_windowed`] iterates it on successive
//! windows `[T − (m+1)δ, T − mδ]` and pastes the pieces together.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{anchor_len, layer_offset, BiField, FieldRole};
use crate::grid::{Lattice, NodeFunction};
use crate::instances::InstanceSpec;
use crate::snell::{solve_slice, SnellSlice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Global,
    Windowed,
}

/// What the driver sees in its `z` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZCoupling {
    /// The slice's own one-step coefficient; only `U` is carried between iterations.
    Explicit,
    /// The previous iterate's field `V`, so each slice has a `(y, z)`-free driver.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStorage {
    /// Keep `Ỹ`, `Z` and the `K` increments for every anchor.
    Full,
    /// Keep only the diagonal; slices are dropped as soon as their diagonal is read.
    DiagonalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub mode: SolveMode,
    /// Window length for [`SolveMode::Windowed`]; chosen automatically when absent.
    pub delta: Option<f64>,
    pub z_coupling: ZCoupling,
    /// Constant starting value of `U`.
    pub initial_level: f64,
    pub storage: FieldStorage,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iters: 200,
            mode: SolveMode::Global,
            delta: None,
            z_coupling: ZCoupling::Explicit,
            initial_level: 0.0,
            storage: FieldStorage::Full,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(invalid("picard.tolerance", "must be finite and > 0"));
        }
        if self.max_iters == 0 {
            return Err(invalid("picard.max_iters", "must be at least 1"));
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(invalid("picard.delta", "must be finite and > 0"));
            }
        }
        if !self.initial_level.is_finite() {
            return Err(invalid("picard.initial_level", "must be finite"));
        }
        if self.storage == FieldStorage::DiagonalOnly
            && (self.mode == SolveMode::Windowed || self.z_coupling == ZCoupling::Frozen)
        {
            return Err(Error::Unsupported(
                "diagonal-only storage needs global mode with explicit z coupling".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFields {
    pub ytilde: BiField,
    pub z: BiField,
    pub kinc: BiField,
    /// The field seen by the driver's `z` slot when it differs from `z`.
    pub driver_z: Option<BiField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub steps: usize,
    pub horizon: f64,
    pub mode: SolveMode,
    pub z_coupling: ZCoupling,
    /// `y_diag[i][k] = Ỹ(t_i, t_i)` at node `k` of layer `i`.
    pub y_diag: Vec<NodeFunction>,
    pub fields: Option<SolutionFields>,
    /// The diagonal frozen in the driver when the stored fields were computed.
    pub driver_y: Vec<NodeFunction>,
    pub iterations: usize,
    /// E-norm of successive Picard increments; window histories concatenated in windowed mode.
    pub residual_history: Vec<f64>,
    /// Sup-norm of the same increments.
    pub sup_history: Vec<f64>,
    pub window_plan: Vec<(usize, usize)>,
    pub window_histories: Vec<Vec<f64>>,
    pub delta: Option<f64>,
    pub warnings: Vec<String>,
}

impl Solution {
    pub fn y0(&self) -> f64 {
        self.y_diag[0][0]
    }

    pub fn fields(&self) -> Result<&SolutionFields> {
        self.fields
            .as_ref()
            .ok_or_else(|| Error::Unsupported("solution was computed with diagonal-only storage".into()))
    }

    pub fn ytilde(&self) -> Result<&BiField> {
        Ok(&self.fields()?.ytilde)
    }

    pub fn z(&self) -> Result<&BiField> {
        Ok(&self.fields()?.z)
    }

    pub fn kinc(&self) -> Result<&BiField> {
        Ok(&self.fields()?.kinc)
    }

    /// The `z` argument the driver saw at anchor `i`.
    pub fn driver_z(&self, i: usize) -> Result<&[f64]> {
        let f = self.fields()?;
        Ok(f.driver_z.as_ref().unwrap_or(&f.z).anchor(i))
    }

    /// Copy of the stored slice for anchor `i`.
    pub fn slice(&self, i: usize) -> Result<SnellSlice> {
        let f = self.fields()?;
        SnellSlice::from_parts(
            i,
            self.steps,
            f.ytilde.anchor(i).to_vec(),
            f.z.anchor(i).to_vec(),
            f.kinc.anchor(i).to_vec(),
        )
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

fn constant_diag(n: usize, level: f64) -> Vec<NodeFunction> {
    (0..=n).map(|j| NodeFunction::constant(j, level)).collect()
}

/// One application of `Φ` on the anchors in `anchors`, each slice solved
/// from the terminal layer. `v = None` selects explicit coupling.
pub fn phi_step(
    lat: &Lattice,
    spec: &InstanceSpec,
    u: &[NodeFunction],
    v: Option<&BiField>,
    anchors: RangeInclusive<usize>,
) -> Result<Vec<SnellSlice>> {
    if let Some(v) = v {
        if v.steps() != lat.steps() {
            return Err(Error::LayerMismatch {
                expected: lat.steps(),
                got: v.steps(),
            });
        }
    }
    anchors
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|i| solve_slice(lat, spec, i, u, v.map(|f| f.anchor(i))))
        .collect()
}

/// Discrete E-norm `sqrt(dt Σ_i E|y_i|² + dt² Σ_i Σ_{i ≤ j < upper} E|z_ij|²)`
/// over the anchors in `anchors`, with `y` indexed by layer.
pub fn e_norm(
    lat: &Lattice,
    anchors: RangeInclusive<usize>,
    upper: usize,
    y: &[NodeFunction],
    z: Option<&BiField>,
) -> f64 {
    let dt = lat.dt();
    let mut acc = 0.0;
    for i in anchors {
        acc += dt * expect_sq(lat, i, y[i].values());
        if let Some(z) = z {
            for j in i..upper.min(lat.steps()) {
                acc += dt * dt * expect_sq(lat, j, z.layer(i, j));
            }
        }
    }
    acc.sqrt()
}

fn expect_sq(lat: &Lattice, j: usize, v: &[f64]) -> f64 {
    lat.node_probs(j).iter().zip(v).map(|(p, x)| p * x * x).sum()
}

/// `(squared E-norm contribution, sup)` of the increment of one anchor:
/// diagonal change plus `Z` change on layers `i..upper`.
fn anchor_increment(
    lat: &Lattice,
    i: usize,
    y_new: &[f64],
    y_old: &[f64],
    z_new: Option<&[f64]>,
    z_old: Option<&[f64]>,
    upper: usize,
) -> (f64, f64) {
    let dt = lat.dt();
    let mut sq = 0.0;
    let mut sup = 0.0f64;
    for ((p, a), b) in lat.node_probs(i).iter().zip(y_new).zip(y_old) {
        let d = a - b;
        sq += dt * p * d * d;
        sup = sup.max(d.abs());
    }
    if let Some(zn) = z_new {
        for j in i..upper {
            let o = layer_offset(i, j);
            for (k, p) in lat.node_probs(j).iter().enumerate() {
                let d = zn[o + k] - z_old.map_or(0.0, |zo| zo[o + k]);
                sq += dt * dt * p * d * d;
                sup = sup.max(d.abs());
            }
        }
    }
    (sq, sup)
}

fn fields_from_slices(n: usize, slices: Vec<SnellSlice>, driver_z: Option<BiField>) -> Result<SolutionFields> {
    let mut y = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n + 1);
    let mut k = Vec::with_capacity(n + 1);
    for s in slices {
        let (a, b, c) = s.into_parts();
        y.push(a);
        z.push(b);
        k.push(c);
    }
    Ok(SolutionFields {
        ytilde: BiField::from_anchors(n, FieldRole::Ytilde, y)?,
        z: BiField::from_anchors(n, FieldRole::Z, z)?,
        kinc: BiField::from_anchors(n, FieldRole::Kinc, k)?,
        driver_z,
    })
}

/// Runs the solver selected by `cfg.mode`.
pub fn solve(lat: &Lattice, spec: &InstanceSpec, cfg: &PicardConfig) -> Result<Solution> {
    match cfg.mode {
        SolveMode::Global => solve_global(lat, spec, cfg),
        SolveMode::Windowed => solve_windowed(lat, spec, cfg),
    }
}

/// Picard iteration of `Φ` on the whole horizon from `(U, V) = (initial_level, 0)`.
pub fn solve_global(lat: &Lattice, spec: &InstanceSpec, cfg: &PicardConfig) -> Result<Solution> {
    cfg.validate()?;
    let n = lat.steps();
    let frozen = cfg.z_coupling == ZCoupling::Frozen;
    let diag_only = cfg.storage == FieldStorage::DiagonalOnly;
    let state_free = spec.driver.is_state_free();
    let mut u = constant_diag(n, cfg.initial_level);
    let mut prev_z: Option<BiField> = if frozen {
        Some(BiField::zeros(n, FieldRole::Z))
    } else {
        None
    };
    let mut history = Vec::new();
    let mut sup_history = Vec::new();

    for iter in 1..=cfg.max_iters {
        let v = if frozen { prev_z.as_ref() } else { None };
        let (new_diag, slices, sq, sup) = if diag_only {
            let parts: Vec<(Vec<f64>, f64, f64)> = (0..=n)
                .into_par_iter()
                .map(|i| {
                    let s = solve_slice(lat, spec, i, &u, None)?;
                    let (sq, sup) = anchor_increment(lat, i, s.diag(), u[i].values(), None, None, n);
                    Ok((s.diag().to_vec(), sq, sup))
                })
                .collect::<Result<_>>()?;
            let (sq, sup) = parts.iter().fold((0.0, 0.0f64), |a, p| (a.0 + p.1, a.1.max(p.2)));
            (parts.into_iter().map(|p| p.0).collect::<Vec<_>>(), None, sq, sup)
        } else {
            let slices = phi_step(lat, spec, &u, v, 0..=n)?;
            let (sq, sup) = slices
                .par_iter()
                .map(|s| {
                    let i = s.anchor();
                    anchor_increment(
                        lat,
                        i,
                        s.diag(),
                        u[i].values(),
                        Some(&s.z),
                        prev_z.as_ref().map(|z| z.anchor(i)),
                        n,
                    )
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
            let diag = slices.iter().map(|s| s.diag().to_vec()).collect::<Vec<_>>();
            (diag, Some(slices), sq, sup)
        };
        let (res, sup) = if state_free { (0.0, 0.0) } else { (sq.sqrt(), sup) };
        history.push(res);
        sup_history.push(sup);
        let new_u: Vec<NodeFunction> = new_diag
            .into_iter()
            .enumerate()
            .map(|(i, d)| NodeFunction::new(i, d))
            .collect::<Result<_>>()?;
        let driver_y = std::mem::replace(&mut u, new_u);
        let converged = res < cfg.tolerance && sup < cfg.tolerance;
        if converged {
            let fields = match slices {
                Some(s) => Some(fields_from_slices(n, s, if frozen { prev_z } else { None })?),
                None => None,
            };
            return Ok(Solution {
                steps: n,
                horizon: lat.grid().horizon(),
                mode: SolveMode::Global,
                z_coupling: cfg.z_coupling,
                y_diag: u,
                fields,
                driver_y,
                iterations: iter,
                residual_history: history.clone(),
                sup_history,
                window_plan: Vec::new(),
                window_histories: vec![history],
                delta: None,
                warnings: Vec::new(),
            });
        }
        if let Some(slices) = slices {
            if frozen || !diag_only {
                let z = slices.into_iter().map(|s| s.into_parts().1).collect();
                prev_z = Some(BiField::from_anchors(n, FieldRole::Z, z)?);
            }
        }
    }
    Err(Error::NoConvergence {
        iters: cfg.max_iters,
        last_residual: history.last().copied().unwrap_or(f64::NAN),
        residual_history: history,
    })
}

/// Largest `δ` with `δ² + δ < 1/(8 c_f)`, as a supremum (not attained).
pub fn max_window_length(lipschitz: f64) -> f64 {
    if lipschitz <= 0.0 {
        return f64::INFINITY;
    }
    let b = 1.0 / (8.0 * lipschitz);
    0.5 * ((1.0 + 4.0 * b).sqrt() - 1.0)
}

fn satisfies_window_bound(delta: f64, lipschitz: f64) -> bool {
    lipschitz <= 0.0 || delta * delta + delta < 1.0 / (8.0 * lipschitz)
}

/// Number of lattice steps per window, with any warnings about the choice.
pub fn window_steps(lat: &Lattice, spec: &InstanceSpec, cfg: &PicardConfig) -> Result<(usize, Vec<String>)> {
    let n = lat.steps();
    let dt = lat.dt();
    let cf = spec.driver.lipschitz;
    let mut warnings = Vec::new();
    let d = match cfg.delta {
        Some(delta) => {
            let d = (delta / dt).round();
            if d < 1.0 || (d * dt - delta).abs() > 1e-9 * delta.max(1.0) {
                return Err(Error::WindowMisaligned(format!(
                    "delta = {delta} is not a positive multiple of dt = {dt}"
                )));
            }
            if !satisfies_window_bound(delta, cf) {
                warnings.push(format!(
                    "delta = {delta} violates delta^2 + delta < 1/(8 c_f) = {} for c_f = {cf}",
                    1.0 / (8.0 * cf)
                ));
            }
            (d as usize).min(n)
        }
        None => {
            let mut d = n;
            while d > 0 && !satisfies_window_bound(d as f64 * dt, cf) {
                d -= 1;
            }
            if d == 0 {
                return Err(Error::WindowInfeasible(format!(
                    "c_f = {cf} requires delta < {} but dt = {dt}",
                    max_window_length(cf)
                )));
            }
            d
        }
    };
    Ok((d, warnings))
}

/// `(lo, hi)` layer pairs of the windows, latest first.
pub fn window_plan(n: usize, d: usize) -> Vec<(usize, usize)> {
    assert!(d > 0);
    let mut plan = Vec::new();
    let mut hi = n;
    loop {
        let lo = hi.saturating_sub(d);
        plan.push((lo, hi));
        if lo == 0 {
            break;
        }
        hi = lo;
    }
    plan
}

/// Picard iteration window by window, pasting each window's accompanying
/// values into the terminal data of the next one.
///
/// Window `m` covers the anchors in `[lo, hi)` (and `T` itself for the last
/// window). Once its diagonal is fixed, the slices of all earlier anchors are
/// extended over `[lo, hi]` by a single backward induction.
pub fn solve_windowed(lat: &Lattice, spec: &InstanceSpec, cfg: &PicardConfig) -> Result<Solution> {
    cfg.validate()?;
    let n = lat.steps();
    let (d, warnings) = window_steps(lat, spec, cfg)?;
    let plan = window_plan(n, d);
    let frozen = cfg.z_coupling == ZCoupling::Frozen;
    let state_free = spec.driver.is_state_free();

    let mut slices: Vec<SnellSlice> = (0..=n).map(|i| SnellSlice::terminal(lat, spec, i)).collect();
    let mut u = constant_diag(n, cfg.initial_level);
    let mut driver_y = u.clone();
    let mut v: Vec<Vec<f64>> = if frozen {
        (0..=n).map(|i| vec![0.0; anchor_len(i, n)]).collect()
    } else {
        Vec::new()
    };
    // `(anchor, upper, V used in the final sweep)` for patching the driver field.
    let mut v_used: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut histories = Vec::new();
    let mut sup_history = Vec::new();
    let mut total_iters = 0;

    for (m, &(lo, hi)) in plan.iter().enumerate() {
        let top = if m == 0 { n } else { hi - 1 };
        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.max_iters {
            total_iters += 1;
            let old_z: Vec<Vec<f64>> = slices[lo..=top].iter().map(|s| s.z.clone()).collect();
            {
                let u_ref = &u;
                let v_ref = &v;
                slices[lo..=top].par_iter_mut().try_for_each(|s| {
                    let i = s.anchor();
                    let vi = if frozen { Some(&v_ref[i][..]) } else { None };
                    s.sweep(lat, spec, u_ref, vi, hi, i)
                })?;
            }
            let (sq, sup) = slices[lo..=top]
                .iter()
                .zip(&old_z)
                .map(|(s, zo)| {
                    let i = s.anchor();
                    anchor_increment(lat, i, s.diag(), u[i].values(), Some(&s.z), Some(zo), hi)
                })
                .fold((0.0, 0.0f64), |a, b| (a.0 + b.0, a.1.max(b.1)));
            let (res, sup) = if state_free { (0.0, 0.0) } else { (sq.sqrt(), sup) };
            history.push(res);
            sup_history.push(sup);
            for i in lo..=top {
                driver_y[i] = u[i].clone();
                u[i] = NodeFunction::new(i, slices[i].diag().to_vec())?;
            }
            if res < cfg.tolerance && sup < cfg.tolerance {
                converged = true;
                if frozen {
                    for i in lo..=top {
                        v_used.push((i, hi, v[i].clone()));
                    }
                }
                break;
            }
            if frozen {
                for i in lo..=top {
                    v[i].copy_from_slice(&slices[i].z);
                }
            }
        }
        let window_history = history.clone();
        histories.push(history);
        if !converged {
            let all: Vec<f64> = histories.concat();
            return Err(Error::NoConvergence {
                iters: total_iters,
                last_residual: window_history.last().copied().unwrap_or(f64::NAN),
                residual_history: all,
            });
        }
        let dy = &driver_y;
        slices[..lo]
            .par_iter_mut()
            .try_for_each(|s| s.sweep(lat, spec, dy, None, hi, lo))?;
    }

    let driver_z = if frozen {
        let mut dz: Vec<Vec<f64>> = slices.iter().map(|s| s.z.clone()).collect();
        for (i, hi, vi) in v_used {
            let end = layer_offset(i, hi);
            dz[i][..end].copy_from_slice(&vi[..end]);
        }
        Some(BiField::from_anchors(n, FieldRole::Z, dz)?)
    } else {
        None
    };
    let fields = fields_from_slices(n, slices, driver_z)?;
    let y_diag = u;
    Ok(Solution {
        steps: n,
        horizon: lat.grid().horizon(),
        mode: SolveMode::Windowed,
        z_coupling: cfg.z_coupling,
        y_diag,
        fields: Some(fields),
        driver_y,
        iterations: total_iters,
        residual_history: histories.concat(),
        sup_history,
        window_plan: plan,
        window_histories: histories,
        delta: Some(d as f64 * lat.dt()),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_lattice, TimeGrid};
    use crate::instances::{catalog_default, catalog_instance, Param, ParamMap, CATALOG};
    use crate::snell::flatness_defect;

    fn lattice_for(spec: &InstanceSpec, n: usize) -> Lattice {
        let grid = TimeGrid::new(spec.horizon, n).unwrap();
        build_lattice(&grid, spec.x0, &spec.dynamics).unwrap()
    }

    fn max_diag_gap(a: &Solution, b: &Solution) -> f64 {
        a.y_diag
            .iter()
            .zip(&b.y_diag)
            .flat_map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_driver_converges_immediately() {
        let spec = catalog_default("zero_driver_flat", 1.0).unwrap();
        let lat = lattice_for(&spec, 20);
        let sol = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.residual_history, vec![0.0]);
        for (i, y) in sol.y_diag.iter().enumerate() {
            assert_eq!(y.values(), sol.ytilde().unwrap().layer(i, i));
        }
    }

    #[test]
    fn residuals_decrease_and_fixed_point_holds() {
        for name in CATALOG {
            let spec = catalog_default(name, 1.0).unwrap();
            let lat = lattice_for(&spec, 30);
            let cfg = PicardConfig::default();
            let sol = solve_global(&lat, &spec, &cfg).unwrap();
            assert!(sol.final_residual() < 1e-10);
            for w in sol.residual_history.windows(2) {
                assert!(w[1] < w[0], "{name}: {:?}", sol.residual_history);
            }
            for (i, y) in sol.y_diag.iter().enumerate() {
                assert_eq!(y.values(), sol.ytilde().unwrap().layer(i, i));
            }
            let again = phi_step(&lat, &spec, &sol.y_diag, None, 0..=30).unwrap();
            for s in &again {
                let i = s.anchor();
                for (a, b) in s.diag().iter().zip(sol.y_diag[i].values()) {
                    assert!((a - b).abs() < cfg.tolerance);
                }
                for (a, b) in s.z.iter().zip(sol.z().unwrap().anchor(i)) {
                    assert!((a - b).abs() < cfg.tolerance);
                }
            }
        }
    }

    #[test]
    fn frozen_and_explicit_coupling_share_the_fixed_point() {
        for name in ["linear_z", "custom_affine", "american_put"] {
            let spec = catalog_default(name, 1.0).unwrap();
            let lat = lattice_for(&spec, 24);
            let explicit = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
            let cfg = PicardConfig {
                z_coupling: ZCoupling::Frozen,
                ..PicardConfig::default()
            };
            let frozen = solve_global(&lat, &spec, &cfg).unwrap();
            assert!(max_diag_gap(&explicit, &frozen) < 1e-9, "{name}");
            assert!(frozen.fields().unwrap().driver_z.is_some());
        }
    }

    #[test]
    fn uniqueness_from_distinct_starts() {
        for name in CATALOG {
            let spec = catalog_default(name, 1.0).unwrap();
            let lat = lattice_for(&spec, 20);
            let a = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
            let cfg = PicardConfig {
                initial_level: 50.0,
                ..PicardConfig::default()
            };
            let b = solve_global(&lat, &spec, &cfg).unwrap();
            assert!(max_diag_gap(&a, &b) < 2e-10, "{name}");
        }
    }

    #[test]
    fn windowed_matches_global() {
        for name in CATALOG {
            let spec = catalog_default(name, 1.0).unwrap();
            let lat = lattice_for(&spec, 40);
            let g = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
            let cfg = PicardConfig {
                mode: SolveMode::Windowed,
                delta: Some(0.2),
                ..PicardConfig::default()
            };
            let w = solve(&lat, &spec, &cfg).unwrap();
            assert_eq!(w.window_plan.len(), 5);
            assert!(max_diag_gap(&g, &w) < 2e-10, "{name}: {}", max_diag_gap(&g, &w));
            for i in [0, 13, 40] {
                let s = w.slice(i).unwrap();
                assert_eq!(flatness_defect(&s, &lat, &spec), 0.0);
            }
        }
    }

    #[test]
    fn windowed_frozen_matches_global() {
        let spec = catalog_default("linear_z", 1.0).unwrap();
        let lat = lattice_for(&spec, 40);
        let g = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
        let cfg = PicardConfig {
            mode: SolveMode::Windowed,
            z_coupling: ZCoupling::Frozen,
            ..PicardConfig::default()
        };
        let w = solve(&lat, &spec, &cfg).unwrap();
        assert!(max_diag_gap(&g, &w) < 2e-10);
    }

    #[test]
    fn state_free_windowed_is_exactly_global() {
        let spec = catalog_default("zero_driver_flat", 1.0).unwrap();
        let lat = lattice_for(&spec, 30);
        let g = solve_global(&lat, &spec, &PicardConfig::default()).unwrap();
        let cfg = PicardConfig {
            mode: SolveMode::Windowed,
            delta: Some(0.1),
            ..PicardConfig::default()
        };
        let w = solve(&lat, &spec, &cfg).unwrap();
        assert_eq!(g.y_diag, w.y_diag);
        assert_eq!(g.ytilde().unwrap(), w.ytilde().unwrap());
    }

    #[test]
    fn window_bound_and_errors() {
        assert!((max_window_length(0.5) - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(window_plan(10, 4), vec![(6, 10), (2, 6), (0, 2)]);

        let mut p = ParamMap::new();
        p.insert("a".into(), Param::Num(200.0));
        let spec = catalog_instance("linear_z", &p, 1.0).unwrap();
        let lat = lattice_for(&spec, 10);
        let cfg = PicardConfig {
            mode: SolveMode::Windowed,
            ..PicardConfig::default()
        };
        assert!(matches!(solve(&lat, &spec, &cfg), Err(Error::WindowInfeasible(_))));

        let cfg = PicardConfig {
            mode: SolveMode::Windowed,
            delta: Some(0.15),
            ..PicardConfig::default()
        };
        assert!(matches!(solve(&lat, &spec, &cfg), Err(Error::WindowMisaligned(_))));

        let spec = catalog_default("hyperbolic_discount", 1.0).unwrap();
        let lat = lattice_for(&spec, 20);
        let cfg = PicardConfig {
            mode: SolveMode::Windowed,
            delta: Some(0.25),
            ..PicardConfig::default()
        };
        let sol = solve(&lat, &spec, &cfg).unwrap();
        assert_eq!(sol.warnings.len(), 1);
        let auto = PicardConfig {
            mode: SolveMode::Windowed,
            ..PicardConfig::default()
        };
        let sol = solve(&lat, &spec, &auto).unwrap();
        assert_eq!(sol.delta, Some(0.2));
    }

    #[test]
    fn no_convergence_carries_history() {
        let spec = catalog_default("linear_z", 1.0).unwrap();
        let lat = lattice_for(&spec, 20);
        let cfg = PicardConfig {
            max_iters: 1,
            ..PicardConfig::default()
        };
        match solve(&lat, &spec, &cfg) {
            Err(Error::NoConvergence {
                iters,
                residual_history,
                ..
            }) => {
                assert_eq!(iters, 1);
                assert_eq!(residual_history.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diagonal_only_matches_full() {
        let spec = catalog_default("hyperbolic_discount", 1.0).unwrap();
        let lat = lattice_for(&spec, 30);
        let full = solve(&lat, &spec, &PicardConfig::default()).unwrap();
        let cfg = PicardConfig {
            storage: FieldStorage::DiagonalOnly,
            ..PicardConfig::default()
        };
        let lean = solve(&lat, &spec, &cfg).unwrap();
        assert!(lean.fields.is_none());
        assert!(lean.ytilde().is_err());
        assert!(max_diag_gap(&full, &lean) < 2e-10);
        let bad = PicardConfig {
            storage: FieldStorage::DiagonalOnly,
            z_coupling: ZCoupling::Frozen,
            ..PicardConfig::default()
        };
        assert!(solve(&lat, &spec, &bad).is_err());
    }

    #[test]
    fn config_validation() {
        for cfg in [
            PicardConfig {
                tolerance: 0.0,
                ..PicardConfig::default()
            },
            PicardConfig {
                max_iters: 0,
                ..PicardConfig::default()
            },
            PicardConfig {
                delta: Some(-1.0),
                ..PicardConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
