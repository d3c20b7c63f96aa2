//! Uniform time grid and the recombining binomial lattice.
//!
//! Layer `j` of the lattice holds the `j + 1` values `(2k - j)·√dt` of the
//! Brownian motion at `t_j`; each node moves up or down by `√dt` with
//! probability ½. On this tree conditional expectations are exact two-point
//! averages and every one-step increment has an exact martingale
//! representation, which is what the accompanying reflected equations need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::StateDynamics;

/// Probability of the up branch.
pub const UP_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one step is required".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be finite and positive, got {horizon}"
            )));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        times[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            dt,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }
}

/// A discrete `F_{t_j}`-measurable random variable: one value per node of layer `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFunction {
    layer: usize,
    values: Vec<f64>,
}

impl NodeFunction {
    pub fn new(layer: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layer + 1 {
            return Err(Error::LayerMismatch {
                expected: layer,
                got: values.len().saturating_sub(1),
            });
        }
        Ok(Self { layer, values })
    }

    pub fn constant(layer: usize, value: f64) -> Self {
        Self {
            layer,
            values: vec![value; layer + 1],
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<usize> for NodeFunction {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    grid: TimeGrid,
    sqrt_dt: f64,
    x0: f64,
    w: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// Builds the binomial lattice and evaluates the state process on it.
///
/// Only dynamics that are functions of `(t, W(t))` can live on the lattice;
/// anything else is rejected with [`Error::Unsupported`].
pub fn build_lattice(grid: &TimeGrid, x0: f64, dynamics: &StateDynamics) -> Result<Lattice> {
    if !x0.is_finite() {
        return Err(Error::InvalidGrid(format!("x0 must be finite, got {x0}")));
    }
    dynamics.validate()?;
    let n = grid.steps();
    let sqrt_dt = grid.dt().sqrt();
    let mut w = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = grid.time(j);
        let wj: Vec<f64> = (0..=j)
            .map(|k| (2.0 * k as f64 - j as f64) * sqrt_dt)
            .collect();
        let xj = wj
            .iter()
            .map(|&wk| {
                dynamics.markov_value(x0, t, wk).ok_or_else(|| {
                    Error::Unsupported(format!(
                        "{} dynamics are not a function of (t, W) and cannot be placed on the lattice",
                        dynamics.tag()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(k) = xj.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                anchor: 0,
                layer: j,
                node: k,
            });
        }
        w.push(wj);
        x.push(xj);
    }
    // Pascal recursion keeps the binomial weights exact for any N without factorials.
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    probs.push(vec![1.0]);
    for j in 1..=n {
        let prev = &probs[j - 1];
        let row = (0..=j)
            .map(|k| {
                let down = if k < j { prev[k] } else { 0.0 };
                let up = if k > 0 { prev[k - 1] } else { 0.0 };
                UP_PROB * (down + up)
            })
            .collect();
        probs.push(row);
    }
    Ok(Lattice {
        grid: grid.clone(),
        sqrt_dt,
        x0,
        w,
        x,
        probs,
    })
}

impl Lattice {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn time(&self, j: usize) -> f64 {
        self.grid.time(j)
    }

    pub fn w(&self, j: usize) -> &[f64] {
        &self.w[j]
    }

    pub fn x(&self, j: usize) -> &[f64] {
        &self.x[j]
    }

    /// Unconditional probability of each node of layer `j`.
    pub fn node_probs(&self, j: usize) -> &[f64] {
        &self.probs[j]
    }

    /// Total number of nodes through layer N.
    pub fn node_count(&self) -> usize {
        self.w.iter().map(Vec::len).sum()
    }

    /// Expectation under the node probabilities of layer `j`.
    pub fn expectation(&self, j: usize, values: &[f64]) -> f64 {
        self.probs[j]
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }

    pub fn cond_expect(&self, next: &NodeFunction) -> Result<NodeFunction> {
        let j = self.parent_layer(next)?;
        let mut out = vec![0.0; j + 1];
        cond_expect_into(next.values(), &mut out);
        Ok(NodeFunction { layer: j, values: out })
    }

    pub fn martingale_coeff(&self, next: &NodeFunction) -> Result<NodeFunction> {
        let j = self.parent_layer(next)?;
        let mut out = vec![0.0; j + 1];
        martingale_coeff_into(next.values(), self.sqrt_dt, &mut out);
        Ok(NodeFunction { layer: j, values: out })
    }

    fn parent_layer(&self, next: &NodeFunction) -> Result<usize> {
        let layer = next.layer();
        if layer == 0 || layer > self.steps() {
            return Err(Error::LayerMismatch {
                expected: layer.clamp(1, self.steps()),
                got: layer,
            });
        }
        Ok(layer - 1)
    }
}

/// `out[k] = ½(next[k+1] + next[k])`.
#[inline]
pub(crate) fn cond_expect_into(next: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = UP_PROB * (next[k + 1] + next[k]);
    }
}

/// `out[k] = (next[k+1] - next[k]) / (2√dt)`.
#[inline]
pub(crate) fn martingale_coeff_into(next: &[f64], sqrt_dt: f64, out: &mut [f64]) {
    let denom = 2.0 * sqrt_dt;
    for (k, o) in out.iter_mut().enumerate() {
        *o = (next[k + 1] - next[k]) / denom;
    }
}
