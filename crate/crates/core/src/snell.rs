//! Accompanying reflected BSDE for one anchor time.
//!
//! With the diagonal `U` (and optionally `V`) of the previous Picard iterate
//! frozen inside the driver, the slice for anchor `i` is the discrete Snell
//! envelope
//!
//! ```text
//! Ỹ(t_i, t_N) = ξ(t_i, X_N)
//! Ỹ(t_i, t_j) = max(E[Ỹ(t_i, t_{j+1}) | F_j] + f(t_i, t_j, X_j, U_j, Z_ij)·dt, L(t_j, X_j))
//! ```
//!
//! with `Z_ij` the one-step martingale coefficient of `Ỹ(t_i, t_{j+1})` and
//! `K` increments equal to the amount by which the obstacle lifts the
//! continuation value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{anchor_len, layer_offset};
use crate::grid::{Lattice, NodeFunction};
use crate::instances::InstanceSpec;

/// Largest lattice accepted by [`snell_by_policy_envelope`].
pub const POLICY_ENVELOPE_MAX_STEPS: usize = 12;

/// The primary output of the slice recursion: `Ỹ`, `Z` and the `K` increments
/// for anchor `i`, stored layer by layer from `j = i` to `j = N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnellSlice {
    anchor: usize,
    steps: usize,
    pub(crate) ytilde: Vec<f64>,
    pub(crate) z: Vec<f64>,
    pub(crate) kinc: Vec<f64>,
}

impl SnellSlice {
    /// A slice holding only the terminal layer `Ỹ(t_i, T) = ξ(t_i, X_T)`.
    pub fn terminal(lat: &Lattice, spec: &InstanceSpec, anchor: usize) -> Self {
        let n = lat.steps();
        let len = anchor_len(anchor, n);
        let mut ytilde = vec![0.0; len];
        let ti = lat.time(anchor);
        let o = layer_offset(anchor, n);
        for (dst, &x) in ytilde[o..].iter_mut().zip(lat.x(n)) {
            *dst = spec.terminal.eval(ti, x);
        }
        Self {
            anchor,
            steps: n,
            ytilde,
            z: vec![0.0; len],
            kinc: vec![0.0; len],
        }
    }

    pub fn from_parts(
        anchor: usize,
        steps: usize,
        ytilde: Vec<f64>,
        z: Vec<f64>,
        kinc: Vec<f64>,
    ) -> Result<Self> {
        let len = anchor_len(anchor, steps);
        for v in [&ytilde, &z, &kinc] {
            if v.len() != len {
                return Err(Error::LayerMismatch {
                    expected: len,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            anchor,
            steps,
            ytilde,
            z,
            kinc,
        })
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn range(&self, j: usize) -> std::ops::Range<usize> {
        debug_assert!(self.anchor <= j && j <= self.steps);
        let o = layer_offset(self.anchor, j);
        o..o + j + 1
    }

    pub fn ytilde(&self, j: usize) -> &[f64] {
        &self.ytilde[self.range(j)]
    }

    pub fn z(&self, j: usize) -> &[f64] {
        &self.z[self.range(j)]
    }

    pub fn kinc(&self, j: usize) -> &[f64] {
        &self.kinc[self.range(j)]
    }

    pub fn kinc_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.range(j);
        &mut self.kinc[r]
    }

    /// `Y(t_i) = Ỹ(t_i, t_i)` at the nodes of layer `i`.
    pub fn diag(&self) -> &[f64] {
        self.ytilde(self.anchor)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (self.ytilde, self.z, self.kinc)
    }

    /// Backward induction from layer `upper` (already filled) down to layer `lower`.
    ///
    /// `u` is the frozen diagonal indexed by layer. With `v = None` the driver
    /// sees the slice's own `Z`; otherwise it sees the frozen field `v`, laid
    /// out like this slice.
    pub(crate) fn sweep(
        &mut self,
        lat: &Lattice,
        spec: &InstanceSpec,
        u: &[NodeFunction],
        v: Option<&[f64]>,
        upper: usize,
        lower: usize,
    ) -> Result<()> {
        let i = self.anchor;
        debug_assert!(i <= lower && lower <= upper && upper <= self.steps);
        let ti = lat.time(i);
        let dt = lat.dt();
        let denom = 2.0 * lat.sqrt_dt();
        for j in (lower..upper).rev() {
            let tj = lat.time(j);
            let o = layer_offset(i, j);
            let (head, tail) = self.ytilde.split_at_mut(o + j + 1);
            let cur = &mut head[o..];
            let next = &tail[..j + 2];
            let xs = lat.x(j);
            let us = u[j].values();
            for k in 0..=j {
                let (dn, up) = (next[k], next[k + 1]);
                let zk = (up - dn) / denom;
                let z_drv = v.map_or(zk, |vf| vf[o + k]);
                let x = xs[k];
                let c = 0.5 * (up + dn) + spec.driver.eval(ti, tj, x, us[k], z_drv) * dt;
                if !c.is_finite() {
                    return Err(Error::NonFinite {
                        anchor: i,
                        layer: j,
                        node: k,
                    });
                }
                let l = spec.obstacle.eval(tj, x);
                let (y, dk) = if l > c { (l, l - c) } else { (c, 0.0) };
                cur[k] = y;
                self.z[o + k] = zk;
                self.kinc[o + k] = dk;
            }
        }
        Ok(())
    }
}

/// Solves the accompanying reflected BSDE of anchor `i` with `(U, V)` frozen.
pub fn solve_slice(
    lat: &Lattice,
    spec: &InstanceSpec,
    i: usize,
    u: &[NodeFunction],
    v: Option<&[f64]>,
) -> Result<SnellSlice> {
    let n = lat.steps();
    check_inputs(lat, i, u, v)?;
    let mut slice = SnellSlice::terminal(lat, spec, i);
    slice.sweep(lat, spec, u, v, n, i)?;
    Ok(slice)
}

fn check_inputs(lat: &Lattice, i: usize, u: &[NodeFunction], v: Option<&[f64]>) -> Result<()> {
    let n = lat.steps();
    if i > n {
        return Err(Error::LayerMismatch {
            expected: n,
            got: i,
        });
    }
    if u.len() != n + 1 {
        return Err(Error::LayerMismatch {
            expected: n,
            got: u.len().saturating_sub(1),
        });
    }
    for (j, f) in u.iter().enumerate() {
        if f.layer() != j {
            return Err(Error::LayerMismatch {
                expected: j,
                got: f.layer(),
            });
        }
    }
    if let Some(v) = v {
        if v.len() != anchor_len(i, n) {
            return Err(Error::LayerMismatch {
                expected: anchor_len(i, n),
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Discrete `Σ_j E[(Ỹ(t_i, t_j) − L(t_j)) · ΔK(t_i, t_j)]`, which vanishes
/// exactly when `K` only moves on the obstacle.
pub fn flatness_defect(slice: &SnellSlice, lat: &Lattice, spec: &InstanceSpec) -> f64 {
    let n = lat.steps();
    (slice.anchor()..n)
        .map(|j| {
            let tj = lat.time(j);
            let y = slice.ytilde(j);
            let dk = slice.kinc(j);
            lat.node_probs(j)
                .iter()
                .zip(lat.x(j))
                .enumerate()
                .map(|(k, (p, &x))| p * (y[k] - spec.obstacle.eval(tj, x)) * dk[k])
                .sum::<f64>()
        })
        .sum()
}

/// Bellman solution of the optimal stopping problem for anchor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEnvelope {
    pub anchor: usize,
    /// `values[j - i][k]`
    pub values: Vec<Vec<f64>>,
    /// `stop[j - i][k]`: stopping is (weakly) optimal at the node.
    pub stop: Vec<Vec<bool>>,
}

/// Value of anchor `i` computed as an optimal stopping problem: at each node
/// compare the stopping reward with the continuation reward and keep the
/// better action. Restricted to small lattices.
pub fn snell_by_policy_envelope(
    lat: &Lattice,
    spec: &InstanceSpec,
    i: usize,
    u: &[NodeFunction],
    v: Option<&[f64]>,
) -> Result<PolicyEnvelope> {
    let n = lat.steps();
    if n > POLICY_ENVELOPE_MAX_STEPS {
        return Err(Error::TooLarge {
            what: "policy-envelope lattice",
            got: n,
            limit: POLICY_ENVELOPE_MAX_STEPS,
        });
    }
    check_inputs(lat, i, u, v)?;
    let ti = lat.time(i);
    let stop_reward = |j: usize, x: f64| {
        if j == n {
            spec.terminal.eval(ti, x)
        } else {
            spec.obstacle.eval(lat.time(j), x)
        }
    };
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n - i + 1];
    let mut stop: Vec<Vec<bool>> = vec![Vec::new(); n - i + 1];
    values[n - i] = lat.x(n).iter().map(|&x| stop_reward(n, x)).collect();
    stop[n - i] = vec![true; n + 1];
    for j in (i..n).rev() {
        let next = values[j - i + 1].clone();
        let mut vals = Vec::with_capacity(j + 1);
        let mut flags = Vec::with_capacity(j + 1);
        for (k, &x) in lat.x(j).iter().enumerate() {
            let expected_next = 0.5 * next[k + 1] + 0.5 * next[k];
            let z_own = (next[k + 1] - next[k]) / (2.0 * lat.sqrt_dt());
            let z = match v {
                Some(vf) => vf[layer_offset(i, j) + k],
                None => z_own,
            };
            let running = spec.driver.eval(ti, lat.time(j), x, u[j][k], z) * lat.dt();
            let continue_value = expected_next + running;
            let stop_value = stop_reward(j, x);
            let stop_here = stop_value >= continue_value;
            vals.push(if stop_here { stop_value } else { continue_value });
            flags.push(stop_here);
        }
        values[j - i] = vals;
        stop[j - i] = flags;
    }
    Ok(PolicyEnvelope {
        anchor: i,
        values,
        stop,
    })
}
