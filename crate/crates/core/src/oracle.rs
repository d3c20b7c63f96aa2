//! Brute-force verification on small lattices.
//!
//! Every node-flag stopping rule is enumerated and its payoff computed by
//! summing over all tree paths (no recombination, no backward induction),
//! so agreement with [`crate::snell`] is a genuinely independent check.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::layer_offset;
use crate::grid::{Lattice, NodeFunction};
use crate::instances::InstanceSpec;
use crate::volterra::Solution;

/// Most interior nodes a rule family may range over (2^20 rules).
pub const MAX_RULE_NODES: usize = 20;
/// Most layers a path sum may span (2^24 paths).
pub const MAX_PATH_DEPTH: usize = 24;
/// Default deviation bound for [`oracle_sweep`].
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Stop flags on layers `start..=N` for anchor `anchor`, with layer `N`
/// always stopping. Flags are stored with the layout of [`layer_offset`]
/// relative to `start`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StoppingRule {
    anchor: usize,
    start: usize,
    steps: usize,
    flags: Vec<bool>,
}

impl StoppingRule {
    /// A rule that never stops before `N`.
    pub fn never(anchor: usize, start: usize, steps: usize) -> Self {
        Self {
            anchor,
            start,
            steps,
            flags: vec![false; layer_offset(start, steps)],
        }
    }

    /// A rule that stops on layer `start` at every node.
    pub fn immediate(anchor: usize, start: usize, steps: usize) -> Self {
        let mut r = Self::never(anchor, start, steps);
        for f in r.flags.iter_mut().take(start + 1) {
            *f = true;
        }
        r
    }

    pub fn from_fn(anchor: usize, start: usize, steps: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut r = Self::never(anchor, start, steps);
        for j in start..steps {
            for k in 0..=j {
                r.flags[layer_offset(start, j) + k] = f(j, k);
            }
        }
        r
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stops(&self, j: usize, k: usize) -> bool {
        j >= self.steps || self.flags[layer_offset(self.start, j) + k]
    }

    pub fn set(&mut self, j: usize, k: usize, stop: bool) {
        assert!(j < self.steps, "layer N always stops");
        self.flags[layer_offset(self.start, j) + k] = stop;
    }

    /// Number of interior flags that are set.
    pub fn stop_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Number of non-terminal nodes in layers `start..N`.
pub fn interior_nodes(steps: usize, start: usize) -> usize {
    layer_offset(start, steps)
}

/// Number of non-terminal nodes reachable from node `(start, k)`.
pub fn subtree_nodes(steps: usize, start: usize) -> usize {
    let d = steps - start;
    d * (d + 1) / 2
}

/// Every flag assignment on the interior layers `i..N` (`2^nodes` rules).
pub fn enumerate_rules(lat: &Lattice, i: usize) -> Result<impl Iterator<Item = StoppingRule>> {
    enumerate_rules_for_anchor(lat, i, i)
}

/// As [`enumerate_rules`], for rules of anchor `anchor` that start at layer `start`.
pub fn enumerate_rules_for_anchor(
    lat: &Lattice,
    anchor: usize,
    start: usize,
) -> Result<impl Iterator<Item = StoppingRule>> {
    let n = lat.steps();
    check_start(n, anchor, start)?;
    let m = interior_nodes(n, start);
    if m > MAX_RULE_NODES {
        return Err(Error::TooLarge {
            what: "stopping-rule enumeration",
            got: m,
            limit: MAX_RULE_NODES,
        });
    }
    Ok((0u64..1 << m).map(move |mask| StoppingRule {
        anchor,
        start,
        steps: n,
        flags: (0..m).map(|b| mask >> b & 1 == 1).collect(),
    }))
}

fn check_start(n: usize, anchor: usize, start: usize) -> Result<()> {
    if anchor > start || start > n {
        return Err(Error::LayerMismatch {
            expected: anchor,
            got: start,
        });
    }
    Ok(())
}

/// The diagonal and `z` field the driver is frozen at.
#[derive(Debug, Clone, Copy)]
pub struct FrozenDriver<'a> {
    /// `y[j]` on layer `j`.
    pub y: &'a [NodeFunction],
    /// The anchor's `z` slice in [`layer_offset`] layout.
    pub z: &'a [f64],
}

impl<'a> FrozenDriver<'a> {
    pub fn from_solution(sol: &'a Solution, anchor: usize) -> Result<Self> {
        Ok(Self {
            y: &sol.driver_y,
            z: sol.driver_z(anchor)?,
        })
    }
}

/// Conditional payoff at node `(start, k)` of following `rule`:
/// left-endpoint Riemann sum of `f(t_i, ·)` up to the stop, plus `L` if
/// stopped before `T`, else `ξ(t_i)`. Computed by summing over every path.
pub fn payoff_of_rule(
    lat: &Lattice,
    spec: &InstanceSpec,
    k: usize,
    rule: &StoppingRule,
    frozen: FrozenDriver<'_>,
) -> Result<f64> {
    let n = lat.steps();
    let depth = n - rule.start;
    if depth > MAX_PATH_DEPTH {
        return Err(Error::TooLarge {
            what: "path summation depth",
            got: depth,
            limit: MAX_PATH_DEPTH,
        });
    }
    let i = rule.anchor;
    let ti = lat.time(i);
    let mut total = 0.0;
    for path in 0u64..1 << depth {
        let mut node = k;
        let mut running = 0.0;
        let mut value = None;
        for j in rule.start..n {
            let x = lat.x(j)[node];
            if rule.stops(j, node) {
                value = Some(running + spec.obstacle.eval(lat.time(j), x));
                break;
            }
            let z = frozen.z[layer_offset(i, j) + node];
            running += spec.driver.eval(ti, lat.time(j), x, frozen.y[j][node], z) * lat.dt();
            if path >> (j - rule.start) & 1 == 1 {
                node += 1;
            }
        }
        let v = value.unwrap_or_else(|| running + spec.terminal.eval(ti, lat.x(n)[node]));
        total += v;
    }
    Ok(total / (1u64 << depth) as f64)
}

/// Highest payoff over all rules supported on the subtree of `(start, k)`.
/// Ties go to the rule that stops earlier, ordering flags by layer then node.
pub fn best_rule(
    lat: &Lattice,
    spec: &InstanceSpec,
    anchor: usize,
    start: usize,
    k: usize,
    frozen: FrozenDriver<'_>,
) -> Result<(StoppingRule, f64)> {
    let n = lat.steps();
    check_start(n, anchor, start)?;
    if k > start {
        return Err(Error::LayerMismatch {
            expected: start,
            got: k,
        });
    }
    let positions: Vec<(usize, usize)> = (start..n)
        .flat_map(|j| (k..=k + j - start).map(move |kk| (j, kk)))
        .collect();
    let m = positions.len();
    if m > MAX_RULE_NODES {
        return Err(Error::TooLarge {
            what: "stopping-rule enumeration",
            got: m,
            limit: MAX_RULE_NODES,
        });
    }
    let mut best: Option<(StoppingRule, f64)> = None;
    // Descending masks with the first position in the top bit visit rules in
    // decreasing lexicographic order, earliest stops first.
    for mask in (0u64..1 << m).rev() {
        let mut rule = StoppingRule::never(anchor, start, n);
        for (p, &(j, kk)) in positions.iter().enumerate() {
            if mask >> (m - 1 - p) & 1 == 1 {
                rule.set(j, kk, true);
            }
        }
        let v = payoff_of_rule(lat, spec, k, &rule, frozen)?;
        let better = match &best {
            None => true,
            Some((_, b)) => v > b + 1e-13 * (1.0 + b.abs()),
        };
        if better {
            best = Some((rule, v));
        }
    }
    Ok(best.expect("at least one rule"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleNode {
    pub anchor: usize,
    pub layer: usize,
    pub node: usize,
    pub solver: f64,
    pub oracle: f64,
    pub deviation: f64,
    pub rules_enumerated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub steps: usize,
    pub tolerance: f64,
    pub nodes_checked: usize,
    /// Nodes whose subtree is too large to enumerate.
    pub nodes_skipped: usize,
    pub max_deviation: f64,
    pub nodes: Vec<OracleNode>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

/// Compares every stored `Ỹ(t_i, t_j)` node value with the brute-force
/// optimum over stopping rules from that node, drivers frozen at the
/// solution's own `(Y, Z)`.
pub fn oracle_sweep(lat: &Lattice, spec: &InstanceSpec, sol: &Solution) -> Result<OracleReport> {
    let n = lat.steps();
    let ytilde = sol.ytilde()?;
    let targets: Vec<(usize, usize, usize)> = (0..=n)
        .flat_map(|i| (i..=n).flat_map(move |j| (0..=j).map(move |k| (i, j, k))))
        .collect();
    let results: Vec<Option<OracleNode>> = targets
        .par_iter()
        .map(|&(i, j, k)| {
            if subtree_nodes(n, j) > MAX_RULE_NODES {
                return Ok(None);
            }
            let frozen = FrozenDriver::from_solution(sol, i)?;
            let (_, oracle) = best_rule(lat, spec, i, j, k, frozen)?;
            let solver = ytilde.get(i, j, k);
            Ok(Some(OracleNode {
                anchor: i,
                layer: j,
                node: k,
                solver,
                oracle,
                deviation: (solver - oracle).abs(),
                rules_enumerated: 1 << subtree_nodes(n, j),
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let nodes: Vec<OracleNode> = results.into_iter().flatten().collect();
    Ok(OracleReport {
        steps: n,
        tolerance: ORACLE_TOLERANCE,
        nodes_checked: nodes.len(),
        nodes_skipped: skipped,
        max_deviation: nodes.iter().map(|r| r.deviation).fold(0.0, f64::max),
        nodes,
    })
}
