//! Time-inconsistent optimal stopping.
//!
//! For anchor `t` the optimal rule is the first time the accompanying value
//! `Ỹ(t, ·)` touches the obstacle. Because `Ỹ(t, ·)` depends on `t`, the rule
//! chosen at time 0 is in general no longer optimal when re-evaluated at a
//! later anchor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{anchor_len, layer_offset};
use crate::grid::Lattice;
use crate::instances::InstanceSpec;
use crate::oracle::{FrozenDriver, StoppingRule};
use crate::volterra::Solution;

pub const DEFAULT_ATOL: f64 = 1e-9;

/// Stop regions `{(j, k) : Ỹ(t_i, t_j) − L(t_j) ≤ atol}` for every anchor `i`,
/// with layer `N` always included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingFrontier {
    steps: usize,
    atol: f64,
    regions: Vec<Vec<bool>>,
}

impl StoppingFrontier {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn atol(&self) -> f64 {
        self.atol
    }

    pub fn is_stop(&self, i: usize, j: usize, k: usize) -> bool {
        self.regions[i][layer_offset(i, j) + k]
    }

    /// `τ*_{t_i}` as a node-flag rule.
    pub fn rule(&self, i: usize) -> StoppingRule {
        StoppingRule::from_fn(i, i, self.steps, |j, k| self.is_stop(i, j, k))
    }

    /// The stop region of anchor `from`, followed from layer `i` on and
    /// judged with the preferences of anchor `i`.
    pub fn restarted_rule(&self, from: usize, i: usize) -> StoppingRule {
        assert!(from <= i);
        StoppingRule::from_fn(i, i, self.steps, |j, k| self.is_stop(from, j, k))
    }

    /// Number of nodes on layers `≥ max(a, b)` where the regions of `a` and `b` differ.
    pub fn region_difference(&self, a: usize, b: usize) -> usize {
        let lo = a.max(b);
        (lo..=self.steps)
            .map(|j| (0..=j).filter(|&k| self.is_stop(a, j, k) != self.is_stop(b, j, k)).count())
            .sum()
    }
}

pub fn extract_frontier(sol: &Solution, lat: &Lattice, spec: &InstanceSpec, atol: f64) -> Result<StoppingFrontier> {
    let n = lat.steps();
    let ytilde = sol.ytilde()?;
    let regions = (0..=n)
        .map(|i| {
            let mut r = vec![false; anchor_len(i, n)];
            for j in i..=n {
                let o = layer_offset(i, j);
                let y = ytilde.layer(i, j);
                for (k, &x) in lat.x(j).iter().enumerate() {
                    r[o + k] = j == n || y[k] - spec.obstacle.eval(lat.time(j), x) <= atol;
                }
            }
            r
        })
        .collect();
    Ok(StoppingFrontier { steps: n, atol, regions })
}

/// Range of states in a stop region on one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierRow {
    pub anchor_time: f64,
    pub time: f64,
    pub critical_state_low: f64,
    pub critical_state_high: f64,
}

/// One row per `(anchor, layer)` with a non-empty stop set.
pub fn frontier_rows(frontier: &StoppingFrontier, lat: &Lattice) -> Vec<FrontierRow> {
    let n = frontier.steps;
    let mut rows = Vec::new();
    for i in 0..=n {
        for j in i..=n {
            let xs: Vec<f64> = (0..=j).filter(|&k| frontier.is_stop(i, j, k)).map(|k| lat.x(j)[k]).collect();
            if xs.is_empty() {
                continue;
            }
            rows.push(FrontierRow {
                anchor_time: lat.time(i),
                time: lat.time(j),
                critical_state_low: xs.iter().copied().fold(f64::INFINITY, f64::min),
                critical_state_high: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    rows
}

/// `J(t_i, τ) = E[∫_{t_i}^τ f ds + L(τ)1{τ<T} + ξ(t_i)1{τ=T}]` for a rule
/// starting at layer `i`, by backward policy evaluation on the lattice with
/// the driver frozen at the solution's `(Y, Z)`.
pub fn evaluate_j(lat: &Lattice, spec: &InstanceSpec, sol: &Solution, rule: &StoppingRule) -> Result<f64> {
    let n = lat.steps();
    if rule.steps() != n {
        return Err(Error::LayerMismatch {
            expected: n,
            got: rule.steps(),
        });
    }
    let i = rule.anchor();
    let start = rule.start();
    let frozen = FrozenDriver::from_solution(sol, i)?;
    let ti = lat.time(i);
    let mut v: Vec<f64> = lat.x(n).iter().map(|&x| spec.terminal.eval(ti, x)).collect();
    for j in (start..n).rev() {
        let tj = lat.time(j);
        let o = layer_offset(i, j);
        v = lat
            .x(j)
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if rule.stops(j, k) {
                    spec.obstacle.eval(tj, x)
                } else {
                    let f = spec.driver.eval(ti, tj, x, frozen.y[j][k], frozen.z[o + k]);
                    0.5 * (v[k] + v[k + 1]) + f * lat.dt()
                }
            })
            .collect();
    }
    Ok(lat.expectation(start, &v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorConsistency {
    pub anchor: usize,
    pub anchor_time: f64,
    pub expected_y: f64,
    /// `J(t_i, τ*_{t_i})`
    pub j_optimal: f64,
    /// `J(t_i, ·)` of the anchor-0 region followed from `t_i` on.
    pub j_restarted: f64,
    pub gap: f64,
    /// Nodes where the stop regions of anchors 0 and `i` differ.
    pub region_difference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub steps: usize,
    pub atol: f64,
    pub anchors: Vec<AnchorConsistency>,
    pub max_gap: f64,
    pub min_gap: f64,
    /// `max_i |J(t_i, τ*_{t_i}) − E[Y(t_i)]|`
    pub max_optimality_defect: f64,
    /// Some interior anchor has `gap > 0`.
    pub time_inconsistent: bool,
    pub anchor_dependent_frontier: bool,
}

pub fn inconsistency_report(lat: &Lattice, spec: &InstanceSpec, sol: &Solution, atol: f64) -> Result<ConsistencyReport> {
    let n = lat.steps();
    let frontier = extract_frontier(sol, lat, spec, atol)?;
    let mut anchors = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let expected_y = lat.expectation(i, sol.y_diag[i].values());
        let j_optimal = evaluate_j(lat, spec, sol, &frontier.rule(i))?;
        let j_restarted = evaluate_j(lat, spec, sol, &frontier.restarted_rule(0, i))?;
        anchors.push(AnchorConsistency {
            anchor: i,
            anchor_time: lat.time(i),
            expected_y,
            j_optimal,
            j_restarted,
            gap: j_optimal - j_restarted,
            region_difference: frontier.region_difference(0, i),
        });
    }
    let max_gap = anchors.iter().map(|a| a.gap).fold(f64::NEG_INFINITY, f64::max);
    let min_gap = anchors.iter().map(|a| a.gap).fold(f64::INFINITY, f64::min);
    let max_optimality_defect = anchors
        .iter()
        .map(|a| (a.j_optimal - a.expected_y).abs())
        .fold(0.0, f64::max);
    let time_inconsistent = anchors.iter().any(|a| a.anchor > 0 && a.anchor < n && a.gap > atol);
    let anchor_dependent_frontier = anchors.iter().any(|a| a.region_difference > 0);
    Ok(ConsistencyReport {
        steps: n,
        atol,
        anchors,
        max_gap,
        min_gap,
        max_optimality_defect,
        time_inconsistent,
        anchor_dependent_frontier,
    })
}

/// Largest cumulative `K` increment picked up strictly before `τ*_{t_i}` on
/// any path, over all anchors. Zero when `K` never moves off the obstacle.
pub fn premature_k(frontier: &StoppingFrontier, sol: &Solution) -> Result<f64> {
    let n = frontier.steps;
    let kinc = sol.kinc()?;
    let mut worst = 0.0f64;
    for i in 0..=n {
        let mut m = vec![0.0f64; n + 1];
        for j in (i..n).rev() {
            let dk = kinc.layer(i, j);
            m = (0..=j)
                .map(|k| {
                    if frontier.is_stop(i, j, k) {
                        0.0
                    } else {
                        dk[k] + m[k].max(m[k + 1])
                    }
                })
                .collect();
        }
        worst = worst.max(m.iter().copied().fold(0.0, f64::max));
    }
    Ok(worst)
}

/// Where the stop sets read off the diagonal `Y(t_j) − L(t_j) ≤ atol` differ
/// from the envelope regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalComparison {
    pub differing_nodes: usize,
    /// First `(anchor, layer, node)` found.
    pub witness: Option<(usize, usize, usize)>,
}

pub fn compare_with_diagonal(frontier: &StoppingFrontier, sol: &Solution, lat: &Lattice, spec: &InstanceSpec) -> DiagonalComparison {
    let n = frontier.steps;
    let mut differing_nodes = 0;
    let mut witness = None;
    for i in 0..=n {
        for j in i..n {
            for (k, &x) in lat.x(j).iter().enumerate() {
                let diag_stop = sol.y_diag[j][k] - spec.obstacle.eval(lat.time(j), x) <= frontier.atol;
                if diag_stop != frontier.is_stop(i, j, k) {
                    differing_nodes += 1;
                    witness.get_or_insert((i, j, k));
                }
            }
        }
    }
    DiagonalComparison { differing_nodes, witness }
}
