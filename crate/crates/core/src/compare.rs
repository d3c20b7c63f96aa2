//! Comparison of ordered instances and the monotone approximation scheme.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::layer_offset;
use crate::grid::{Lattice, NodeFunction};
use crate::instances::InstanceSpec;
use crate::snell::SnellSlice;
use crate::volterra::{phi_step, solve, PicardConfig, Solution};

pub const ORDER_TOLERANCE: f64 = 1e-9;
/// Relative padding applied to the solved `(y, z)` ranges when checking driver order.
pub const RANGE_PADDING: f64 = 0.2;
const RANGE_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equal,
    Below,
}

/// Order relations of terminal and obstacle data, established on the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderWitness {
    pub terminal: Relation,
    pub obstacle: Relation,
}

/// Two instances with `ξ_lo ≤ ξ_hi` and `L_lo ≤ L_hi` on every lattice node.
#[derive(Debug, Clone)]
pub struct OrderedPair {
    pub lo: InstanceSpec,
    pub hi: InstanceSpec,
    pub witness: OrderWitness,
}

impl OrderedPair {
    pub fn new(lo: InstanceSpec, hi: InstanceSpec, lat: &Lattice) -> Result<Self> {
        let n = lat.steps();
        let mut terminal = Relation::Equal;
        for i in 0..=n {
            let ti = lat.time(i);
            for (k, &x) in lat.x(n).iter().enumerate() {
                let (a, b) = (lo.terminal.eval(ti, x), hi.terminal.eval(ti, x));
                if a > b + ORDER_TOLERANCE {
                    return Err(Error::OrderingViolation {
                        datum: "terminal",
                        anchor: i,
                        layer: n,
                        node: k,
                        excess: a - b,
                    });
                }
                if a < b {
                    terminal = Relation::Below;
                }
            }
        }
        let mut obstacle = Relation::Equal;
        for j in 0..=n {
            for (k, &x) in lat.x(j).iter().enumerate() {
                let (a, b) = (lo.obstacle.eval(lat.time(j), x), hi.obstacle.eval(lat.time(j), x));
                if a > b + ORDER_TOLERANCE {
                    return Err(Error::OrderingViolation {
                        datum: "obstacle",
                        anchor: j,
                        layer: j,
                        node: k,
                        excess: a - b,
                    });
                }
                if a < b {
                    obstacle = Relation::Below;
                }
            }
        }
        Ok(Self {
            lo,
            hi,
            witness: OrderWitness { terminal, obstacle },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `max_{i,k} (Y_lo − Y_hi)`
    pub max_excess: f64,
    /// `(layer, node)` attaining `max_excess`.
    pub witness: (usize, usize),
    pub tolerance: f64,
    pub holds: bool,
    pub terminal: Relation,
    pub obstacle: Relation,
    /// Largest `f_lo − f_hi` seen on the sampled `(y, z)` box over all nodes.
    pub driver_excess: f64,
    pub driver_ordered: bool,
    /// One of the drivers is nondecreasing in `y` on the sampled box.
    pub monotone_in_y: bool,
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let w = (hi - lo).max(1e-3 * (1.0 + lo.abs().max(hi.abs())));
    (lo - RANGE_PADDING * w, hi + RANGE_PADDING * w)
}

fn range_of<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

fn grid_points((lo, hi): (f64, f64)) -> Vec<f64> {
    (0..RANGE_SAMPLES)
        .map(|s| lo + (hi - lo) * s as f64 / (RANGE_SAMPLES - 1) as f64)
        .collect()
}

/// Maximum of `f_a − f_b` and the minimum `y`-slope of each driver over all
/// lattice nodes and the `(y, z)` sample box.
fn driver_survey(lat: &Lattice, a: &InstanceSpec, b: &InstanceSpec, ys: &[f64], zs: &[f64]) -> (f64, f64, f64) {
    let n = lat.steps();
    let mut excess = f64::NEG_INFINITY;
    let mut slope_a = f64::INFINITY;
    let mut slope_b = f64::INFINITY;
    for i in 0..=n {
        let ti = lat.time(i);
        for j in i..n {
            let tj = lat.time(j);
            for &x in lat.x(j) {
                for &z in zs {
                    let mut prev: Option<(f64, f64, f64)> = None;
                    for &y in ys {
                        let fa = a.driver.eval(ti, tj, x, y, z);
                        let fb = b.driver.eval(ti, tj, x, y, z);
                        excess = excess.max(fa - fb);
                        if let Some((py, pa, pb)) = prev {
                            slope_a = slope_a.min((fa - pa) / (y - py));
                            slope_b = slope_b.min((fb - pb) / (y - py));
                        }
                        prev = Some((y, fa, fb));
                    }
                }
            }
        }
    }
    (excess, slope_a, slope_b)
}

/// Solves both members of the pair and reports `max (Y_lo − Y_hi)`, and
/// whether the driver order holds on the solved `(y, z)` ranges padded by 20%.
pub fn check_comparison(lat: &Lattice, pair: &OrderedPair, cfg: &PicardConfig) -> Result<ComparisonReport> {
    let lo = solve(lat, &pair.lo, cfg)?;
    let hi = solve(lat, &pair.hi, cfg)?;
    Ok(comparison_of_solutions(lat, pair, &lo, &hi))
}

pub fn comparison_of_solutions(lat: &Lattice, pair: &OrderedPair, lo: &Solution, hi: &Solution) -> ComparisonReport {
    let mut max_excess = f64::NEG_INFINITY;
    let mut witness = (0, 0);
    for (j, (a, b)) in lo.y_diag.iter().zip(&hi.y_diag).enumerate() {
        for (k, (p, q)) in a.values().iter().zip(b.values()).enumerate() {
            if p - q > max_excess {
                max_excess = p - q;
                witness = (j, k);
            }
        }
    }
    let y_range = padded_pair(
        range_of(lo.y_diag.iter().flat_map(|f| f.values())),
        range_of(hi.y_diag.iter().flat_map(|f| f.values())),
    );
    let z_range = match (lo.z(), hi.z()) {
        (Ok(a), Ok(b)) => padded_pair(
            range_of((0..=lat.steps()).flat_map(|i| a.anchor(i).iter())),
            range_of((0..=lat.steps()).flat_map(|i| b.anchor(i).iter())),
        ),
        _ => padded(0.0, 0.0),
    };
    let (driver_excess, slope_lo, slope_hi) =
        driver_survey(lat, &pair.lo, &pair.hi, &grid_points(y_range), &grid_points(z_range));
    ComparisonReport {
        max_excess,
        witness,
        tolerance: ORDER_TOLERANCE,
        holds: max_excess <= ORDER_TOLERANCE,
        terminal: pair.witness.terminal,
        obstacle: pair.witness.obstacle,
        driver_excess,
        driver_ordered: driver_excess <= ORDER_TOLERANCE,
        monotone_in_y: slope_lo >= -ORDER_TOLERANCE || slope_hi >= -ORDER_TOLERANCE,
        y_range,
        z_range,
    }
}

fn padded_pair(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    padded(a.0.min(b.0), a.1.max(b.1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub theta: f64,
    /// `E[Y_n(0)]` for each member of the sequence.
    pub y0: Vec<f64>,
    /// Largest `Y_n − Y_{n−1}` over all nodes, for `n ≥ 1`.
    pub max_rise: Vec<f64>,
    /// `‖(Y_n, Z_n, K_n) − (Y_{n−1}, Z_{n−1}, K_{n−1})‖_θ` for `n ≥ 1`.
    pub increments: Vec<f64>,
    pub nonincreasing: bool,
}

impl MonotoneReport {
    pub fn increment_ratios(&self) -> Vec<f64> {
        self.increments.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// `θ = 1.01 · 2 c_f² (1 + 2T)`.
pub fn default_theta(spec: &InstanceSpec) -> f64 {
    1.01 * 2.0 * spec.driver.lipschitz.powi(2) * (1.0 + 2.0 * spec.horizon)
}

/// `Y_0` solves `dominating`; `Y_n` solves the problem with `Y_{n−1}` frozen
/// in the `y` slot of the driver. `n_max` counts the members of the sequence.
pub fn monotone_scheme(
    lat: &Lattice,
    spec: &InstanceSpec,
    dominating: &InstanceSpec,
    n_max: usize,
    cfg: &PicardConfig,
) -> Result<MonotoneReport> {
    if n_max == 0 {
        return Err(crate::error::invalid("n_max", "must be at least 1"));
    }
    check_nondecreasing_in_y(lat, spec)?;
    let n = lat.steps();
    let theta = default_theta(spec);
    let start = solve(lat, dominating, cfg)?;
    let mut prev: Vec<SnellSlice> = (0..=n).map(|i| start.slice(i)).collect::<Result<_>>()?;
    let mut prev_y = start.y_diag.clone();
    let mut report = MonotoneReport {
        theta,
        y0: vec![prev_y[0][0]],
        max_rise: Vec::new(),
        increments: Vec::new(),
        nonincreasing: true,
    };
    for _ in 1..n_max {
        let next = phi_step(lat, spec, &prev_y, None, 0..=n)?;
        let next_y: Vec<NodeFunction> = next
            .iter()
            .map(|s| NodeFunction::new(s.anchor(), s.diag().to_vec()))
            .collect::<Result<_>>()?;
        let rise = next_y
            .iter()
            .zip(&prev_y)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(p, q)| p - q))
            .fold(f64::NEG_INFINITY, f64::max);
        report.max_rise.push(rise);
        report.nonincreasing &= rise <= ORDER_TOLERANCE;
        report.increments.push(theta_distance(lat, theta, &next, &prev));
        report.y0.push(next_y[0][0]);
        prev = next;
        prev_y = next_y;
    }
    Ok(report)
}

fn check_nondecreasing_in_y(lat: &Lattice, spec: &InstanceSpec) -> Result<()> {
    let ys = grid_points((-2.0, 2.0));
    let zs = grid_points((-1.0, 1.0));
    let (_, slope, _) = driver_survey(lat, spec, spec, &ys, &zs);
    if slope < -ORDER_TOLERANCE {
        return Err(Error::Unsupported(format!(
            "monotone scheme needs a driver nondecreasing in y (slope {slope} found)"
        )));
    }
    Ok(())
}

/// `sqrt(Σ_i dt e^{θ t_i} (E|ΔY_i|² + E|ΔK(t_i, T)|²) + Σ_i Σ_j dt² e^{θ t_j} E|ΔZ_ij|²)`,
/// with `ΔK(t_i, T)` the path-wise total of the increment differences.
pub fn theta_distance(lat: &Lattice, theta: f64, a: &[SnellSlice], b: &[SnellSlice]) -> f64 {
    let n = lat.steps();
    let dt = lat.dt();
    let mut acc = 0.0;
    for (sa, sb) in a.iter().zip(b) {
        let i = sa.anchor();
        let w = (theta * lat.time(i)).exp();
        let dy: f64 = lat
            .node_probs(i)
            .iter()
            .zip(sa.diag().iter().zip(sb.diag()))
            .map(|(p, (x, y))| p * (x - y).powi(2))
            .sum();
        acc += dt * w * (dy + k_total_second_moment(lat, sa, sb));
        for j in i..n {
            let wj = (theta * lat.time(j)).exp();
            let o = layer_offset(i, j);
            let dz: f64 = lat
                .node_probs(j)
                .iter()
                .enumerate()
                .map(|(k, p)| p * (sa.z[o + k] - sb.z[o + k]).powi(2))
                .sum();
            acc += dt * dt * wj * dz;
        }
    }
    acc.sqrt()
}

/// `E|Σ_{j ≥ i} (ΔK_a − ΔK_b)_j|²` by a backward recursion on the first two
/// conditional moments.
fn k_total_second_moment(lat: &Lattice, a: &SnellSlice, b: &SnellSlice) -> f64 {
    let n = lat.steps();
    let i = a.anchor();
    let mut m1 = vec![0.0; n + 1];
    let mut m2 = vec![0.0; n + 1];
    for j in (i..n).rev() {
        let (ka, kb) = (a.kinc(j), b.kinc(j));
        let mut n1 = vec![0.0; j + 1];
        let mut n2 = vec![0.0; j + 1];
        for k in 0..=j {
            let d = ka[k] - kb[k];
            let e1 = 0.5 * (m1[k] + m1[k + 1]);
            let e2 = 0.5 * (m2[k] + m2[k + 1]);
            n1[k] = d + e1;
            n2[k] = d * d + 2.0 * d * e1 + e2;
        }
        m1 = n1;
        m2 = n2;
    }
    lat.expectation(i, &m2[..=i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_lattice, TimeGrid};
    use crate::instances::{catalog_default, catalog_instance, Param, ParamMap};

    fn lattice_for(spec: &InstanceSpec, n: usize) -> Lattice {
        let grid = TimeGrid::new(spec.horizon, n).unwrap();
        build_lattice(&grid, spec.x0, &spec.dynamics).unwrap()
    }

    fn params(kv: &[(&str, f64)]) -> ParamMap {
        kv.iter().map(|(k, v)| (k.to_string(), Param::Num(*v))).collect()
    }

    #[test]
    fn identical_instances() {
        let spec = catalog_default("hyperbolic_discount", 1.0).unwrap();
        let lat = lattice_for(&spec, 20);
        let pair = OrderedPair::new(spec.clone(), spec, &lat).unwrap();
        let rep = check_comparison(&lat, &pair, &PicardConfig::default()).unwrap();
        assert_eq!(rep.max_excess, 0.0);
        assert!(rep.holds && rep.driver_ordered);
        assert_eq!(pair.witness.terminal, Relation::Equal);
    }

    #[test]
    fn ordered_strikes() {
        let lo = catalog_instance("american_put", &params(&[("strike", 1.0)]), 1.0).unwrap();
        let hi = catalog_instance("american_put", &params(&[("strike", 1.1)]), 1.0).unwrap();
        let lat = lattice_for(&lo, 30);
        let pair = OrderedPair::new(lo.clone(), hi.clone(), &lat).unwrap();
        let rep = check_comparison(&lat, &pair, &PicardConfig::default()).unwrap();
        assert!(rep.holds, "{}", rep.max_excess);
        assert!(rep.max_excess <= 0.0);
        assert!(rep.y_range.0 < 0.0 && rep.y_range.1 > 0.1);
        assert!(OrderedPair::new(hi, lo, &lat).is_err());
    }

    #[test]
    fn shifted_drivers() {
        let lo = catalog_default("hyperbolic_discount", 1.0).unwrap();
        let hi = lo.with_driver_shift(0.1);
        let lat = lattice_for(&lo, 30);
        let pair = OrderedPair::new(lo.clone(), hi.clone(), &lat).unwrap();
        let rep = check_comparison(&lat, &pair, &PicardConfig::default()).unwrap();
        assert!(rep.holds && rep.driver_ordered);
        let rev = OrderedPair::new(hi, lo, &lat).unwrap();
        let rep = check_comparison(&lat, &rev, &PicardConfig::default()).unwrap();
        assert!(!rep.driver_ordered);
        assert!(!rep.holds);
    }

    #[test]
    fn monotone_scheme_decreases() {
        let spec = catalog_instance("linear_z", &params(&[("b", 0.3)]), 1.0).unwrap();
        let lat = lattice_for(&spec, 30);
        let dom = spec.with_terminal_shift(0.2);
        let rep = monotone_scheme(&lat, &spec, &dom, 6, &PicardConfig::default()).unwrap();
        assert!(rep.nonincreasing, "{:?}", rep.max_rise);
        assert!(rep.increment_ratios().iter().all(|r| *r < 1.0), "{:?}", rep.increments);
        let exact = solve(&lat, &spec, &PicardConfig::default()).unwrap();
        assert!(rep.y0.last().unwrap() - exact.y0() < 1e-3);
        assert!(rep.y0.last().unwrap() >= &(exact.y0() - 1e-12));
    }

    #[test]
    fn monotone_scheme_degenerate_cases() {
        let spec = catalog_default("zero_driver_flat", 1.0).unwrap();
        let lat = lattice_for(&spec, 10);
        let rep = monotone_scheme(&lat, &spec, &spec, 1, &PicardConfig::default()).unwrap();
        assert_eq!(rep.y0.len(), 1);
        assert!(rep.increments.is_empty());

        let dom = spec.with_driver_shift(0.5);
        let rep = monotone_scheme(&lat, &spec, &dom, 4, &PicardConfig::default()).unwrap();
        assert!(rep.increments[0] > 0.0);
        assert!(rep.increments[1..].iter().all(|&d| d == 0.0));

        let put = catalog_default("american_put", 1.0).unwrap();
        assert!(monotone_scheme(&lat, &put, &put, 3, &PicardConfig::default()).is_err());
    }
}
