//! Regression Monte Carlo.
//!
//! The same anchor-by-anchor backward recursion as the lattice solver, with
//! conditional expectations replaced by least-squares projections on a basis
//! of the state, and the same Picard coupling through the diagonal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::instances::InstanceSpec;
use crate::stopping::FrontierRow;
use crate::volterra::PicardConfig;

/// Paths per generator stream.
pub const BLOCK_PATHS: usize = 8192;
pub const GENERATOR: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64(seed), stream = block index), StandardNormal (rand_distr 0.5)";
pub const BOOTSTRAP_SAMPLES: usize = 200;
const BOOTSTRAP_STREAM: u64 = u64::MAX;

/// Simulated Brownian paths and states, stored layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
    dw: Vec<f64>,
    w: Vec<f64>,
    x: Vec<f64>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W(t_{j+1}) − W(t_j)` on every path, `j < N`.
    pub fn dw(&self, j: usize) -> &[f64] {
        &self.dw[j * self.n_paths..(j + 1) * self.n_paths]
    }

    pub fn w(&self, j: usize) -> &[f64] {
        &self.w[j * self.n_paths..(j + 1) * self.n_paths]
    }

    pub fn x(&self, j: usize) -> &[f64] {
        &self.x[j * self.n_paths..(j + 1) * self.n_paths]
    }
}

/// Forward simulation of `(W, X)`. Block `b` of [`BLOCK_PATHS`] paths draws
/// from its own stream, so the result does not depend on the thread count.
pub fn simulate(grid: &TimeGrid, spec: &InstanceSpec, n_paths: usize, seed: u64) -> Result<PathBundle> {
    if n_paths < 2 {
        return Err(invalid("n_paths", "need at least 2 paths"));
    }
    spec.dynamics.validate()?;
    if !spec.x0.is_finite() {
        return Err(invalid("x0", "must be finite"));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let sd = dt.sqrt();
    let blocks = n_paths.div_ceil(BLOCK_PATHS);
    // Each block yields its paths' increments path-major.
    let drawn: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK_PATHS.min(n_paths - b * BLOCK_PATHS);
            (0..count * n)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut dw = vec![0.0; n * n_paths];
    let mut w = vec![0.0; (n + 1) * n_paths];
    let mut x = vec![0.0; (n + 1) * n_paths];
    for (b, block) in drawn.iter().enumerate() {
        for (q, incs) in block.chunks_exact(n).enumerate() {
            let p = b * BLOCK_PATHS + q;
            let mut wp = 0.0;
            let mut xp = spec.x0;
            x[p] = xp;
            for (j, &d) in incs.iter().enumerate() {
                dw[j * n_paths + p] = d;
                wp += d;
                xp = match spec.dynamics.markov_value(spec.x0, grid.time(j + 1), wp) {
                    Some(v) => v,
                    None => spec.dynamics.step(xp, dt, d),
                };
                w[(j + 1) * n_paths + p] = wp;
                x[(j + 1) * n_paths + p] = xp;
            }
        }
    }
    Ok(PathBundle {
        n_paths,
        grid: grid.clone(),
        seed,
        dw,
        w,
        x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// `1, u, …, u^degree` in the standardised state `u`.
    Polynomial,
    /// `1, u, (u − κ_m)⁺` with `degree` knots spread evenly over `[−2, 2]`.
    PiecewiseLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub family: BasisFamily,
    pub degree: usize,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial,
            degree,
        }
    }

    pub fn piecewise_linear(knots: usize) -> Self {
        Self {
            family: BasisFamily::PiecewiseLinear,
            degree: knots,
        }
    }

    pub fn dim(&self) -> usize {
        match self.family {
            BasisFamily::Polynomial => self.degree + 1,
            BasisFamily::PiecewiseLinear => self.degree + 2,
        }
    }
}

/// Least-squares projection onto the basis at one layer.
struct Projector {
    dim: usize,
    family: BasisFamily,
    mean: f64,
    scale: f64,
    knots: Vec<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Projector {
    fn new(xs: &[f64], basis: RegressionBasis, layer: usize) -> Result<Self> {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let scale = var.sqrt();
        if !(scale > 1e-12 * (1.0 + mean.abs())) {
            // A degenerate cloud (layer 0) only supports the constant.
            return Ok(Self {
                dim: 1,
                family: BasisFamily::Polynomial,
                mean,
                scale: 1.0,
                knots: Vec::new(),
                chol: None,
            });
        }
        let dim = basis.dim();
        let knots = match basis.family {
            BasisFamily::PiecewiseLinear if basis.degree > 0 => (0..basis.degree)
                .map(|m| -2.0 + 4.0 * (m as f64 + 1.0) / (basis.degree as f64 + 1.0))
                .collect(),
            _ => Vec::new(),
        };
        let mut p = Self {
            dim,
            family: basis.family,
            mean,
            scale,
            knots,
            chol: None,
        };
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut phi = vec![0.0; dim];
        for &x in xs {
            p.features(x, &mut phi);
            for a in 0..dim {
                for b in 0..=a {
                    gram[(a, b)] += phi[a] * phi[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        gram /= n;
        let rank_err = Error::RankDeficient {
            layer,
            dim,
            n_paths: xs.len(),
        };
        let chol = gram.cholesky().ok_or(rank_err.clone())?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
        if !(lo > 1e-7 * hi) {
            return Err(rank_err);
        }
        p.chol = Some(chol);
        Ok(p)
    }

    #[inline]
    fn features(&self, x: f64, out: &mut [f64]) {
        let u = (x - self.mean) / self.scale;
        out[0] = 1.0;
        match self.family {
            BasisFamily::Polynomial => {
                for d in 1..self.dim {
                    out[d] = out[d - 1] * u;
                }
            }
            BasisFamily::PiecewiseLinear => {
                if self.dim > 1 {
                    out[1] = u;
                }
                for (m, k) in self.knots.iter().enumerate() {
                    out[m + 2] = (u - k).max(0.0);
                }
            }
        }
    }

    /// Fitted values of the projections of `a` and of `a · b` (both at once).
    fn project_pair(&self, xs: &[f64], a: &[f64], b: &[f64], fit_a: &mut [f64], fit_ab: &mut [f64]) {
        let n = xs.len() as f64;
        let dim = self.dim;
        let mut phi = [0.0; 32];
        let phi = &mut phi[..dim];
        let mut ra = DVector::<f64>::zeros(dim);
        let mut rb = DVector::<f64>::zeros(dim);
        for ((&x, &va), &vb) in xs.iter().zip(a).zip(b) {
            self.features(x, phi);
            let vab = va * vb;
            for d in 0..dim {
                ra[d] += phi[d] * va;
                rb[d] += phi[d] * vab;
            }
        }
        ra /= n;
        rb /= n;
        let (ca, cb) = match &self.chol {
            Some(c) => (c.solve(&ra), c.solve(&rb)),
            None => (ra, rb),
        };
        for ((&x, fa), fb) in xs.iter().zip(fit_a.iter_mut()).zip(fit_ab.iter_mut()) {
            self.features(x, phi);
            let mut sa = 0.0;
            let mut sb = 0.0;
            for d in 0..dim {
                sa += phi[d] * ca[d];
                sb += phi[d] * cb[d];
            }
            *fa = sa;
            *fb = sb;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSolution {
    pub n_paths: usize,
    pub seed: u64,
    pub generator: String,
    pub basis: RegressionBasis,
    pub y0: f64,
    /// Bootstrap standard error of `y0` over the final averaging step.
    pub y0_se: f64,
    pub bootstrap_samples: usize,
    /// Sample mean of `Y(t_i)` for every anchor.
    pub y_mean: Vec<f64>,
    pub iterations: usize,
    /// Y-only E-norm of successive Picard increments.
    pub residual_history: Vec<f64>,
    pub frontier: Vec<FrontierRow>,
    /// Smallest `Ỹ − L` over all paths, anchors and layers of the final sweep.
    pub min_obstacle_margin: f64,
}

struct SliceOutput {
    diag: Vec<f64>,
    /// For anchor 0 only: values on layer 1 and the `Z` regression target inputs.
    first_layer: Option<Vec<f64>>,
    rows: Vec<FrontierRow>,
    min_margin: f64,
}

struct McProblem<'a> {
    bundle: &'a PathBundle,
    spec: &'a InstanceSpec,
    projectors: Vec<Projector>,
    obstacle: Vec<Vec<f64>>,
    atol: f64,
}

impl McProblem<'_> {
    fn slice(&self, i: usize, u: &[Vec<f64>]) -> SliceOutput {
        let b = self.bundle;
        let n = b.grid.steps();
        let np = b.n_paths;
        let dt = b.grid.dt();
        let ti = b.grid.time(i);
        let mut v: Vec<f64> = b.x(n).iter().map(|&x| self.spec.terminal.eval(ti, x)).collect();
        let xs_n = b.x(n);
        let mut rows = vec![FrontierRow {
            anchor_time: ti,
            time: b.grid.time(n),
            critical_state_low: xs_n.iter().copied().fold(f64::INFINITY, f64::min),
            critical_state_high: xs_n.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }];
        let mut first_layer = None;
        let mut cont = vec![0.0; np];
        let mut zfit = vec![0.0; np];
        let mut min_margin = f64::INFINITY;
        for j in (i..n).rev() {
            if i == 0 && j == 0 {
                first_layer = Some(v.clone());
            }
            let xs = b.x(j);
            self.projectors[j].project_pair(xs, &v, b.dw(j), &mut cont, &mut zfit);
            let tj = b.grid.time(j);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in 0..np {
                let z = zfit[p] / dt;
                let c = cont[p] + self.spec.driver.eval(ti, tj, xs[p], u[j][p], z) * dt;
                let l = self.obstacle[j][p];
                let y = if l > c { l } else { c };
                if y - l <= self.atol {
                    lo = lo.min(xs[p]);
                    hi = hi.max(xs[p]);
                }
                min_margin = min_margin.min(y - l);
                v[p] = y;
            }
            if lo <= hi {
                rows.push(FrontierRow {
                    anchor_time: ti,
                    time: tj,
                    critical_state_low: lo,
                    critical_state_high: hi,
                });
            }
        }
        rows.reverse();
        SliceOutput {
            diag: v,
            first_layer,
            rows,
            min_margin,
        }
    }
}

/// Squared E-norm contribution `dt · mean_p |a − b|²` and sup of one layer.
fn layer_increment(a: &[f64], b: &[f64], dt: f64) -> (f64, f64) {
    let n = a.len() as f64;
    a.iter().zip(b).fold((0.0, 0.0f64), |(s, m), (x, y)| {
        let d = x - y;
        (s + dt * d * d / n, m.max(d.abs()))
    })
}

/// Regression Monte Carlo solution with Picard coupling through the diagonal.
pub fn solve_mc(bundle: &PathBundle, spec: &InstanceSpec, basis: RegressionBasis, cfg: &PicardConfig) -> Result<McSolution> {
    cfg.validate()?;
    if basis.dim() > 32 {
        return Err(invalid("basis_degree", "at most 31"));
    }
    let np = bundle.n_paths;
    if np < 2 * basis.dim() {
        return Err(invalid(
            "n_paths",
            format!("need at least {} paths for a basis of dimension {}", 2 * basis.dim(), basis.dim()),
        ));
    }
    let grid = &bundle.grid;
    let n = grid.steps();
    let dt = grid.dt();
    let projectors = (0..n)
        .map(|j| Projector::new(bundle.x(j), basis, j))
        .collect::<Result<Vec<_>>>()?;
    let obstacle = (0..=n)
        .map(|j| {
            let t = grid.time(j);
            bundle.x(j).iter().map(|&x| spec.obstacle.eval(t, x)).collect()
        })
        .collect();
    let problem = McProblem {
        bundle,
        spec,
        projectors,
        obstacle,
        atol: crate::stopping::DEFAULT_ATOL,
    };
    let state_free = spec.driver.is_state_free();
    let mut u: Vec<Vec<f64>> = (0..=n).map(|_| vec![cfg.initial_level; np]).collect();
    let mut history = Vec::new();
    for iter in 1..=cfg.max_iters {
        let outs: Vec<SliceOutput> = (0..=n).into_par_iter().map(|i| problem.slice(i, &u)).collect();
        let (sq, sup) = outs
            .iter()
            .enumerate()
            .map(|(i, o)| layer_increment(&o.diag, &u[i], dt))
            .fold((0.0, 0.0f64), |a, b| (a.0 + b.0, a.1.max(b.1)));
        let (res, sup) = if state_free { (0.0, 0.0) } else { (sq.sqrt(), sup) };
        history.push(res);
        let driver_u0 = u[0][0];
        let mut outs = outs;
        for (i, o) in outs.iter_mut().enumerate() {
            std::mem::swap(&mut u[i], &mut o.diag);
        }
        if res < cfg.tolerance && sup < cfg.tolerance {
            let first = outs[0].first_layer.take().expect("anchor 0 has a first layer");
            let y0 = u[0][0];
            let y0_se = bootstrap_se(&first, bundle, spec, driver_u0);
            return Ok(McSolution {
                n_paths: np,
                seed: bundle.seed,
                generator: GENERATOR.to_string(),
                basis,
                y0,
                y0_se,
                bootstrap_samples: BOOTSTRAP_SAMPLES,
                y_mean: u.iter().map(|v| v.iter().sum::<f64>() / np as f64).collect(),
                iterations: iter,
                residual_history: history,
                frontier: outs.iter_mut().flat_map(|o| std::mem::take(&mut o.rows)).collect(),
                min_obstacle_margin: outs.iter().map(|o| o.min_margin).fold(f64::INFINITY, f64::min),
            });
        }
    }
    Err(Error::NoConvergence {
        iters: cfg.max_iters,
        last_residual: history.last().copied().unwrap_or(f64::NAN),
        residual_history: history,
    })
}

/// Standard deviation of `Y(0)` recomputed from resampled paths of the
/// final averaging step `max(mean(v₁) + f·dt, L(0))`, with the driver's `y`
/// held at `u0`.
fn bootstrap_se(first: &[f64], bundle: &PathBundle, spec: &InstanceSpec, u0: f64) -> f64 {
    let np = first.len();
    let dt = bundle.grid.dt();
    let dw = bundle.dw(0);
    let x0 = bundle.x(0)[0];
    let l0 = spec.obstacle.eval(0.0, x0);
    let mut rng = ChaCha20Rng::seed_from_u64(bundle.seed);
    rng.set_stream(BOOTSTRAP_STREAM);
    let estimates: Vec<f64> = (0..BOOTSTRAP_SAMPLES)
        .map(|_| {
            let (mut s, mut sz) = (0.0, 0.0);
            for _ in 0..np {
                let p = rng.random_range(0..np);
                s += first[p];
                sz += first[p] * dw[p];
            }
            let mean = s / np as f64;
            let z = sz / np as f64 / dt;
            (mean + spec.driver.eval(0.0, 0.0, x0, u0, z) * dt).max(l0)
        })
        .collect();
    let m = estimates.iter().sum::<f64>() / estimates.len() as f64;
    (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64).sqrt()
}
