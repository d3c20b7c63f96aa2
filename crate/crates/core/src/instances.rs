//! Problem data `(f, ξ, L)` and state dynamics.
//!
//! The catalog is closed and parametric so that a config file never has to
//! carry code; library users can still plug in arbitrary callbacks through
//! the `Custom` variants. Every driver carries its declared Lipschitz
//! constant `c_f` and Hölder pair `(α, c₁)`, which [`verify_assumptions`]
//! spot-checks on a lattice.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::Lattice;

/// Obstacle level used by instances in which reflection must never bind.
pub const INACTIVE_OBSTACLE: f64 = -1.0e6;

/// Half-width of the `(y, z)` box on which Lipschitz and Hölder ratios are sampled.
pub const CHECK_RADIUS: f64 = 1.0;

pub const CATALOG: &[&str] = &[
    "american_put",
    "hyperbolic_discount",
    "zero_driver_flat",
    "linear_z",
    "custom_affine",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StateDynamics {
    /// `X(t) = x0 + drift·t + σ W(t)`.
    Brownian { sigma: f64, drift: f64 },
    /// `X(t) = x0 · exp((drift − σ²/2) t + σ W(t))`.
    Geometric { sigma: f64, drift: f64 },
    /// `dX = speed (mean − X) dt + σ dW`; not a function of `(t, W(t))`, so Monte Carlo only.
    OrnsteinUhlenbeck { speed: f64, mean: f64, sigma: f64 },
}

impl StateDynamics {
    pub fn brownian(sigma: f64, drift: f64) -> Self {
        StateDynamics::Brownian { sigma, drift }
    }

    pub fn geometric(sigma: f64, drift: f64) -> Self {
        StateDynamics::Geometric { sigma, drift }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            StateDynamics::Brownian { .. } => "brownian",
            StateDynamics::Geometric { .. } => "geometric",
            StateDynamics::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite, got {v}")))
            }
        };
        match *self {
            StateDynamics::Brownian { sigma, drift } | StateDynamics::Geometric { sigma, drift } => {
                finite("sigma", sigma)?;
                finite("drift", drift)?;
                if sigma < 0.0 {
                    return Err(invalid("sigma", "must be nonnegative"));
                }
            }
            StateDynamics::OrnsteinUhlenbeck { speed, mean, sigma } => {
                finite("speed", speed)?;
                finite("mean", mean)?;
                finite("sigma", sigma)?;
                if speed <= 0.0 || sigma < 0.0 {
                    return Err(invalid("speed", "speed must be positive and sigma nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// `X(t)` as a function of `W(t)`, when the dynamics admit one.
    pub fn markov_value(&self, x0: f64, t: f64, w: f64) -> Option<f64> {
        match *self {
            StateDynamics::Brownian { sigma, drift } => Some(x0 + drift * t + sigma * w),
            StateDynamics::Geometric { sigma, drift } => {
                Some(x0 * ((drift - 0.5 * sigma * sigma) * t + sigma * w).exp())
            }
            StateDynamics::OrnsteinUhlenbeck { .. } => None,
        }
    }

    pub fn is_lattice_compatible(&self) -> bool {
        self.markov_value(0.0, 0.0, 0.0).is_some()
    }

    /// Exact one-step transition for path simulation given the Brownian increment `dw`.
    pub fn step(&self, x: f64, dt: f64, dw: f64) -> f64 {
        match *self {
            StateDynamics::Brownian { sigma, drift } => x + drift * dt + sigma * dw,
            StateDynamics::Geometric { sigma, drift } => {
                x * ((drift - 0.5 * sigma * sigma) * dt + sigma * dw).exp()
            }
            StateDynamics::OrnsteinUhlenbeck { speed, mean, sigma } => {
                let decay = (-speed * dt).exp();
                let sd = sigma * ((1.0 - decay * decay) / (2.0 * speed)).sqrt();
                mean + (x - mean) * decay + sd * dw / dt.sqrt()
            }
        }
    }
}

pub type DriverFn = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type FeedbackFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DriverFamily {
    Zero,
    /// `−rate · y`
    Discount { rate: f64 },
    /// `−ρ₀ / (1 + κ(s − t)) · y`
    HyperbolicDiscount { rho0: f64, kappa: f64 },
    /// `a·z + b·y`
    LinearZ { a: f64, b: f64 },
    /// `f0 + ft·(s − t) + fx·x + fy·y + fz·z`
    Affine {
        f0: f64,
        ft: f64,
        fx: f64,
        fy: f64,
        fz: f64,
    },
    /// `(t, s, x, y, z) ↦ f`
    Custom(DriverFn),
}

impl fmt::Debug for DriverFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverFamily::Zero => write!(f, "Zero"),
            DriverFamily::Discount { rate } => write!(f, "Discount {{ rate: {rate} }}"),
            DriverFamily::HyperbolicDiscount { rho0, kappa } => {
                write!(f, "HyperbolicDiscount {{ rho0: {rho0}, kappa: {kappa} }}")
            }
            DriverFamily::LinearZ { a, b } => write!(f, "LinearZ {{ a: {a}, b: {b} }}"),
            DriverFamily::Affine { f0, ft, fx, fy, fz } => write!(
                f,
                "Affine {{ f0: {f0}, ft: {ft}, fx: {fx}, fy: {fy}, fz: {fz} }}"
            ),
            DriverFamily::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Driver `f(t, s, x, y, z)` with its declared regularity constants.
///
/// `x` is the state at the running time `s`, `y` the candidate `Y(s)` and `z`
/// the candidate `Z(t, s)`.
#[derive(Debug, Clone)]
pub struct DriverSpec {
    pub family: DriverFamily,
    /// Constant added to the family value.
    pub shift: f64,
    pub lipschitz: f64,
    pub holder_alpha: f64,
    pub holder_c1: f64,
}

impl DriverSpec {
    pub fn custom(
        f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        holder_alpha: f64,
        holder_c1: f64,
    ) -> Self {
        Self {
            family: DriverFamily::Custom(Arc::new(f)),
            shift: 0.0,
            lipschitz,
            holder_alpha,
            holder_c1,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64, s: f64, x: f64, y: f64, z: f64) -> f64 {
        let base = match &self.family {
            DriverFamily::Zero => 0.0,
            DriverFamily::Discount { rate } => -rate * y,
            DriverFamily::HyperbolicDiscount { rho0, kappa } => -rho0 / (1.0 + kappa * (s - t)) * y,
            DriverFamily::LinearZ { a, b } => a * z + b * y,
            DriverFamily::Affine { f0, ft, fx, fy, fz } => {
                f0 + ft * (s - t) + fx * x + fy * y + fz * z
            }
            DriverFamily::Custom(f) => f(t, s, x, y, z),
        };
        base + self.shift
    }

    /// A driver with `c_f = 0` ignores `(y, z)`, so the Picard map is constant.
    pub fn is_state_free(&self) -> bool {
        self.lipschitz == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PayoffShape {
    pub level: f64,
    pub time_slope: f64,
    pub state_slope: f64,
    pub put_weight: f64,
    pub call_weight: f64,
    pub strike: f64,
}

impl PayoffShape {
    pub fn constant(level: f64) -> Self {
        Self {
            level,
            time_slope: 0.0,
            state_slope: 0.0,
            put_weight: 0.0,
            call_weight: 0.0,
            strike: 0.0,
        }
    }

    pub fn put(strike: f64, weight: f64) -> Self {
        Self {
            put_weight: weight,
            strike,
            ..Self::constant(0.0)
        }
    }

    pub fn call(strike: f64, weight: f64) -> Self {
        Self {
            call_weight: weight,
            strike,
            ..Self::constant(0.0)
        }
    }

    pub fn affine_in_state(level: f64, state_slope: f64) -> Self {
        Self {
            state_slope,
            ..Self::constant(level)
        }
    }

    #[inline]
    pub fn value(&self, time: f64, x: f64) -> f64 {
        self.level
            + self.time_slope * time
            + self.state_slope * x
            + self.put_weight * (self.strike - x).max(0.0)
            + self.call_weight * (x - self.strike).max(0.0)
    }
}

#[derive(Clone)]
pub enum Feedback {
    Shape(PayoffShape),
    Custom(FeedbackFn),
}

impl fmt::Debug for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Shape(s) => write!(f, "{s:?}"),
            Feedback::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Feedback {
    #[inline]
    fn value(&self, time: f64, x: f64) -> f64 {
        match self {
            Feedback::Shape(s) => s.value(time, x),
            Feedback::Custom(f) => f(time, x),
        }
    }
}

/// Terminal map `ξ(t, X(T))`, parametrised by the anchor time `t`.
#[derive(Debug, Clone)]
pub struct TerminalSpec {
    pub family: Feedback,
    pub shift: f64,
}

impl TerminalSpec {
    pub fn shape(shape: PayoffShape) -> Self {
        Self {
            family: Feedback::Shape(shape),
            shift: 0.0,
        }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            family: Feedback::Custom(Arc::new(f)),
            shift: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, anchor: f64, x_terminal: f64) -> f64 {
        self.family.value(anchor, x_terminal) + self.shift
    }
}

/// Obstacle in feedback form `L(u, X(u))`.
#[derive(Debug, Clone)]
pub struct ObstacleSpec {
    pub family: Feedback,
    pub shift: f64,
}

impl ObstacleSpec {
    pub fn shape(shape: PayoffShape) -> Self {
        Self {
            family: Feedback::Shape(shape),
            shift: 0.0,
        }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            family: Feedback::Custom(Arc::new(f)),
            shift: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64, x: f64) -> f64 {
        self.family.value(u, x) + self.shift
    }
}

#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub name: String,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub obstacle: ObstacleSpec,
    pub dynamics: StateDynamics,
    pub x0: f64,
    pub horizon: f64,
}

impl InstanceSpec {
    pub fn with_driver_shift(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.driver.shift += delta;
        out
    }

    pub fn with_terminal_shift(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.terminal.shift += delta;
        out
    }

    pub fn with_obstacle_shift(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.obstacle.shift += delta;
        out
    }

    /// Checks `ξ(t_i, x) ≥ L(T, x)` at every terminal node for every anchor.
    pub fn check_terminal_domination(&self, lat: &Lattice) -> Result<()> {
        let n = lat.steps();
        let t_end = lat.time(n);
        for i in 0..=n {
            for (k, &x) in lat.x(n).iter().enumerate() {
                let gap = self.obstacle.eval(t_end, x) - self.terminal.eval(lat.time(i), x);
                if gap > 0.0 || gap.is_nan() {
                    return Err(Error::OrderingViolation {
                        datum: "terminal ≥ obstacle",
                        anchor: i,
                        layer: n,
                        node: k,
                        excess: gap,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Num(f64),
    Text(String),
}

pub type ParamMap = BTreeMap<String, Param>;

struct ParamReader<'a> {
    instance: &'a str,
    map: &'a ParamMap,
    used: Vec<&'a str>,
}

impl<'a> ParamReader<'a> {
    fn new(instance: &'a str, map: &'a ParamMap) -> Self {
        Self {
            instance,
            map,
            used: Vec::new(),
        }
    }

    fn num(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.used.push(key);
        match self.map.get(key) {
            None => Ok(default),
            Some(Param::Num(v)) if v.is_finite() => Ok(*v),
            Some(Param::Num(v)) => Err(invalid(key, format!("must be finite, got {v}"))),
            Some(Param::Text(s)) => Err(invalid(key, format!("expected a number, got `{s}`"))),
        }
    }

    fn text(&mut self, key: &'static str, default: &'static str) -> Result<String> {
        self.used.push(key);
        match self.map.get(key) {
            None => Ok(default.to_string()),
            Some(Param::Text(s)) => Ok(s.clone()),
            Some(Param::Num(v)) => Err(invalid(key, format!("expected a name, got {v}"))),
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.iter().any(|u| u == key) {
                return Err(Error::UnknownParameter {
                    instance: self.instance.to_string(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

fn require(name: &str, ok: bool, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

/// Builds a catalog instance, applying `overrides` on top of its defaults.
///
/// Every instance also accepts `x0` and the additive perturbations
/// `driver_shift`, `terminal_shift` and `obstacle_shift`.
pub fn catalog_instance(name: &str, overrides: &ParamMap, horizon: f64) -> Result<InstanceSpec> {
    require("T", horizon.is_finite() && horizon > 0.0, "horizon must be positive")?;
    let mut p = ParamReader::new(name, overrides);
    let sqrt_t = horizon.sqrt();
    let mut spec = match name {
        "american_put" => {
            let strike = p.num("strike", 1.0)?;
            let sigma = p.num("sigma", 0.2)?;
            let rate = p.num("rate", 0.05)?;
            let x0 = p.num("x0", 1.0)?;
            require("strike", strike > 0.0, "must be positive")?;
            require("sigma", sigma > 0.0, "must be positive")?;
            require("rate", rate >= 0.0, "must be nonnegative")?;
            require("x0", x0 > 0.0, "must be positive")?;
            let payoff = PayoffShape::put(strike, 1.0);
            InstanceSpec {
                name: name.into(),
                driver: DriverSpec {
                    family: DriverFamily::Discount { rate },
                    shift: 0.0,
                    lipschitz: rate,
                    holder_alpha: 0.5,
                    holder_c1: 0.0,
                },
                terminal: TerminalSpec::shape(payoff),
                obstacle: ObstacleSpec::shape(payoff),
                dynamics: StateDynamics::geometric(sigma, rate),
                x0,
                horizon,
            }
        }
        "hyperbolic_discount" => {
            let rho0 = p.num("rho0", 0.5)?;
            let kappa = p.num("kappa", 1.0)?;
            let terminal_scale = p.num("terminal_scale", 1.0)?;
            let offset = p.num("offset", 1.0)?;
            let sigma = p.num("sigma", 0.2)?;
            let x0 = p.num("x0", 1.0)?;
            require("rho0", rho0 >= 0.0, "must be nonnegative")?;
            require("kappa", kappa >= 0.0, "must be nonnegative")?;
            // ξ = scale·(x − b)⁺ dominates L(T) = x − b only for scale ≥ 1.
            require("terminal_scale", terminal_scale >= 1.0, "must be at least 1")?;
            require("sigma", sigma > 0.0, "must be positive")?;
            require("x0", x0 > 0.0, "must be positive")?;
            InstanceSpec {
                name: name.into(),
                driver: DriverSpec {
                    family: DriverFamily::HyperbolicDiscount { rho0, kappa },
                    shift: 0.0,
                    lipschitz: rho0,
                    holder_alpha: 0.5,
                    // |∂f/∂t| ≤ ρ₀κ|y|, turned into a ½-Hölder bound over [0, T] for |y| ≤ CHECK_RADIUS.
                    holder_c1: rho0 * kappa * sqrt_t * CHECK_RADIUS,
                },
                terminal: TerminalSpec::shape(PayoffShape::call(offset, terminal_scale)),
                obstacle: ObstacleSpec::shape(PayoffShape::affine_in_state(-offset, 1.0)),
                dynamics: StateDynamics::geometric(sigma, 0.0),
                x0,
                horizon,
            }
        }
        "zero_driver_flat" => {
            let sigma = p.num("sigma", 1.0)?;
            let x0 = p.num("x0", 0.0)?;
            require("sigma", sigma > 0.0, "must be positive")?;
            InstanceSpec {
                name: name.into(),
                driver: DriverSpec {
                    family: DriverFamily::Zero,
                    shift: 0.0,
                    lipschitz: 0.0,
                    holder_alpha: 0.5,
                    holder_c1: 0.0,
                },
                terminal: TerminalSpec::shape(PayoffShape::affine_in_state(0.0, 1.0)),
                obstacle: ObstacleSpec::shape(PayoffShape::constant(INACTIVE_OBSTACLE)),
                dynamics: StateDynamics::brownian(sigma, 0.0),
                x0,
                horizon,
            }
        }
        "linear_z" => {
            let a = p.num("a", 0.2)?;
            let b = p.num("b", 0.05)?;
            let strike = p.num("strike", 1.0)?;
            let sigma = p.num("sigma", 0.2)?;
            let x0 = p.num("x0", 1.0)?;
            require("strike", strike > 0.0, "must be positive")?;
            require("sigma", sigma > 0.0, "must be positive")?;
            require("x0", x0 > 0.0, "must be positive")?;
            let payoff = PayoffShape::put(strike, 1.0);
            InstanceSpec {
                name: name.into(),
                driver: DriverSpec {
                    family: DriverFamily::LinearZ { a, b },
                    shift: 0.0,
                    lipschitz: a.abs().max(b.abs()),
                    holder_alpha: 0.5,
                    holder_c1: 0.0,
                },
                terminal: TerminalSpec::shape(payoff),
                obstacle: ObstacleSpec::shape(payoff),
                dynamics: StateDynamics::geometric(sigma, 0.0),
                x0,
                horizon,
            }
        }
        "custom_affine" => {
            let f0 = p.num("f0", 0.0)?;
            let ft = p.num("ft", 0.0)?;
            let fx = p.num("fx", 0.0)?;
            let fy = p.num("fy", 0.0)?;
            let fz = p.num("fz", 0.0)?;
            let alpha = p.num("alpha", 0.5)?;
            let strike = p.num("strike", 1.0)?;
            let terminal = PayoffShape {
                level: p.num("xi0", 0.0)?,
                time_slope: p.num("xit", 0.0)?,
                state_slope: p.num("xix", 0.0)?,
                put_weight: p.num("xi_put", 1.0)?,
                call_weight: p.num("xi_call", 0.0)?,
                strike,
            };
            let obstacle = PayoffShape {
                level: p.num("l0", 0.0)?,
                time_slope: p.num("lu", 0.0)?,
                state_slope: p.num("lx", 0.0)?,
                put_weight: p.num("l_put", 1.0)?,
                call_weight: p.num("l_call", 0.0)?,
                strike,
            };
            let sigma = p.num("sigma", 0.2)?;
            let drift = p.num("drift", 0.0)?;
            let x0 = p.num("x0", 1.0)?;
            let dynamics = match p.text("dynamics", "geometric")?.as_str() {
                "geometric" => StateDynamics::geometric(sigma, drift),
                "brownian" => StateDynamics::brownian(sigma, drift),
                "ornstein_uhlenbeck" => StateDynamics::OrnsteinUhlenbeck {
                    speed: p.num("speed", 1.0)?,
                    mean: p.num("mean", x0)?,
                    sigma,
                },
                other => {
                    return Err(invalid(
                        "dynamics",
                        format!("expected geometric, brownian or ornstein_uhlenbeck, got `{other}`"),
                    ))
                }
            };
            require("alpha", alpha > 0.0 && alpha <= 0.5, "Hölder exponent must lie in (0, 1/2]")?;
            require("sigma", sigma >= 0.0, "must be nonnegative")?;
            InstanceSpec {
                name: name.into(),
                driver: DriverSpec {
                    family: DriverFamily::Affine { f0, ft, fx, fy, fz },
                    shift: 0.0,
                    lipschitz: fy.abs().max(fz.abs()),
                    holder_alpha: alpha,
                    holder_c1: ft.abs() * horizon.powf(1.0 - alpha),
                },
                terminal: TerminalSpec::shape(terminal),
                obstacle: ObstacleSpec::shape(obstacle),
                dynamics,
                x0,
                horizon,
            }
        }
        other => return Err(Error::UnknownInstance(other.to_string())),
    };
    spec.driver.shift = p.num("driver_shift", 0.0)?;
    spec.terminal.shift = p.num("terminal_shift", 0.0)?;
    spec.obstacle.shift = p.num("obstacle_shift", 0.0)?;
    p.finish()?;
    spec.dynamics.validate()?;
    Ok(spec)
}

/// Catalog instance with every parameter at its default.
pub fn catalog_default(name: &str, horizon: f64) -> Result<InstanceSpec> {
    catalog_instance(name, &ParamMap::new(), horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub detail: String,
    /// Witnessing inputs, e.g. `[t, s, x, y, z, y', z']`.
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub declared_lipschitz: f64,
    pub empirical_lipschitz: f64,
    pub declared_holder_alpha: f64,
    pub declared_holder_c1: f64,
    pub empirical_holder: f64,
    pub terminal_nodes_checked: usize,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const RATIO_SLACK: f64 = 1.01;
const MAX_LISTED: usize = 16;

/// Randomised spot-check of the standing assumptions on the lattice nodes.
pub fn verify_assumptions(spec: &InstanceSpec, lat: &Lattice, samples: usize) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_A551);
    let n = lat.steps();
    let d = &spec.driver;
    let mut violations = Vec::new();
    let push = |v: Violation, list: &mut Vec<Violation>| {
        if list.iter().filter(|o| o.check == v.check).count() < MAX_LISTED {
            list.push(v);
        }
    };

    if !(d.holder_alpha > 0.0 && d.holder_alpha <= 0.5) {
        push(
            Violation {
                check: "holder_exponent",
                detail: format!("declared α = {} outside (0, 1/2]", d.holder_alpha),
                inputs: vec![d.holder_alpha],
            },
            &mut violations,
        );
    }

    let mut emp_lip: f64 = 0.0;
    let mut emp_hol: f64 = 0.0;
    for _ in 0..samples {
        let j = rng.random_range(0..=n);
        let i = rng.random_range(0..=j);
        let k = rng.random_range(0..=j);
        let (t, s, x) = (lat.time(i), lat.time(j), lat.x(j)[k]);
        let y = rng.random_range(-CHECK_RADIUS..=CHECK_RADIUS);
        let z = rng.random_range(-CHECK_RADIUS..=CHECK_RADIUS);
        // Mix of local and global perturbations so both slopes and chords are probed.
        let scale = 10f64.powf(rng.random_range(-3.0..0.0));
        let y2 = (y + scale * rng.random_range(-1.0..1.0)).clamp(-CHECK_RADIUS, CHECK_RADIUS);
        let z2 = (z + scale * rng.random_range(-1.0..1.0)).clamp(-CHECK_RADIUS, CHECK_RADIUS);
        let denom = (y - y2).abs() + (z - z2).abs();
        if denom > 0.0 {
            let ratio = (d.eval(t, s, x, y, z) - d.eval(t, s, x, y2, z2)).abs() / denom;
            if ratio.is_nan() || ratio > emp_lip {
                emp_lip = if ratio.is_nan() { f64::INFINITY } else { ratio };
            }
            if !(ratio <= d.lipschitz * RATIO_SLACK + 1e-12) {
                push(
                    Violation {
                        check: "lipschitz",
                        detail: format!("ratio {ratio} exceeds declared c_f = {}", d.lipschitz),
                        inputs: vec![t, s, x, y, z, y2, z2],
                    },
                    &mut violations,
                );
            }
        }

        let ta = rng.random_range(0.0..=s);
        let tb = rng.random_range(0.0..=s);
        if ta != tb {
            let diff = (d.eval(ta, s, x, y, z) - d.eval(tb, s, x, y, z)).abs();
            let ratio = diff / (ta - tb).abs().powf(d.holder_alpha);
            if ratio.is_nan() || ratio > emp_hol {
                emp_hol = if ratio.is_nan() { f64::INFINITY } else { ratio };
            }
            if !(ratio <= d.holder_c1 * RATIO_SLACK + 1e-12) {
                push(
                    Violation {
                        check: "holder",
                        detail: format!("ratio {ratio} exceeds declared c1 = {}", d.holder_c1),
                        inputs: vec![ta, tb, s, x, y, z],
                    },
                    &mut violations,
                );
            }
        }
    }

    for j in 0..=n {
        let u = lat.time(j);
        for (k, &x) in lat.x(j).iter().enumerate() {
            let l = spec.obstacle.eval(u, x);
            if !l.is_finite() {
                push(
                    Violation {
                        check: "obstacle_finite",
                        detail: format!("L({u}, {x}) = {l}"),
                        inputs: vec![u, x, k as f64],
                    },
                    &mut violations,
                );
            }
            for i in 0..=j {
                let f00 = d.eval(lat.time(i), u, x, 0.0, 0.0);
                if !f00.is_finite() {
                    push(
                        Violation {
                            check: "driver_finite",
                            detail: format!("f(t, s, x, 0, 0) = {f00}"),
                            inputs: vec![lat.time(i), u, x],
                        },
                        &mut violations,
                    );
                }
            }
        }
    }

    let t_end = lat.time(n);
    let mut terminal_nodes_checked = 0;
    for i in 0..=n {
        let ti = lat.time(i);
        for &x in lat.x(n) {
            terminal_nodes_checked += 1;
            let xi = spec.terminal.eval(ti, x);
            let l = spec.obstacle.eval(t_end, x);
            if !(xi >= l) {
                push(
                    Violation {
                        check: "terminal_domination",
                        detail: format!("ξ({ti}, {x}) = {xi} < L(T, {x}) = {l}"),
                        inputs: vec![ti, x, xi, l],
                    },
                    &mut violations,
                );
            }
        }
    }

    AssumptionReport {
        samples,
        declared_lipschitz: d.lipschitz,
        empirical_lipschitz: emp_lip,
        declared_holder_alpha: d.holder_alpha,
        declared_holder_c1: d.holder_c1,
        empirical_holder: emp_hol,
        terminal_nodes_checked,
        violations,
    }
}
