//! Solvers for one-dimensional reflected backward stochastic Volterra
//! integral equations with a lower obstacle,
//!
//! ```text
//! Y(t) = ξ(t) + ∫_t^T f(t, s, Y(s), Z(t, s)) ds + ∫_t^T K(t, ds) − ∫_t^T Z(t, s) dW(s),
//! Y(t) ≥ L(t),
//! ```
//!
//! together with the time-inconsistent optimal stopping problems they solve.
//!
//! For each anchor time `t` the solver builds the accompanying reflected
//! BSDE `Ỹ(t, ·)` as a Snell envelope on a binomial lattice ([`snell`]),
//! couples the anchors through the diagonal `Y(t) = Ỹ(t, t)` with a Picard
//! iteration ([`volterra`]), and reads off the stopping rule
//! `τ*_t = inf{u ≥ t : Ỹ(t, u) = L(u)}` ([`stopping`]). [`oracle`] verifies
//! the lattice values by exhaustive enumeration of stopping rules, [`compare`]
//! exercises the comparison theorem and the monotone approximation scheme,
//! and [`mc`] is a regression Monte Carlo solver for cross-validation.

// Checks that must also reject NaN are written `!(a <= b)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{a} vs {b} (|Δ| = {:e}, tol {tol:e})", (a - b).abs());
    }};
}

pub mod compare;
pub mod error;
pub mod field;
pub mod grid;
pub mod instances;
pub mod mc;
pub mod oracle;
pub mod snell;
pub mod stopping;
pub mod volterra;

pub use error::{Error, Result};
pub use field::{BiField, FieldRole};
pub use grid::{build_lattice, Lattice, NodeFunction, TimeGrid};
pub use instances::{catalog_instance, InstanceSpec, Param, ParamMap, StateDynamics};
pub use volterra::{solve, PicardConfig, Solution, SolveMode, ZCoupling};
