use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("parameter `{name}` out of range: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unknown catalog instance `{0}`")]
    UnknownInstance(String),

    #[error("unknown parameter `{key}` for instance `{instance}`")]
    UnknownParameter { instance: String, key: String },

    #[error("layer mismatch: expected a function on layer {expected}, got layer {got}")]
    LayerMismatch { expected: usize, got: usize },

    #[error("non-finite value at anchor {anchor}, layer {layer}, node {node}")]
    NonFinite {
        anchor: usize,
        layer: usize,
        node: usize,
    },

    #[error("{what} too large: {got} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("Picard iteration did not converge after {iters} iterations (last residual {last_residual:e})")]
    NoConvergence {
        iters: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("window misalignment: {0}")]
    WindowMisaligned(String),

    #[error("no grid-aligned window satisfies the contraction bound: {0}")]
    WindowInfeasible(String),

    #[error("rank-deficient regression at layer {layer} (basis dimension {dim}, {n_paths} paths)")]
    RankDeficient {
        layer: usize,
        dim: usize,
        n_paths: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ordering violated for {datum} at anchor {anchor}, layer {layer}, node {node} (excess {excess:e})")]
    OrderingViolation {
        datum: &'static str,
        anchor: usize,
        layer: usize,
        node: usize,
        excess: f64,
    },
}

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
