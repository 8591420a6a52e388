use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("derivative order {0} is not supported (expected 0..=3)")]
    DerivativeOrder(u32),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("product rules are limited to n <= 8 (got n = {0}); use a Monte Carlo rule")]
    ProductRuleDimension(usize),

    #[error("non-finite integrand value at node {node}")]
    NonFinite { node: usize },

    #[error("perturbation is not admissible: {0}")]
    Inadmissible(String),

    #[error("constraint normalization failed: {0}")]
    Normalization(String),

    #[error("constants for (n, k) = (2, 3) are degenerate: omega_3 vanishes at the origin")]
    DegenerateConstant,

    #[error("perturbation is not normalized: {0}")]
    Unnormalized(String),

    #[error("hypothesis not met: {0}")]
    Hypothesis(String),

    #[error("second-variation probe did not converge: {0}")]
    ProbeConvergence(String),

    #[error("band limit {degree} is too large for dimension {n} ({count} monomials)")]
    BandLimit { n: usize, degree: usize, count: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
