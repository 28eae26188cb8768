//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exponent {0}: must lie in [1, inf]")]
    InvalidExponent(f64),
    #[error("invalid measure grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("grid mismatch: operator on {expected} points, input on {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("layer shape mismatch: {0}")]
    LayerMismatch(String),
    #[error("resolvent point {0} lies inside the declared sector of half-angle {1}")]
    LambdaInSector(num_complex::Complex64, f64),
    #[error("singular resolvent solve (condition estimate {cond:.3e})")]
    SingularSolve { cond: f64 },
    #[error("operation unsupported for this operator backend: {0}")]
    UnsupportedBackend(&'static str),
    #[error("contour angle infeasible: need omega in ({lo:.4}, {hi:.4})")]
    ContourInfeasible { lo: f64, hi: f64 },
    #[error("quadrature did not converge: {0}")]
    QuadratureDivergence(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol parameter out of class range: {0}")]
    SymbolParam(String),
    #[error("symbol certification failed: {0}")]
    CertificationFailed(String),
    #[error("symbol lacks required class tag: {0}")]
    ClassTag(String),
    #[error("theta out of admissible range: {0}")]
    ThetaRange(String),
    #[error("truncation window insufficient: tail bound {tail:.3e} exceeds {tol:.3e} of the norm")]
    Truncation { tail: f64, tol: f64 },
    #[error("zero denominator in ratio")]
    ZeroDenominator,
    #[error("empty operator family")]
    EmptyFamily,
    #[error("input not band-limited below {limit}: mode {mode} carries relative mass {mass:.3e}")]
    Aliasing { limit: usize, mode: usize, mass: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
