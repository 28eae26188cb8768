//! Numerical laboratory for sectorial operators.
//!
//! The crate builds, on finite weighted grids, the objects needed to probe
//! holomorphic functional calculus numerically: concrete Banach function
//! spaces (weighted discrete `L^p`), sectorial operator backends (dense
//! matrices with prescribed spectra, periodic Fourier multipliers, the
//! Rademacher/Haar rank-n maps, the Hardy-Littlewood maximal operator),
//! contour quadrature for `phi(A)`, continuous and dyadic s-power norms,
//! empirical `R_s`-bound estimation, and an experiment harness that turns
//! norm-equivalence and `H^inf`-boundedness statements into measurable,
//! refinement-stable checks.
//!
//! Everything is deterministic given a seed; experiment reports serialize
//! to JSON with fixed field order and 17 significant digits so reruns are
//! byte-identical.

pub mod error;
pub mod funcalc;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod report;
pub mod rsbound;
pub mod sampling;
pub mod spower;
pub mod tllab;

pub use error::{Error, Result};
pub use grid::{Exponent, FunctionStack, GridFunction, MeasureGrid};
pub use operators::{MaximalOperator, OperatorHandle};
