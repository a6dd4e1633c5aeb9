//! Model-X knockoffs for case-control designs.
//!
//! Knockoffs built for one covariate population (controls only, cases
//! only, a mixture, or the general population) stay valid for null
//! variables when the data come from a case-control sample, because all
//! of these populations share the `X_j | X_{-j}` laws of null variables.
//! This crate builds exact discrete and Gaussian knockoff samplers,
//! enumerates the resulting `(X, X̃)` laws to check swap exchangeability
//! under a mismatched population, and runs the knockoff filter in Monte
//! Carlo FDR experiments.

pub mod dataset;
pub mod demo;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod harness;
pub mod knockoff;
pub mod lasso;
pub mod model;
pub mod population;
pub mod rng;
pub mod table;
pub mod verify;

pub use error::{Error, Result};
pub use population::PopulationKind;
pub use table::TabularDistribution;
