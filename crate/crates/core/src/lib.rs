//! survsens: sensitivity analysis for survival treatment effects when
//! censoring may be informative.
//!
//! Censored event times are multiply imputed from per-arm Cox models whose
//! post-dropout hazard is perturbed (delta-adjusted) or borrowed from the
//! control arm (control-based). Treatment effects are functionals of the
//! two completed-data survival curves. Variance comes from Rubin's rule and
//! from a wild bootstrap of an explicit martingale representation of the
//! estimator, which needs no re-imputation.
//!
//! Modules, bottom up:
//!
//! - [`step`]: piecewise-constant functions with exact integrals
//! - [`data`]: records, validation, CSV
//! - [`cox`]: Newton–Raphson partial likelihood, Breslow hazard, residuals
//! - [`imputation`]: inverse-transform imputation under both models
//! - [`estimands`]: the five functionals and their linearization weights
//! - [`inference`]: MI estimation, Rubin's rule, martingale series, bootstraps
//! - [`simulation`]: designs, truth oracle, Monte Carlo harness

pub mod cox;
pub mod data;
pub mod error;
pub mod estimands;
pub mod imputation;
pub mod inference;
pub mod rng;
pub mod simulation;
pub mod step;

pub use error::{Error, Result};
