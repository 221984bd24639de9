//! Joint modeling of a longitudinal risk-factor profile with treatment-dependent
//! heteroskedastic residual variance and a Weibull time-to-event outcome.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: domain types and the closed-form pieces of the treatment,
//!   longitudinal and survival submodels.
//! - [`simulate`]: cohort generation with exact inverse-transform survival times.
//! - [`inference`]: unconstrained parametrisation, priors and the log-posterior
//!   with its analytic gradient.
//! - [`sampler`]: NUTS with dual-averaging step size and diagonal metric adaptation.
//! - [`diagnostics`]: split-R̂, summaries, posterior predictive replicates, the
//!   residual-variance screen and derived clinical quantities.
//! - [`io`]: CSV/TOML persistence and run configuration.

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
