//! Prior densities on the constrained parameters, expressed (with log-Jacobians)
//! on the unconstrained scale. Additive constants are dropped throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SubjectData, N_EFFECTS};

use super::corr::{corr_cholesky, N_CORR};
use super::init::fit_weibull;
use super::params::{
    weibull_log_jacobian, weibull_value, ParameterVector, CORR, EFFECTS, LOG_SIGMA0, LOG_TAU,
    WEIBULL_K, WEIBULL_XI,
};

/// Multiplier applied to the standalone Weibull fit when the bound is derived from data.
pub const WEIBULL_BOUND_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Scale of the half-Cauchy prior on each random-effect standard deviation.
    pub half_cauchy_scale: f64,
    /// Scale of the half-normal prior on `σ0`.
    pub sigma0_halfnormal_scale: f64,
    /// LKJ shape for the random-effect correlation matrix.
    pub lkj_eta: f64,
    /// Upper bound `U` of the uniform prior on the Weibull shape; `None` derives it from data.
    pub weibull_k_bound: Option<f64>,
    /// Upper bound `U` of the uniform prior on the Weibull scale; `None` derives it from data.
    pub weibull_xi_bound: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            half_cauchy_scale: 2.5,
            sigma0_halfnormal_scale: 100.0,
            lkj_eta: 1.0,
            weibull_k_bound: None,
            weibull_xi_bound: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("half_cauchy_scale", self.half_cauchy_scale),
            ("sigma0_halfnormal_scale", self.sigma0_halfnormal_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lkj_eta.is_finite() && self.lkj_eta >= 1.0) {
            return Err(Error::Config(format!(
                "lkj_eta must be >= 1, got {}",
                self.lkj_eta
            )));
        }
        for (name, v) in [
            ("weibull_k_bound", self.weibull_k_bound),
            ("weibull_xi_bound", self.weibull_xi_bound),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Fills unset Weibull bounds with `10 ×` a standalone censored Weibull fit.
    pub fn resolve(&self, dataset: &[SubjectData]) -> Result<Self> {
        self.validate()?;
        let mut out = *self;
        if out.weibull_k_bound.is_none() || out.weibull_xi_bound.is_none() {
            let fit = fit_weibull(dataset)?;
            out.weibull_k_bound
                .get_or_insert(WEIBULL_BOUND_FACTOR * fit.k);
            out.weibull_xi_bound
                .get_or_insert(WEIBULL_BOUND_FACTOR * fit.xi);
        }
        Ok(out)
    }

    /// Upper bounds `[U_k, U_ξ]`, infinite where unset.
    pub fn weibull_bounds(&self) -> [f64; 2] {
        [
            self.weibull_k_bound.unwrap_or(f64::INFINITY),
            self.weibull_xi_bound.unwrap_or(f64::INFINITY),
        ]
    }
}

/// Normalised half-Cauchy log-density `log(2 / (π s)) - log(1 + (x/s)²)`.
pub fn half_cauchy_log_density(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / (PI * scale)).ln() - (x / scale).powi(2).ln_1p()
}

/// LKJ log-density kernel `(η - 1) log det Ω` from the diagonal of the Cholesky factor.
pub fn lkj_log_kernel(chol_diag: &[f64], eta: f64) -> f64 {
    (eta - 1.0) * 2.0 * chol_diag.iter().map(|d| d.ln()).sum::<f64>()
}

/// Unnormalised log prior density on the unconstrained scale, including the
/// log-Jacobian of every transform and the standard-normal density of the
/// non-centered effects. Returns `-∞` outside the Weibull bounds, which can
/// only happen when the vector's own coordinates are looser than `prior`.
pub fn log_prior(params: &ParameterVector, prior: &PriorConfig) -> f64 {
    let x = params.as_slice();
    let mut scratch = vec![0.0; x.len()];
    let corr = corr_cholesky::<f64>(&x[CORR..CORR + N_CORR]);
    scalar_log_prior_and_grad(x, prior, params.weibull_bounds(), &mut scratch)
        + corr.log_jacobian
        + (prior.lkj_eta - 1.0) * corr.log_det
}

/// Every prior term except the correlation block, with the Weibull blocks in
/// the coordinates of `coords`. Adds gradients into `grad`.
pub(crate) fn scalar_log_prior_and_grad(
    x: &[f64],
    prior: &PriorConfig,
    coords: [f64; 2],
    grad: &mut [f64],
) -> f64 {
    let blocks = [WEIBULL_K, WEIBULL_XI];
    let support = prior.weibull_bounds();
    for j in 0..2 {
        if !(weibull_value(x[blocks[j]], coords[j]) <= support[j]) {
            return f64::NEG_INFINITY;
        }
    }
    let mut lp = 0.0;

    let sigma0 = x[LOG_SIGMA0].exp();
    let s2 = prior.sigma0_halfnormal_scale.powi(2);
    lp += -0.5 * sigma0 * sigma0 / s2 + x[LOG_SIGMA0];
    grad[LOG_SIGMA0] += -sigma0 * sigma0 / s2 + 1.0;

    // Uniform on (0, U]: only the log-Jacobian of the transform remains.
    for j in 0..2 {
        let (lj, dlj) = weibull_log_jacobian(x[blocks[j]], coords[j]);
        lp += lj;
        grad[blocks[j]] += dlj;
    }

    let h2 = prior.half_cauchy_scale.powi(2);
    for k in 0..N_EFFECTS {
        let log_tau = x[LOG_TAU + k];
        let tau2 = (2.0 * log_tau).exp();
        lp += -(tau2 / h2).ln_1p() + log_tau;
        grad[LOG_TAU + k] += -2.0 * tau2 / (h2 + tau2) + 1.0;
    }

    for (g, &z) in grad[EFFECTS..].iter_mut().zip(&x[EFFECTS..]) {
        lp -= 0.5 * z * z;
        *g -= z;
    }
    lp
}
