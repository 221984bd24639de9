use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PriorConfig;
use crate::model::{FixedEffects, Mat5, TreatmentParams};
use crate::sampler::SamplerConfig;
use crate::simulate::SimConfig;

/// Flat run configuration. Every key is optional and falls back to the
/// defaults below; unknown keys are rejected.
///
/// ```toml
/// n_subjects = 100
/// beta = [12.0, 0.1, -0.3, -0.05]
/// sigma0 = 1.414
/// chains = 2
/// iters = 1000
/// warmup = 500
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for simulation, sampling and replicate generation.
    pub seed: u64,

    pub n_subjects: usize,
    pub m_per_subject: usize,
    /// `(β0, β1, β2, β3)`: intercept, slope, treatment jump, slope change.
    pub beta: [f64; 4],
    /// Log multiplicative treatment effect on the residual variance.
    pub nu: f64,
    pub sigma0: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub weibull_k: f64,
    pub weibull_xi: f64,
    /// Random-effects covariance of `(b0, b1, b2, b3, c)`.
    pub covariance: Mat5,
    pub alpha0: f64,
    pub alpha1: f64,

    pub half_cauchy_scale: f64,
    pub sigma0_halfnormal_scale: f64,
    pub lkj_eta: f64,
    pub weibull_k_bound: Option<f64>,
    pub weibull_xi_bound: Option<f64>,

    pub chains: usize,
    /// Iterations per chain including warmup.
    pub iters: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub divergence_threshold: f64,
    pub progress: bool,

    /// Significance level of the residual-variance screen.
    pub screen_alpha: f64,
    pub ppc_replicates: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let prior = PriorConfig::default();
        let sampler = SamplerConfig::default();
        Self {
            seed: sim.seed,
            n_subjects: sim.n_subjects,
            m_per_subject: sim.m_per_subject,
            beta: sim.fixed.beta,
            nu: sim.fixed.nu,
            sigma0: sim.fixed.sigma0,
            gamma0: sim.fixed.gamma0,
            gamma1: sim.fixed.gamma1,
            weibull_k: sim.fixed.weibull_k,
            weibull_xi: sim.fixed.weibull_xi,
            covariance: sim.covariance,
            alpha0: sim.alpha.alpha0,
            alpha1: sim.alpha.alpha1,
            half_cauchy_scale: prior.half_cauchy_scale,
            sigma0_halfnormal_scale: prior.sigma0_halfnormal_scale,
            lkj_eta: prior.lkj_eta,
            weibull_k_bound: prior.weibull_k_bound,
            weibull_xi_bound: prior.weibull_xi_bound,
            chains: sampler.n_chains,
            iters: sampler.iters,
            warmup: sampler.warmup,
            target_accept: sampler.target_accept,
            max_tree_depth: sampler.max_tree_depth,
            divergence_threshold: sampler.divergence_threshold,
            progress: true,
            screen_alpha: 0.05,
            ppc_replicates: 1000,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            n_subjects: self.n_subjects,
            m_per_subject: self.m_per_subject,
            fixed: FixedEffects {
                beta: self.beta,
                nu: self.nu,
                sigma0: self.sigma0,
                gamma0: self.gamma0,
                gamma1: self.gamma1,
                weibull_k: self.weibull_k,
                weibull_xi: self.weibull_xi,
            },
            covariance: self.covariance,
            alpha: TreatmentParams {
                alpha0: self.alpha0,
                alpha1: self.alpha1,
            },
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn prior_config(&self) -> Result<PriorConfig> {
        let prior = PriorConfig {
            half_cauchy_scale: self.half_cauchy_scale,
            sigma0_halfnormal_scale: self.sigma0_halfnormal_scale,
            lkj_eta: self.lkj_eta,
            weibull_k_bound: self.weibull_k_bound,
            weibull_xi_bound: self.weibull_xi_bound,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            n_chains: self.chains,
            iters: self.iters,
            warmup: self.warmup,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            divergence_threshold: self.divergence_threshold,
            seed: self.seed,
            progress: self.progress,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg =
            RunConfig::from_toml_str("n_subjects = 20\nsigma0 = 1.414\nweibull_k_bound = 50.0\n")
                .unwrap();
        assert_eq!(cfg.n_subjects, 20);
        assert_eq!(cfg.sigma0, 1.414);
        assert_eq!(cfg.weibull_k_bound, Some(50.0));
        assert_eq!(cfg.iters, 1000);
        assert_eq!(cfg.prior_config().unwrap().weibull_xi_bound, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("n_subject = 20\n").unwrap_err();
        assert!(err.to_string().contains("n_subject"), "{err}");
    }

    #[test]
    fn roundtrip_through_text() {
        let cfg = RunConfig {
            seed: 42,
            warmup: 300,
            iters: 600,
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_surface_on_conversion() {
        let cfg = RunConfig {
            warmup: 0,
            ..RunConfig::default()
        };
        assert!(cfg.sampler_config().is_err());
        let cfg = RunConfig {
            lkj_eta: 0.2,
            ..RunConfig::default()
        };
        assert!(cfg.prior_config().is_err());
    }
}
