//! Flat unconstrained parameter vector and its named blocks.
//!
//! Layout (0-based offsets):
//!
//! | block          | offset | length | map to constrained      |
//! |----------------|--------|--------|-------------------------|
//! | `beta`         | 0      | 4      | identity                |
//! | `nu`           | 4      | 1      | identity                |
//! | `log_sigma0`   | 5      | 1      | `exp`                   |
//! | `gamma0`       | 6      | 1      | identity                |
//! | `gamma1`       | 7      | 1      | identity                |
//! | `weibull_k_free`| 8     | 1      | bounded, see below      |
//! | `weibull_xi_free`| 9    | 1      | bounded, see below      |
//! | `log_tau`      | 10     | 5      | `exp`                   |
//! | `corr`         | 15     | 10     | correlation Cholesky    |
//! | `z_effects`    | 25     | 5 N    | `r_i = θ + diag(τ) L z_i` |
//!
//! The Weibull parameters have uniform priors on `(0, U]`. With a finite bound
//! the free coordinate maps through `U · logistic(x)`, so the sampler never meets
//! the edge of the support; with `U = ∞` it maps through `exp(x)`. Every vector
//! records the bounds that define its coordinates.

use crate::error::{Error, Result};
use crate::model::{CovarianceSpec, FixedEffects, RandomEffects, N_EFFECTS};

use super::corr::{corr_cholesky_f64, corr_free_from_cholesky, N_CORR};

pub const BETA: usize = 0;
pub const NU: usize = 4;
pub const LOG_SIGMA0: usize = 5;
pub const GAMMA0: usize = 6;
pub const GAMMA1: usize = 7;
pub const WEIBULL_K: usize = 8;
pub const WEIBULL_XI: usize = 9;
pub const LOG_TAU: usize = 10;
pub const CORR: usize = LOG_TAU + N_EFFECTS;
pub const EFFECTS: usize = CORR + N_CORR;
/// Number of population-level coordinates.
pub const N_GLOBAL: usize = EFFECTS;

/// Flat unconstrained vector for a dataset of `n_subjects` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    n_subjects: usize,
    weibull_bounds: [f64; 2],
}

fn log_logistic(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weibull parameter for free coordinate `x` under upper bound `bound`.
pub fn weibull_value(x: f64, bound: f64) -> f64 {
    if bound.is_infinite() {
        x.exp()
    } else {
        bound * logistic(x)
    }
}

/// Inverse of [`weibull_value`]; `v` must lie in `(0, bound)`.
pub fn weibull_free(v: f64, bound: f64) -> Result<f64> {
    if !(v > 0.0 && v < bound) {
        return Err(Error::Domain(format!(
            "Weibull parameter {v} outside (0, {bound})"
        )));
    }
    Ok(if bound.is_infinite() {
        v.ln()
    } else {
        let u = v / bound;
        (u / (1.0 - u)).ln()
    })
}

/// `d log v / dx` of [`weibull_value`].
pub(crate) fn weibull_dlog(x: f64, bound: f64) -> f64 {
    if bound.is_infinite() {
        1.0
    } else {
        logistic(-x)
    }
}

/// Log-Jacobian `log |dv/dx|` of [`weibull_value`] and its derivative in `x`.
pub(crate) fn weibull_log_jacobian(x: f64, bound: f64) -> (f64, f64) {
    if bound.is_infinite() {
        (x, 1.0)
    } else {
        (
            bound.ln() + log_logistic(x) + log_logistic(-x),
            logistic(-x) - logistic(x),
        )
    }
}

fn check_bounds(bounds: [f64; 2]) -> Result<()> {
    if bounds.iter().all(|b| *b > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "Weibull bounds must be positive, got {bounds:?}"
        )))
    }
}

/// Constrained view of every sampled quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Constrained {
    pub fixed: FixedEffects,
    pub covariance: CovarianceSpec,
    pub z_effects: Vec<[f64; N_EFFECTS]>,
}

/// Random-effect labels used in output column names.
pub const EFFECT_LABELS: [&str; N_EFFECTS] = ["b0", "b1", "b2", "b3", "c"];

impl Constrained {
    pub fn random_effects(&self, i: usize) -> RandomEffects {
        random_effects_from(&self.fixed, &self.covariance, &self.z_effects[i])
    }

    /// Output columns: fixed effects, `neg_k_log_xi`, `tau_k`, covariance
    /// `Sigma_p_q` (p ≤ q), correlation `Omega_p_q` (p < q), then the random
    /// effects `r_<id>_<label>` of every subject. Indices are 1-based.
    pub fn column_names(subject_ids: &[String]) -> Vec<String> {
        let mut names: Vec<String> = [
            "beta0",
            "beta1",
            "beta2",
            "beta3",
            "nu",
            "sigma0",
            "gamma0",
            "gamma1",
            "weibull_k",
            "weibull_xi",
            "neg_k_log_xi",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend((1..=N_EFFECTS).map(|k| format!("tau_{k}")));
        for p in 1..=N_EFFECTS {
            for q in p..=N_EFFECTS {
                names.push(format!("Sigma_{p}_{q}"));
            }
        }
        for p in 1..=N_EFFECTS {
            for q in p + 1..=N_EFFECTS {
                names.push(format!("Omega_{p}_{q}"));
            }
        }
        for id in subject_ids {
            names.extend(EFFECT_LABELS.iter().map(|l| format!("r_{id}_{l}")));
        }
        names
    }

    /// Values in the order of [`Constrained::column_names`].
    pub fn to_row(&self) -> Vec<f64> {
        let f = &self.fixed;
        let mut row = Vec::with_capacity(41 + N_EFFECTS * self.z_effects.len());
        row.extend_from_slice(&f.beta);
        row.extend_from_slice(&[
            f.nu,
            f.sigma0,
            f.gamma0,
            f.gamma1,
            f.weibull_k,
            f.weibull_xi,
            f.neg_k_log_xi(),
        ]);
        row.extend_from_slice(&self.covariance.tau);
        let sigma = self.covariance.covariance();
        let omega = self.covariance.correlation();
        for p in 0..N_EFFECTS {
            row.extend_from_slice(&sigma[p][p..]);
        }
        for p in 0..N_EFFECTS {
            row.extend_from_slice(&omega[p][p + 1..]);
        }
        for i in 0..self.z_effects.len() {
            row.extend(self.random_effects(i).to_array());
        }
        row
    }
}

pub(crate) fn random_effects_from(
    fixed: &FixedEffects,
    cov: &CovarianceSpec,
    z: &[f64; N_EFFECTS],
) -> RandomEffects {
    let theta = fixed.theta();
    let l = &cov.chol_corr;
    RandomEffects::from_array(std::array::from_fn(|k| {
        let w: f64 = (0..=k).map(|j| l[k][j] * z[j]).sum();
        theta[k] + cov.tau[k] * w
    }))
}

impl ParameterVector {
    pub fn len_for(n_subjects: usize) -> usize {
        N_GLOBAL + N_EFFECTS * n_subjects
    }

    pub fn new(values: Vec<f64>, n_subjects: usize) -> Result<Self> {
        if values.len() != Self::len_for(n_subjects) {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has length {}, expected {} for {n_subjects} subjects",
                values.len(),
                Self::len_for(n_subjects)
            )));
        }
        Ok(Self {
            values,
            n_subjects,
            weibull_bounds: [f64::INFINITY; 2],
        })
    }

    /// All-zero vector with unbounded (log) Weibull coordinates.
    pub fn zeros(n_subjects: usize) -> Self {
        Self {
            values: vec![0.0; Self::len_for(n_subjects)],
            n_subjects,
            weibull_bounds: [f64::INFINITY; 2],
        }
    }

    /// Reinterprets the Weibull coordinates under the bounds `[U_k, U_ξ]`.
    pub fn with_weibull_bounds(mut self, bounds: [f64; 2]) -> Result<Self> {
        check_bounds(bounds)?;
        self.weibull_bounds = bounds;
        Ok(self)
    }

    pub fn weibull_bounds(&self) -> [f64; 2] {
        self.weibull_bounds
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn fixed(&self) -> FixedEffects {
        fixed_from_slice(&self.values, self.weibull_bounds)
    }

    pub fn covariance(&self) -> CovarianceSpec {
        covariance_from_slice(&self.values)
    }

    pub fn z_effects(&self, i: usize) -> [f64; N_EFFECTS] {
        let o = EFFECTS + N_EFFECTS * i;
        std::array::from_fn(|k| self.values[o + k])
    }

    pub fn set_z_effects(&mut self, i: usize, z: &[f64; N_EFFECTS]) {
        let o = EFFECTS + N_EFFECTS * i;
        self.values[o..o + N_EFFECTS].copy_from_slice(z);
    }

    pub fn random_effects(&self, i: usize) -> RandomEffects {
        random_effects_from(&self.fixed(), &self.covariance(), &self.z_effects(i))
    }

    pub fn constrain(&self) -> Constrained {
        Constrained {
            fixed: self.fixed(),
            covariance: self.covariance(),
            z_effects: (0..self.n_subjects).map(|i| self.z_effects(i)).collect(),
        }
    }

    /// Free coordinates of `c`, with the Weibull blocks under `weibull_bounds`.
    pub fn unconstrain(c: &Constrained, weibull_bounds: [f64; 2]) -> Result<Self> {
        check_bounds(weibull_bounds)?;
        c.fixed.validate()?;
        c.covariance.validate()?;
        let n = c.z_effects.len();
        let mut v = vec![0.0; Self::len_for(n)];
        v[BETA..BETA + 4].copy_from_slice(&c.fixed.beta);
        v[NU] = c.fixed.nu;
        v[LOG_SIGMA0] = c.fixed.sigma0.ln();
        v[GAMMA0] = c.fixed.gamma0;
        v[GAMMA1] = c.fixed.gamma1;
        v[WEIBULL_K] = weibull_free(c.fixed.weibull_k, weibull_bounds[0])?;
        v[WEIBULL_XI] = weibull_free(c.fixed.weibull_xi, weibull_bounds[1])?;
        for k in 0..N_EFFECTS {
            v[LOG_TAU + k] = c.covariance.tau[k].ln();
        }
        v[CORR..CORR + N_CORR].copy_from_slice(&corr_free_from_cholesky(&c.covariance.chol_corr));
        for (i, z) in c.z_effects.iter().enumerate() {
            let o = EFFECTS + N_EFFECTS * i;
            v[o..o + N_EFFECTS].copy_from_slice(z);
        }
        Ok(Self {
            values: v,
            n_subjects: n,
            weibull_bounds,
        })
    }

    /// Names of the unconstrained coordinates.
    pub fn coordinate_names(n_subjects: usize) -> Vec<String> {
        let mut names: Vec<String> = [
            "beta0",
            "beta1",
            "beta2",
            "beta3",
            "nu",
            "log_sigma0",
            "gamma0",
            "gamma1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.push("weibull_k_free".into());
        names.push("weibull_xi_free".into());
        names.extend((1..=N_EFFECTS).map(|k| format!("log_tau_{k}")));
        for i in 1..N_EFFECTS {
            for j in 0..i {
                names.push(format!("corr_free_{}_{}", i + 1, j + 1));
            }
        }
        for i in 0..n_subjects {
            names.extend((1..=N_EFFECTS).map(|k| format!("z_{}_{k}", i + 1)));
        }
        names
    }
}

pub(crate) fn fixed_from_slice(v: &[f64], weibull_bounds: [f64; 2]) -> FixedEffects {
    FixedEffects {
        beta: [v[BETA], v[BETA + 1], v[BETA + 2], v[BETA + 3]],
        nu: v[NU],
        sigma0: v[LOG_SIGMA0].exp(),
        gamma0: v[GAMMA0],
        gamma1: v[GAMMA1],
        weibull_k: weibull_value(v[WEIBULL_K], weibull_bounds[0]),
        weibull_xi: weibull_value(v[WEIBULL_XI], weibull_bounds[1]),
    }
}

pub(crate) fn covariance_from_slice(v: &[f64]) -> CovarianceSpec {
    CovarianceSpec {
        tau: std::array::from_fn(|k| v[LOG_TAU + k].exp()),
        chol_corr: corr_cholesky_f64(&v[CORR..CORR + N_CORR]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::DESIGN_SIGMA;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn layout_length() {
        assert_eq!(ParameterVector::len_for(0), 25);
        assert_eq!(ParameterVector::len_for(100), 525);
        assert_eq!(
            ParameterVector::coordinate_names(3).len(),
            ParameterVector::len_for(3)
        );
        assert!(ParameterVector::new(vec![0.0; 10], 1).is_err());
    }

    #[test]
    fn output_columns_line_up() {
        let ids = vec!["7".to_string(), "9".to_string()];
        let names = Constrained::column_names(&ids);
        let mut p = ParameterVector::zeros(2);
        p.as_mut_slice()[WEIBULL_K] = 1.5f64.ln();
        p.as_mut_slice()[WEIBULL_XI] = 150f64.ln();
        let row = p.constrain().to_row();
        assert_eq!(names.len(), row.len());
        assert_eq!(names.len(), 11 + 5 + 15 + 10 + 10);
        let at = |n: &str| row[names.iter().position(|x| x == n).unwrap()];
        assert!((at("neg_k_log_xi") + 7.516).abs() < 1e-3);
        assert_eq!(at("Sigma_3_3"), 1.0);
        assert_eq!(at("Omega_1_2"), 0.0);
        assert_eq!(names.last().unwrap(), "r_9_c");
    }

    #[test]
    fn zero_effects_give_theta() {
        let mut p = ParameterVector::zeros(2);
        p.as_mut_slice()[BETA..BETA + 4].copy_from_slice(&[12.0, 0.1, -0.3, -0.05]);
        for i in 0..2 {
            assert_eq!(
                p.random_effects(i).to_array(),
                [12.0, 0.1, -0.3, -0.05, 0.0]
            );
        }
    }

    proptest! {
        #[test]
        fn constrain_roundtrip(
            beta in prop::array::uniform4(-20.0f64..20.0),
            nu in -2.0f64..2.0,
            sigma0 in 0.1f64..10.0,
            g0 in -1.0f64..1.0,
            g1 in -1.0f64..1.0,
            k in 0.3f64..5.0,
            xi in 1.0f64..500.0,
            tau_scale in 0.2f64..3.0,
            z in prop::collection::vec(prop::array::uniform5(-3.0f64..3.0), 0..4),
            bounded in any::<bool>(),
        ) {
            let bounds = if bounded { [10.0, 1000.0] } else { [f64::INFINITY; 2] };
            let spec = CovarianceSpec::from_covariance(&DESIGN_SIGMA).unwrap();
            let covariance = CovarianceSpec {
                tau: spec.tau.map(|t| t * tau_scale),
                chol_corr: spec.chol_corr,
            };
            let c = Constrained {
                fixed: FixedEffects { beta, nu, sigma0, gamma0: g0, gamma1: g1, weibull_k: k, weibull_xi: xi },
                covariance,
                z_effects: z,
            };
            let back = ParameterVector::unconstrain(&c, bounds).unwrap().constrain();
            prop_assert_eq!(back.fixed.beta, c.fixed.beta);
            prop_assert_eq!(back.z_effects.clone(), c.z_effects.clone());
            for (a, b) in [
                (back.fixed.sigma0, sigma0),
                (back.fixed.weibull_k, k),
                (back.fixed.weibull_xi, xi),
                (back.fixed.nu, nu),
            ] {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            for p in 0..5 {
                prop_assert!((back.covariance.tau[p] - c.covariance.tau[p]).abs() <= 1e-12);
                for q in 0..5 {
                    prop_assert!((back.covariance.chol_corr[p][q] - c.covariance.chol_corr[p][q]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn bounded_weibull_map() {
        for bound in [3.0, 700.0, f64::INFINITY] {
            for x in [-30.0, -2.0, 0.0, 0.7, 5.0, 30.0] {
                let v = weibull_value(x, bound);
                assert!(v > 0.0 && v <= bound);
                let h = 1e-6;
                let (lj, dlj) = weibull_log_jacobian(x, bound);
                let dv = (weibull_value(x + h, bound) - weibull_value(x - h, bound)) / (2.0 * h);
                if x.abs() > 10.0 {
                    // Differences cancel out here; the tails are checked below.
                    continue;
                }
                assert_relative_eq!(lj, dv.ln(), epsilon = 1e-6);
                let fd = (weibull_log_jacobian(x + h, bound).0
                    - weibull_log_jacobian(x - h, bound).0)
                    / (2.0 * h);
                assert_relative_eq!(dlj, fd, epsilon = 1e-6);
                assert_relative_eq!(weibull_dlog(x, bound), dv / v, max_relative = 1e-6);
                if x.abs() < 20.0 {
                    assert_relative_eq!(weibull_free(v, bound).unwrap(), x, epsilon = 1e-9);
                }
            }
        }
        // log(U σ(x) σ(-x)) ≈ log U - |x| in both tails.
        assert_relative_eq!(weibull_log_jacobian(30.0, 3.0).0, 3f64.ln() - 30.0, epsilon = 1e-9);
        assert_relative_eq!(weibull_log_jacobian(-30.0, 3.0).0, 3f64.ln() - 30.0, epsilon = 1e-9);
        assert_eq!(weibull_value(0.0, 8.0), 4.0);
        assert!(weibull_free(8.0, 8.0).is_err());
    }

    #[test]
    fn reconstruction_is_valid() {
        let mut p = ParameterVector::zeros(1);
        for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 / 7.0 - 0.9;
        }
        let c = p.constrain();
        c.fixed.validate().unwrap();
        c.covariance.validate().unwrap();
        let sigma = c.covariance.covariance();
        for k in 0..5 {
            assert_relative_eq!(sigma[k][k], c.covariance.tau[k].powi(2));
        }
    }
}
