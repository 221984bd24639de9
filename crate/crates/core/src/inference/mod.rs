//! Unconstrained parametrisation, priors and the differentiable log-posterior.

pub mod corr;
pub mod init;
pub mod likelihood;
pub mod params;
pub mod prior;

use crate::error::{Error, Result};
use crate::model::{Mat5, SubjectData, N_EFFECTS};
use crate::sampler::LogDensity;

pub use init::{fit_weibull, initial_values, WeibullFit};
pub use likelihood::{log_lik_longitudinal, log_lik_survival};
pub use params::{Constrained, ParameterVector};
pub use prior::{log_prior, PriorConfig};

use corr::{corr_cholesky_f64, corr_weighted_grad, N_CORR};
use likelihood::{GlobalGrad, PreparedSubject};
use params::{
    fixed_from_slice, weibull_dlog, BETA, CORR, EFFECTS, GAMMA0, GAMMA1, LOG_SIGMA0, LOG_TAU, NU,
    WEIBULL_K, WEIBULL_XI,
};

/// Log-posterior of the joint model over the flat unconstrained vector.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    subjects: Vec<PreparedSubject>,
    prior: PriorConfig,
    /// Bounds defining the Weibull coordinates (see [`ParameterVector`]).
    coords: [f64; 2],
    n_events: usize,
}

impl JointPosterior {
    /// Prepares the dataset and fills any unset Weibull prior bounds from it.
    pub fn new(dataset: &[SubjectData], prior: &PriorConfig) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        for s in dataset {
            s.validate()?;
        }
        let prior = prior.resolve(dataset)?;
        let subjects: Vec<PreparedSubject> = dataset.iter().map(PreparedSubject::new).collect();
        let n_events = subjects.iter().map(PreparedSubject::n_events).sum();
        Ok(Self {
            subjects,
            coords: prior.weibull_bounds(),
            prior,
            n_events,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Prior with its Weibull bounds resolved.
    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        ParameterVector::len_for(self.subjects.len())
    }

    /// Bounds that define the Weibull coordinates of the flat vector; these
    /// are the resolved prior bounds.
    pub fn weibull_coordinates(&self) -> [f64; 2] {
        self.coords
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.log_density_and_gradient(x, &mut g)
    }

    /// Value and exact gradient; `-∞` (with an unspecified gradient) outside the support.
    pub fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "parameter vector length");
        assert_eq!(grad.len(), x.len(), "gradient length");
        grad.fill(0.0);

        let mut lp = prior::scalar_log_prior_and_grad(x, &self.prior, self.coords, grad);
        if lp == f64::NEG_INFINITY {
            return lp;
        }

        let fixed = fixed_from_slice(x, self.coords);
        let theta = fixed.theta();
        let tau: [f64; N_EFFECTS] = std::array::from_fn(|k| x[LOG_TAU + k].exp());
        let free = &x[CORR..CORR + N_CORR];
        let l = corr_cholesky_f64(free);

        let mut g_global = GlobalGrad::default();
        let mut g_l: Mat5 = [[0.0; N_EFFECTS]; N_EFFECTS];
        let mut g_r = [0.0; N_EFFECTS];
        for (i, subject) in self.subjects.iter().enumerate() {
            let o = EFFECTS + N_EFFECTS * i;
            let z = &x[o..o + N_EFFECTS];
            let lz: [f64; N_EFFECTS] =
                std::array::from_fn(|k| (0..=k).map(|j| l[k][j] * z[j]).sum());
            let r: [f64; N_EFFECTS] = std::array::from_fn(|k| theta[k] + tau[k] * lz[k]);

            lp += subject.log_lik_and_grad(&r, &fixed, &mut g_r, &mut g_global);

            for k in 0..4 {
                grad[BETA + k] += g_r[k];
            }
            for k in 0..N_EFFECTS {
                let w = g_r[k] * tau[k];
                grad[LOG_TAU + k] += w * lz[k];
                for j in 0..=k {
                    grad[o + j] += w * l[k][j];
                    g_l[k][j] += w * z[j];
                }
            }
        }

        grad[NU] += g_global.nu;
        grad[LOG_SIGMA0] += g_global.log_sigma0;
        grad[GAMMA0] += g_global.gamma0;
        grad[GAMMA1] += g_global.gamma1;
        grad[WEIBULL_K] += g_global.log_k * weibull_dlog(x[WEIBULL_K], self.coords[0]);
        grad[WEIBULL_XI] += g_global.log_xi * weibull_dlog(x[WEIBULL_XI], self.coords[1]);

        // The weighted sum Σ G_L·L only carries the chain rule; its value is removed.
        let (value, g_corr) = corr_weighted_grad(free, &g_l, 1.0, self.prior.lkj_eta - 1.0);
        let chain_value: f64 = (0..N_EFFECTS)
            .flat_map(|k| (0..=k).map(move |j| (k, j)))
            .map(|(k, j)| g_l[k][j] * l[k][j])
            .sum();
        lp += value - chain_value;
        for (g, d) in grad[CORR..CORR + N_CORR].iter_mut().zip(g_corr) {
            *g += d;
        }

        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl LogDensity for JointPosterior {
    fn dim(&self) -> usize {
        JointPosterior::dim(self)
    }

    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        JointPosterior::log_density_and_gradient(self, x, grad)
    }
}

fn check_len(params: &ParameterVector, dataset: &[SubjectData]) -> Result<()> {
    if params.n_subjects() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector is for {} subjects, dataset has {}",
            params.n_subjects(),
            dataset.len()
        )));
    }
    Ok(())
}

/// Posterior evaluated in the coordinates of `params`. Bounded coordinates must
/// match the resolved prior; unbounded (log) coordinates are accepted with the
/// prior's bounds enforced as a hard support.
fn posterior_for(
    params: &ParameterVector,
    dataset: &[SubjectData],
    prior: &PriorConfig,
) -> Result<JointPosterior> {
    check_len(params, dataset)?;
    let mut post = JointPosterior::new(dataset, prior)?;
    let coords = params.weibull_bounds();
    for j in 0..2 {
        if coords[j].is_finite() && coords[j] != post.coords[j] {
            return Err(Error::InvalidArgument(format!(
                "parameter vector uses Weibull bounds {coords:?}, the prior resolves to {:?}",
                post.coords
            )));
        }
    }
    post.coords = coords;
    Ok(post)
}

/// Log-posterior with the prior's Weibull bounds resolved against `dataset`.
pub fn log_posterior(
    params: &ParameterVector,
    dataset: &[SubjectData],
    prior: &PriorConfig,
) -> Result<f64> {
    Ok(posterior_for(params, dataset, prior)?.log_density(params.as_slice()))
}

/// Gradient of [`log_posterior`]; errors outside the support.
pub fn grad_log_posterior(
    params: &ParameterVector,
    dataset: &[SubjectData],
    prior: &PriorConfig,
) -> Result<Vec<f64>> {
    let post = posterior_for(params, dataset, prior)?;
    let mut g = vec![0.0; post.dim()];
    let lp = post.log_density_and_gradient(params.as_slice(), &mut g);
    if lp == f64::NEG_INFINITY {
        return Err(Error::Domain(
            "gradient requested outside the posterior support".into(),
        ));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_cohort, SimConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_dataset(n: usize, seed: u64) -> Vec<SubjectData> {
        let mut cfg = SimConfig {
            n_subjects: n,
            seed,
            ..SimConfig::default()
        };
        cfg.alpha.alpha0 = -2.3;
        cfg.fixed.weibull_xi = 15.0;
        simulate_cohort(&cfg).unwrap()
    }

    fn random_point(n: usize, rng: &mut ChaCha8Rng) -> ParameterVector {
        let mut p = ParameterVector::zeros(n);
        let v = p.as_mut_slice();
        v[BETA] = 12.0 + rng.random_range(-1.0..1.0);
        v[BETA + 1] = rng.random_range(-0.3..0.3);
        v[BETA + 2] = rng.random_range(-1.0..1.0);
        v[BETA + 3] = rng.random_range(-0.3..0.3);
        v[NU] = rng.random_range(-1.0..1.0);
        v[LOG_SIGMA0] = rng.random_range(-0.3..1.0);
        v[GAMMA0] = rng.random_range(-0.2..0.2);
        v[GAMMA1] = rng.random_range(-0.5..0.5);
        v[WEIBULL_K] = rng.random_range(-0.3..0.7);
        v[WEIBULL_XI] = rng.random_range(1.5..3.0);
        for k in 0..N_EFFECTS {
            v[LOG_TAU + k] = rng.random_range(-2.0..0.5);
        }
        for c in CORR..CORR + N_CORR {
            v[c] = rng.random_range(-1.0..1.0);
        }
        for e in v[EFFECTS..].iter_mut() {
            *e = rng.random_range(-2.0..2.0);
        }
        p
    }

    #[test]
    fn composition_of_terms() {
        let data = small_dataset(6, 3);
        let prior = PriorConfig::default().resolve(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = random_point(data.len(), &mut rng);
            let c = p.constrain();
            let mut expected = log_prior(&p, &prior);
            for (i, s) in data.iter().enumerate() {
                let r = c.random_effects(i);
                expected += log_lik_longitudinal(s, &r, &c.fixed)
                    + log_lik_survival(s, &r, &c.fixed).unwrap();
            }
            let got = log_posterior(&p, &data, &prior).unwrap();
            assert_relative_eq!(got, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = small_dataset(4, 11);
        let post = JointPosterior::new(&data, &PriorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_point(data.len(), &mut rng);
        let x = p.as_slice().to_vec();
        let mut g = vec![0.0; x.len()];
        post.log_density_and_gradient(&x, &mut g);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (post.log_density(&xp) - post.log_density(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0),
                "coordinate {i}: analytic {} vs fd {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn no_wall_at_the_weibull_bound() {
        // Free coordinates far out map just below U; density and gradient stay finite.
        let data = small_dataset(4, 11);
        let post = JointPosterior::new(&data, &PriorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = random_point(data.len(), &mut rng).into_vec();
        let h = 1e-5;
        for far in [4.0, 9.0] {
            x[WEIBULL_K] = far;
            x[WEIBULL_XI] = far;
            let mut g = vec![0.0; x.len()];
            assert!(post.log_density_and_gradient(&x, &mut g).is_finite());
            for i in [WEIBULL_K, WEIBULL_XI, GAMMA0] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (post.log_density(&xp) - post.log_density(&xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn bounded_coordinates_must_match_the_prior() {
        let data = small_dataset(3, 2);
        let p = ParameterVector::zeros(data.len()).with_weibull_bounds([5.0, 50.0]).unwrap();
        let prior = PriorConfig {
            weibull_k_bound: Some(5.0),
            weibull_xi_bound: Some(50.0),
            ..PriorConfig::default()
        };
        assert!(log_posterior(&p, &data, &prior).unwrap().is_finite());
        let other = PriorConfig { weibull_xi_bound: Some(60.0), ..prior };
        assert!(log_posterior(&p, &data, &other).is_err());
    }

    #[test]
    fn gaussian_score_in_intercept() {
        // One observation, treatment never starts, survival terms switched off.
        let s = SubjectData::new("1", vec![1.0], vec![3.0], vec![false], 1.0, false).unwrap();
        let prior = PriorConfig {
            weibull_k_bound: Some(10.0),
            weibull_xi_bound: Some(1e6),
            ..PriorConfig::default()
        };
        let mut p = ParameterVector::zeros(1);
        p.as_mut_slice()[BETA] = 1.5;
        p.as_mut_slice()[WEIBULL_XI] = 12.0;
        let g = grad_log_posterior(&p, &[s], &prior).unwrap();
        // μ = 1.5, y = 3, σ² = 1 ⇒ -(μ - y)/σ² = 1.5
        assert_relative_eq!(g[BETA], 1.5, epsilon = 1e-4);
    }

    #[test]
    fn subject_order_does_not_matter() {
        let data = small_dataset(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_point(data.len(), &mut rng);
        let prior = PriorConfig::default();
        let base = log_posterior(&p, &data, &prior).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let mut q = p.clone();
        for i in 0..data.len() {
            q.set_z_effects(i, &p.z_effects(data.len() - 1 - i));
        }
        assert_relative_eq!(
            log_posterior(&q, &rev, &prior).unwrap(),
            base,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_effects_give_population_mean() {
        let data = small_dataset(3, 1);
        let mut p = ParameterVector::zeros(data.len());
        p.as_mut_slice()[BETA..BETA + 4].copy_from_slice(&[12.0, 0.1, -0.3, -0.05]);
        let c = p.constrain();
        for i in 0..data.len() {
            assert_eq!(
                c.random_effects(i).to_array(),
                [12.0, 0.1, -0.3, -0.05, 0.0]
            );
        }
    }

    #[test]
    fn gradient_vanishes_at_a_maximum() {
        // Gradient ascent on a small dataset with a tight Weibull box kept away.
        let data = small_dataset(3, 21);
        let post = JointPosterior::new(&data, &PriorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = initial_values(&data, post.prior(), 0.0, &mut rng)
            .unwrap()
            .into_vec();
        // Flat priors on β, ν, γ and one-subject-level variance make the full
        // posterior improper; hold everything but β0, β1 and σ0 at its start.
        let free = [BETA, BETA + 1, LOG_SIGMA0];
        let mut g = vec![0.0; x.len()];
        let mut step = 1e-3;
        let mut f = post.log_density_and_gradient(&x, &mut g);
        for _ in 0..20_000 {
            let mut trial = x.clone();
            for &i in &free {
                trial[i] += step * g[i];
            }
            let mut gt = vec![0.0; x.len()];
            let ft = post.log_density_and_gradient(&trial, &mut gt);
            if ft >= f {
                x = trial;
                g = gt;
                f = ft;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
            if free.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt() < 1e-7 {
                break;
            }
        }
        let norm = free.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "gradient norm {norm}");
    }
}
