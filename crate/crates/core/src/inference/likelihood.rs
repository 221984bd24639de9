//! Per-subject likelihood contributions conditional on the random effects.

use crate::error::{Error, Result};
use crate::model::{
    cumulative_hazard, hazard_at, hazard_segments, log_variance_unchecked, mean_unchecked,
    segment_index_at, FixedEffects, RandomEffects, SubjectData, N_EFFECTS,
};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Gaussian log-density of the observed profile given `r`.
pub fn log_lik_longitudinal(subject: &SubjectData, r: &RandomEffects, fixed: &FixedEffects) -> f64 {
    let s = subject.treatment_start();
    (0..subject.n_obs())
        .map(|j| {
            let z_prev = subject.previous_treatment(j);
            let mu = mean_unchecked(r, subject.times[j], z_prev, s);
            let log_var = log_variance_unchecked(fixed.sigma0, fixed.nu, r.c, z_prev);
            let e = subject.values[j] - mu;
            -HALF_LN_2PI - 0.5 * log_var - 0.5 * e * e * (-log_var).exp()
        })
        .sum()
}

/// `D log λ_i(T) - Λ_i(T)` with left-continuous piecewise-constant covariates.
pub fn log_lik_survival(
    subject: &SubjectData,
    r: &RandomEffects,
    fixed: &FixedEffects,
) -> Result<f64> {
    let t = subject.survival_time;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "survival time must be non-negative, got {t}"
        )));
    }
    let segments = hazard_segments(
        &subject.times,
        &subject.treatment,
        subject.treatment_start(),
        r,
        fixed,
    );
    let cum = cumulative_hazard(&segments, fixed, t)?;
    if subject.event {
        let seg = &segments[segment_index_at(&segments, t)];
        Ok(hazard_at(fixed, seg.mu, seg.sigma2, t)?.ln() - cum)
    } else {
        Ok(-cum)
    }
}

/// Sensitivities of one subject's log-likelihood to the population-level
/// quantities it touches directly (on the sampler's unconstrained scale).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct GlobalGrad {
    pub nu: f64,
    pub log_sigma0: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub log_k: f64,
    pub log_xi: f64,
}

/// Subject record rearranged for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSubject {
    times: Vec<f64>,
    values: Vec<f64>,
    /// Treatment in force at each measurement (`z_{j-1}`).
    prev: Vec<bool>,
    /// Hazard segments with start `< T`: start time, its log (unused for 0), treatment state.
    seg_start: Vec<f64>,
    seg_log_start: Vec<f64>,
    seg_z: Vec<bool>,
    treatment_start: f64,
    log_t_end: f64,
    event: bool,
    /// Segment whose covariates apply at `T`.
    end_segment: usize,
}

impl PreparedSubject {
    pub fn new(subject: &SubjectData) -> Self {
        let m = subject.n_obs();
        let t_end = subject.survival_time;
        let mut seg_start = vec![0.0];
        let mut seg_z = vec![false];
        for j in 0..m {
            if subject.times[j] < t_end {
                seg_start.push(subject.times[j]);
                seg_z.push(subject.treatment[j]);
            }
        }
        let end_segment = seg_start.len() - 1;
        debug_assert_eq!(
            end_segment,
            segment_index_at(
                &seg_start
                    .iter()
                    .map(|&s| crate::model::HazardSegment {
                        start: s,
                        mu: 0.0,
                        sigma2: 1.0
                    })
                    .collect::<Vec<_>>(),
                t_end
            )
        );
        Self {
            times: subject.times.clone(),
            values: subject.values.clone(),
            prev: (0..m).map(|j| subject.previous_treatment(j)).collect(),
            seg_log_start: seg_start.iter().map(|s| s.ln()).collect(),
            seg_start,
            seg_z,
            treatment_start: subject.treatment_start(),
            log_t_end: t_end.ln(),
            event: subject.event,
            end_segment,
        }
    }

    pub fn n_events(&self) -> usize {
        usize::from(self.event)
    }

    /// Joint log-likelihood (longitudinal + survival) and its gradient.
    /// `g_r` receives `∂ℓ/∂r`; `g` accumulates the global sensitivities.
    pub fn log_lik_and_grad(
        &self,
        r: &[f64; N_EFFECTS],
        fixed: &FixedEffects,
        g_r: &mut [f64; N_EFFECTS],
        g: &mut GlobalGrad,
    ) -> f64 {
        *g_r = [0.0; N_EFFECTS];
        let s = self.treatment_start;
        let log_s2 = 2.0 * fixed.sigma0.ln();
        let mut total = 0.0;

        for j in 0..self.times.len() {
            let t = self.times[j];
            let w = self.prev[j];
            let (mu, ls) = if w {
                (
                    r[0] + r[1] * t + r[2] + r[3] * (t - s),
                    log_s2 + fixed.nu + r[4],
                )
            } else {
                (r[0] + r[1] * t, log_s2 + r[4])
            };
            let inv = (-ls).exp();
            let e = self.values[j] - mu;
            total += -HALF_LN_2PI - 0.5 * ls - 0.5 * e * e * inv;
            let d_mu = e * inv;
            let d_ls = -0.5 + 0.5 * e * e * inv;
            g_r[0] += d_mu;
            g_r[1] += d_mu * t;
            if w {
                g_r[2] += d_mu;
                g_r[3] += d_mu * (t - s);
                g.nu += d_ls;
            }
            g_r[4] += d_ls;
            g.log_sigma0 += 2.0 * d_ls;
        }

        // Survival: Λ0(t) = exp(k (log t - log ξ)).
        let k = fixed.weibull_k;
        let log_xi = fixed.weibull_xi.ln();
        let n_seg = self.seg_start.len();
        let mut cum_hazard = 0.0;
        for q in 0..n_seg {
            let a = self.seg_start[q];
            let z = self.seg_z[q];
            let (mu, ls) = if z {
                (
                    r[0] + r[1] * a + r[2] + r[3] * (a - s),
                    log_s2 + fixed.nu + r[4],
                )
            } else {
                (r[0] + r[1] * a, log_s2 + r[4])
            };
            let eta = fixed.gamma0 * mu + fixed.gamma1 * ls;
            let rate = eta.exp();

            let log_b = if q + 1 < n_seg {
                self.seg_log_start[q + 1]
            } else {
                self.log_t_end
            };
            let x_b = k * (log_b - log_xi);
            let cum_b = x_b.exp();
            let (cum_a, x_a) = if a > 0.0 {
                let x = k * (self.seg_log_start[q] - log_xi);
                (x.exp(), x)
            } else {
                (0.0, 0.0)
            };
            let delta = cum_b - cum_a;
            let h = delta * rate;
            cum_hazard += h;

            let mut d_eta = -h;
            if self.event && q == self.end_segment {
                total += eta;
                d_eta += 1.0;
            }
            g.gamma0 += d_eta * mu;
            g.gamma1 += d_eta * ls;
            let d_mu = d_eta * fixed.gamma0;
            let d_ls = d_eta * fixed.gamma1;
            g_r[0] += d_mu;
            g_r[1] += d_mu * a;
            if z {
                g_r[2] += d_mu;
                g_r[3] += d_mu * (a - s);
                g.nu += d_ls;
            }
            g_r[4] += d_ls;
            g.log_sigma0 += 2.0 * d_ls;

            // ∂Λ0(t)/∂log k = Λ0(t) x(t), ∂Λ0(t)/∂log ξ = -k Λ0(t).
            g.log_k -= rate * (cum_b * x_b - cum_a * x_a);
            g.log_xi += rate * k * delta;
        }
        total -= cum_hazard;

        if self.event {
            // log λ0(T) = log k - k log ξ + (k - 1) log T
            total += k.ln() - k * log_xi + (k - 1.0) * self.log_t_end;
            g.log_k += 1.0 + k * (self.log_t_end - log_xi);
            g.log_xi -= k;
        }
        total
    }

    #[cfg(test)]
    pub fn log_lik(&self, r: &[f64; N_EFFECTS], fixed: &FixedEffects) -> f64 {
        let mut g_r = [0.0; N_EFFECTS];
        let mut g = GlobalGrad::default();
        self.log_lik_and_grad(r, fixed, &mut g_r, &mut g)
    }
}
