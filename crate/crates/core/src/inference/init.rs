//! Cheap closed-form starting values.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{SubjectData, N_EFFECTS};

use super::params::{
    weibull_free, ParameterVector, BETA, GAMMA0, GAMMA1, LOG_SIGMA0, LOG_TAU, NU, WEIBULL_K,
    WEIBULL_XI,
};
use super::prior::PriorConfig;

/// Standalone censored Weibull fit of `(T_i, D_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub k: f64,
    pub xi: f64,
    pub events: usize,
}

/// Maximum-likelihood Weibull fit with the scale profiled out:
/// `ξ^k = Σ T_i^k / d`, then a golden-section search over `log k`.
/// With no events the fit falls back to an exponential with half a pseudo-event.
pub fn fit_weibull(dataset: &[SubjectData]) -> Result<WeibullFit> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let events = dataset.iter().filter(|s| s.event).count();
    let times: Vec<f64> = dataset.iter().map(|s| s.survival_time).collect();
    if events == 0 {
        let total: f64 = times.iter().sum();
        return Ok(WeibullFit {
            k: 1.0,
            xi: total / 0.5,
            events,
        });
    }
    let d = events as f64;
    let sum_log_event: f64 = dataset
        .iter()
        .filter(|s| s.event)
        .map(|s| s.survival_time.ln())
        .sum();
    let profile = |log_k: f64| {
        let k = log_k.exp();
        let a: f64 = times.iter().map(|t| t.powf(k)).sum();
        d * k.ln() - d * (a / d).ln() + (k - 1.0) * sum_log_event - d
    };

    let (mut lo, mut hi) = ((0.05f64).ln(), (20.0f64).ln());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (profile(x1), profile(x2));
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = profile(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = profile(x1);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let k = (0.5 * (lo + hi)).exp();
    let a: f64 = times.iter().map(|t| t.powf(k)).sum();
    let xi = (a / d).powf(1.0 / k);
    Ok(WeibullFit { k, xi, events })
}

/// Least-squares intercept and slope of one subject's untreated measurements.
fn untreated_line(subject: &SubjectData) -> Option<(f64, f64, f64, usize)> {
    let pts: Vec<(f64, f64)> = (0..subject.n_obs())
        .filter(|&j| !subject.previous_treatment(j))
        .map(|j| (subject.times[j], subject.values[j]))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Some((intercept, slope, rss, n))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Starting point: pooled per-subject least squares for `β0, β1`, residual
/// variance for `σ0`, the standalone Weibull fit (kept inside the prior bounds),
/// `γ = ν = 0`, identity correlation, and effects centred on each subject's own
/// line plus `N(0, jitter²)` noise. The Weibull coordinates follow the bounds
/// of `prior`, which should already be resolved.
pub fn initial_values<R: Rng + ?Sized>(
    dataset: &[SubjectData],
    prior: &PriorConfig,
    jitter: f64,
    rng: &mut R,
) -> Result<ParameterVector> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let lines: Vec<Option<(f64, f64, f64, usize)>> = dataset.iter().map(untreated_line).collect();
    let intercepts: Vec<f64> = lines.iter().flatten().map(|l| l.0).collect();
    let slopes: Vec<f64> = lines.iter().flatten().map(|l| l.1).collect();
    let all_y: Vec<f64> = dataset
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .collect();
    let (y_mean, y_sd) = mean_sd(&all_y);

    let (b0, sd_b0, b1, sd_b1) = if intercepts.len() >= 2 {
        let (m0, s0) = mean_sd(&intercepts);
        let (m1, s1) = mean_sd(&slopes);
        (m0, s0, m1, s1)
    } else {
        (y_mean, y_sd, 0.0, 0.1)
    };
    let (rss, df) = lines.iter().flatten().fold((0.0, 0usize), |acc, l| {
        (acc.0 + l.2, acc.1 + l.3.saturating_sub(2))
    });
    let resid_sd = if df > 0 {
        (rss / df as f64).sqrt()
    } else {
        y_sd
    };
    let resid_sd = if resid_sd.is_finite() && resid_sd > 0.0 {
        resid_sd
    } else {
        1.0
    };

    let tau = [
        sd_b0.max(0.1 * resid_sd).max(1e-3),
        sd_b1.max(1e-3),
        resid_sd,
        sd_b1.max(1e-3),
        0.5,
    ];

    let fit = fit_weibull(dataset)?;
    let bounds = prior.weibull_bounds();
    let k = fit.k.min(0.5 * bounds[0]);
    let xi = fit.xi.min(0.5 * bounds[1]);

    let mut p = ParameterVector::zeros(n).with_weibull_bounds(bounds)?;
    {
        let v = p.as_mut_slice();
        v[BETA] = b0;
        v[BETA + 1] = b1;
        v[NU] = 0.0;
        v[LOG_SIGMA0] = resid_sd.ln();
        v[GAMMA0] = 0.0;
        v[GAMMA1] = 0.0;
        v[WEIBULL_K] = weibull_free(k, bounds[0])?;
        v[WEIBULL_XI] = weibull_free(xi, bounds[1])?;
        for (j, t) in tau.iter().enumerate() {
            v[LOG_TAU + j] = t.ln();
        }
    }
    for (i, line) in lines.iter().enumerate() {
        let mut z = [0.0; N_EFFECTS];
        if let Some((a, b, _, _)) = line {
            z[0] = ((a - b0) / tau[0]).clamp(-3.0, 3.0);
            z[1] = ((b - b1) / tau[1]).clamp(-3.0, 3.0);
        }
        for zk in z.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *zk += jitter * e;
        }
        p.set_z_effects(i, &z);
    }
    Ok(p)
}
