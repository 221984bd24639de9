//! Domain types and the closed-form pieces of the three submodels.
//!
//! Treatment initiation follows an absorbing probit model driven by the most
//! recent observed value. The longitudinal profile is a subject-specific linear
//! growth model whose mean and log-variance shift once treatment starts. The
//! hazard is Weibull, scaled by the current conditional mean and log-variance.
//!
//! Hazard covariates are piecewise constant and left-continuous: on the interval
//! `(a_q, a_{q+1}]` the hazard uses the treatment state `z_q` and the conditional
//! mean evaluated at the left endpoint `a_q`. The left endpoints are `0` (baseline,
//! untreated) followed by every measurement time; the last segment extends to
//! infinity.

use libm::erfc;

use crate::error::{ensure_finite, Error, Result};

/// Number of subject-level latent variables `(b0, b1, b2, b3, c)`.
pub const N_EFFECTS: usize = 5;

pub type Mat5 = [[f64; N_EFFECTS]; N_EFFECTS];

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// One individual's observed record.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: String,
    /// Measurement times `t_1 < ... < t_m`, all strictly positive. `t_0 = 0` is implicit.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Treatment indicator recorded at each occasion; `z_0 = 0` is implicit.
    pub treatment: Vec<bool>,
    pub survival_time: f64,
    pub event: bool,
}

impl SubjectData {
    pub fn new(
        id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<f64>,
        treatment: Vec<bool>,
        survival_time: f64,
        event: bool,
    ) -> Result<Self> {
        let subject = Self {
            id: id.into(),
            times,
            values,
            treatment,
            survival_time,
            event,
        };
        subject.validate()?;
        Ok(subject)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        let m = self.times.len();
        if m == 0 {
            return Err(Error::InvalidArgument(format!(
                "subject {id}: at least one measurement is required"
            )));
        }
        if self.values.len() != m || self.treatment.len() != m {
            return Err(Error::InvalidArgument(format!(
                "subject {id}: times, values and treatment must have equal length"
            )));
        }
        for (j, (&t, &y)) in self.times.iter().zip(&self.values).enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "subject {id}: measurement time {t} at occasion {} must be finite and > 0",
                    j + 1
                )));
            }
            if !y.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "subject {id}: value at occasion {} is not finite",
                    j + 1
                )));
            }
        }
        if let Some(j) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "subject {id}: times must be strictly increasing (occasion {})",
                j + 2
            )));
        }
        if let Some(j) = self.treatment.windows(2).position(|w| w[0] && !w[1]) {
            return Err(Error::InvalidArgument(format!(
                "subject {id}: treatment non-decreasing violated at occasion {}",
                j + 2
            )));
        }
        if !self.survival_time.is_finite() || self.survival_time < self.times[0] {
            return Err(Error::InvalidArgument(format!(
                "subject {id}: survival time {} must be finite and >= first measurement time {}",
                self.survival_time, self.times[0]
            )));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    /// Treatment state in force when occasion `j` (0-based) was measured, i.e. `z_{j-1}`.
    pub fn previous_treatment(&self, j: usize) -> bool {
        j > 0 && self.treatment[j - 1]
    }

    /// Time of the first untreated-to-treated transition, or the last measurement
    /// time when treatment never starts.
    pub fn treatment_start(&self) -> f64 {
        treatment_start(&self.times, &self.treatment)
    }
}

pub(crate) fn treatment_start(times: &[f64], treatment: &[bool]) -> f64 {
    treatment
        .iter()
        .position(|&z| z)
        .map(|j| times[j])
        .unwrap_or_else(|| *times.last().expect("non-empty times"))
}

/// Population-level parameters of the longitudinal and survival submodels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedEffects {
    /// `(β0 intercept, β1 slope/yr, β2 treatment level shift, β3 treatment slope shift/yr)`.
    pub beta: [f64; 4],
    /// Log-variance shift under treatment.
    pub nu: f64,
    /// Baseline residual standard deviation.
    pub sigma0: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub weibull_k: f64,
    pub weibull_xi: f64,
}

impl FixedEffects {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta0", self.beta[0]),
            ("beta1", self.beta[1]),
            ("beta2", self.beta[2]),
            ("beta3", self.beta[3]),
            ("nu", self.nu),
            ("gamma0", self.gamma0),
            ("gamma1", self.gamma1),
        ] {
            ensure_finite(name, v)?;
        }
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("weibull_k", self.weibull_k),
            ("weibull_xi", self.weibull_xi),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Log of the Weibull hazard intercept, `-k log ξ`.
    pub fn neg_k_log_xi(&self) -> f64 {
        -self.weibull_k * self.weibull_xi.ln()
    }

    /// Mean vector of the random effects: `(β, 0)`.
    pub fn theta(&self) -> [f64; N_EFFECTS] {
        [self.beta[0], self.beta[1], self.beta[2], self.beta[3], 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreatmentParams {
    pub alpha0: f64,
    pub alpha1: f64,
}

/// Subject-level latent vector `r_i = (b0, b1, b2, b3, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RandomEffects {
    pub b: [f64; 4],
    pub c: f64,
}

impl RandomEffects {
    pub fn from_array(r: [f64; N_EFFECTS]) -> Self {
        Self {
            b: [r[0], r[1], r[2], r[3]],
            c: r[4],
        }
    }

    pub fn to_array(&self) -> [f64; N_EFFECTS] {
        [self.b[0], self.b[1], self.b[2], self.b[3], self.c]
    }
}

/// Random-effects covariance as scales and the Cholesky factor of the correlation
/// matrix: `Σ = diag(τ) L Lᵀ diag(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub tau: [f64; N_EFFECTS],
    pub chol_corr: Mat5,
}

const CORR_ROW_TOL: f64 = 1e-10;

impl CovarianceSpec {
    pub fn new(tau: [f64; N_EFFECTS], chol_corr: Mat5) -> Result<Self> {
        let spec = Self { tau, chol_corr };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Domain(format!("scales must be positive, got {t}")));
        }
        let l = &self.chol_corr;
        for i in 0..N_EFFECTS {
            for j in (i + 1)..N_EFFECTS {
                if l[i][j] != 0.0 {
                    return Err(Error::Domain(
                        "correlation factor must be lower-triangular".into(),
                    ));
                }
            }
            if !(l[i][i] > 0.0) {
                return Err(Error::Domain(
                    "correlation factor must have a positive diagonal".into(),
                ));
            }
            let norm2: f64 = l[i].iter().map(|v| v * v).sum();
            if (norm2 - 1.0).abs() > CORR_ROW_TOL {
                return Err(Error::Domain(format!(
                    "row {i} of the correlation factor has squared norm {norm2}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Decomposes a positive-definite covariance matrix.
    pub fn from_covariance(sigma: &Mat5) -> Result<Self> {
        let mut tau = [0.0; N_EFFECTS];
        for k in 0..N_EFFECTS {
            if !(sigma[k][k] > 0.0) {
                return Err(Error::Domain(format!(
                    "covariance diagonal entry {k} must be positive"
                )));
            }
            tau[k] = sigma[k][k].sqrt();
        }
        let mut corr = [[0.0; N_EFFECTS]; N_EFFECTS];
        for p in 0..N_EFFECTS {
            for q in 0..N_EFFECTS {
                corr[p][q] = if p == q {
                    1.0
                } else {
                    sigma[p][q] / (tau[p] * tau[q])
                };
            }
        }
        let mut l = cholesky(&corr)?;
        // Renormalise rows to absorb rounding so the unit-norm invariant holds exactly.
        for row in l.iter_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Self::new(tau, l)
    }

    pub fn correlation(&self) -> Mat5 {
        mat_mul_transpose(&self.chol_corr, &self.chol_corr)
    }

    pub fn covariance(&self) -> Mat5 {
        let omega = self.correlation();
        let mut sigma = [[0.0; N_EFFECTS]; N_EFFECTS];
        for p in 0..N_EFFECTS {
            for q in 0..N_EFFECTS {
                sigma[p][q] = self.tau[p] * omega[p][q] * self.tau[q];
            }
            sigma[p][p] = self.tau[p] * self.tau[p];
        }
        sigma
    }

    /// `diag(τ) L`, the factor mapping standard-normal draws onto `r - θ`.
    pub fn scaled_factor(&self) -> Mat5 {
        let mut a = self.chol_corr;
        for (row, t) in a.iter_mut().zip(self.tau) {
            row.iter_mut().for_each(|v| *v *= t);
        }
        a
    }
}

/// Lower Cholesky factor of a symmetric positive-definite 5×5 matrix.
pub fn cholesky(a: &Mat5) -> Result<Mat5> {
    let mut l = [[0.0; N_EFFECTS]; N_EFFECTS];
    for i in 0..N_EFFECTS {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return Err(Error::Domain("matrix is not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Cholesky-like factor `A` with `A Aᵀ = Σ` for a positive semi-definite matrix.
/// Rows whose pivot vanishes (relative to `tol`) get zero columns.
pub fn cholesky_psd(a: &Mat5, tol: f64) -> Result<Mat5> {
    let scale = (0..N_EFFECTS).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut l = [[0.0; N_EFFECTS]; N_EFFECTS];
    for i in 0..N_EFFECTS {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d < -tol * scale.max(1.0) {
                    return Err(Error::Domain("matrix is not positive semi-definite".into()));
                }
                l[i][i] = if d > tol * scale.max(1.0) {
                    d.sqrt()
                } else {
                    0.0
                };
            } else if l[j][j] > 0.0 {
                l[i][j] = (a[i][j] - s) / l[j][j];
            } else if (a[i][j] - s).abs() > tol.sqrt() * scale.max(1.0) {
                return Err(Error::Domain("matrix is not positive semi-definite".into()));
            }
        }
    }
    Ok(l)
}

/// `A Bᵀ`.
pub fn mat_mul_transpose(a: &Mat5, b: &Mat5) -> Mat5 {
    let mut out = [[0.0; N_EFFECTS]; N_EFFECTS];
    for i in 0..N_EFFECTS {
        for j in 0..N_EFFECTS {
            out[i][j] = (0..N_EFFECTS).map(|k| a[i][k] * b[j][k]).sum();
        }
    }
    out
}

/// Treatment probability at an occasion given the value just observed and the
/// previous treatment state. Treatment is absorbing.
pub fn treatment_probability(y_prev: f64, z_prev: bool, alpha: &TreatmentParams) -> Result<f64> {
    ensure_finite("y_prev", y_prev)?;
    ensure_finite("alpha0", alpha.alpha0)?;
    ensure_finite("alpha1", alpha.alpha1)?;
    if z_prev {
        return Ok(1.0);
    }
    Ok(std_normal_cdf(alpha.alpha0 + alpha.alpha1 * y_prev))
}

#[inline]
pub(crate) fn mean_unchecked(r: &RandomEffects, t: f64, z_prev: bool, s: f64) -> f64 {
    let base = r.b[0] + r.b[1] * t;
    if z_prev {
        base + r.b[2] + r.b[3] * (t - s)
    } else {
        base
    }
}

/// `b0 + b1 t + z_prev (b2 + b3 (t - s))`.
pub fn conditional_mean(r: &RandomEffects, t: f64, z_prev: bool, s: f64) -> Result<f64> {
    ensure_finite("t", t)?;
    ensure_finite("s", s)?;
    for v in r.to_array() {
        ensure_finite("random effect", v)?;
    }
    Ok(mean_unchecked(r, t, z_prev, s))
}

#[inline]
pub(crate) fn log_variance_unchecked(sigma0: f64, nu: f64, c: f64, z_prev: bool) -> f64 {
    2.0 * sigma0.ln() + if z_prev { nu } else { 0.0 } + c
}

/// `σ0² exp(ν z_prev + c)`.
pub fn conditional_variance(sigma0: f64, nu: f64, c: f64, z_prev: bool) -> Result<f64> {
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return Err(Error::Domain(format!(
            "sigma0 must be positive, got {sigma0}"
        )));
    }
    ensure_finite("nu", nu)?;
    ensure_finite("c", c)?;
    let shift = if z_prev { nu } else { 0.0 };
    Ok(sigma0 * sigma0 * (shift + c).exp())
}

fn check_weibull(k: f64, xi: f64, t: f64) -> Result<()> {
    if !(k.is_finite() && k > 0.0) || !(xi.is_finite() && xi > 0.0) {
        return Err(Error::Domain(format!(
            "Weibull shape and scale must be positive, got k={k}, xi={xi}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// Weibull baseline hazard `(k/ξ)(t/ξ)^(k-1)`.
pub fn baseline_hazard(k: f64, xi: f64, t: f64) -> Result<f64> {
    check_weibull(k, xi, t)?;
    Ok((k / xi) * (t / xi).powf(k - 1.0))
}

#[inline]
pub(crate) fn cum_baseline_unchecked(k: f64, xi: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (t / xi).powf(k)
    }
}

/// Weibull cumulative baseline hazard `(t/ξ)^k`.
pub fn cumulative_baseline_hazard(k: f64, xi: f64, t: f64) -> Result<f64> {
    check_weibull(k, xi, t)?;
    Ok(cum_baseline_unchecked(k, xi, t))
}

/// Linear predictor of the hazard, `γ0 μ + γ1 log σ²`.
#[inline]
pub fn hazard_log_scale(fixed: &FixedEffects, mu: f64, sigma2: f64) -> f64 {
    fixed.gamma0 * mu + fixed.gamma1 * sigma2.ln()
}

/// `λ0(t) exp(γ0 μ + γ1 log σ²)`.
pub fn hazard_at(fixed: &FixedEffects, mu: f64, sigma2: f64, t: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "variance must be positive, got {sigma2}"
        )));
    }
    ensure_finite("mu", mu)?;
    let base = baseline_hazard(fixed.weibull_k, fixed.weibull_xi, t)?;
    Ok(base * hazard_log_scale(fixed, mu, sigma2).exp())
}

/// Hazard ratio between two subjects sharing a mean profile but differing in
/// residual variance.
pub fn variance_hazard_ratio(sigma2_i: f64, sigma2_j: f64, gamma1: f64) -> Result<f64> {
    if !(sigma2_i > 0.0 && sigma2_j > 0.0) {
        return Err(Error::Domain(format!(
            "variances must be positive, got {sigma2_i} and {sigma2_j}"
        )));
    }
    Ok((gamma1 * (sigma2_i / sigma2_j).ln()).exp())
}

/// Hazard covariates held constant from `start` to the next segment's start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardSegment {
    pub start: f64,
    pub mu: f64,
    pub sigma2: f64,
}

/// Builds the left-continuous covariate path of one subject: a baseline segment
/// from 0 (untreated, mean `b0`) and one segment from each measurement time
/// using the treatment recorded there.
pub fn hazard_segments(
    times: &[f64],
    treatment: &[bool],
    treatment_start: f64,
    r: &RandomEffects,
    fixed: &FixedEffects,
) -> Vec<HazardSegment> {
    let mut segments = Vec::with_capacity(times.len() + 1);
    let base_var = fixed.sigma0 * fixed.sigma0;
    segments.push(HazardSegment {
        start: 0.0,
        mu: mean_unchecked(r, 0.0, false, treatment_start),
        sigma2: base_var * r.c.exp(),
    });
    for (&t, &z) in times.iter().zip(treatment) {
        let shift = if z { fixed.nu } else { 0.0 };
        segments.push(HazardSegment {
            start: t,
            mu: mean_unchecked(r, t, z, treatment_start),
            sigma2: base_var * (shift + r.c).exp(),
        });
    }
    segments
}

pub(crate) fn validate_segments(segments: &[HazardSegment]) -> Result<()> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidArgument("segment list is empty".into()))?;
    if first.start != 0.0 {
        return Err(Error::InvalidArgument(
            "the first hazard segment must start at 0".into(),
        ));
    }
    if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
        return Err(Error::InvalidArgument(
            "segment start times must be strictly increasing".into(),
        ));
    }
    if segments
        .iter()
        .any(|s| !(s.sigma2 > 0.0) || !s.mu.is_finite())
    {
        return Err(Error::InvalidArgument(
            "segment covariates must be finite with positive variance".into(),
        ));
    }
    Ok(())
}

/// Index of the segment whose covariates apply at time `t` (left-continuous).
pub fn segment_index_at(segments: &[HazardSegment], t: f64) -> usize {
    // Segment q covers (start_q, start_{q+1}]; the baseline segment also covers t = 0.
    segments.iter().rposition(|s| s.start < t).unwrap_or(0)
}

/// Cumulative hazard `Λ_i(T)` over a piecewise-constant covariate path.
pub fn cumulative_hazard(
    segments: &[HazardSegment],
    fixed: &FixedEffects,
    t_end: f64,
) -> Result<f64> {
    if !(t_end >= 0.0) {
        return Err(Error::Domain(format!(
            "time must be non-negative, got {t_end}"
        )));
    }
    validate_segments(segments)?;
    check_weibull(fixed.weibull_k, fixed.weibull_xi, t_end)?;
    let (k, xi) = (fixed.weibull_k, fixed.weibull_xi);
    let mut total = 0.0;
    for (q, seg) in segments.iter().enumerate() {
        if seg.start >= t_end {
            break;
        }
        let end = segments
            .get(q + 1)
            .map_or(t_end, |next| next.start.min(t_end));
        let delta = cum_baseline_unchecked(k, xi, end) - cum_baseline_unchecked(k, xi, seg.start);
        total += delta * hazard_log_scale(fixed, seg.mu, seg.sigma2).exp();
    }
    Ok(total)
}

/// Hazard at `t` along a covariate path.
pub fn path_hazard(segments: &[HazardSegment], fixed: &FixedEffects, t: f64) -> Result<f64> {
    validate_segments(segments)?;
    let seg = &segments[segment_index_at(segments, t)];
    hazard_at(fixed, seg.mu, seg.sigma2, t)
}
