//! Screen for between-subject heterogeneity of the residual variance.
//!
//! Under a common residual variance, `df_i s²_i / σ²` is `χ²(df_i)` for every
//! subject, where `df_i = q_i - p_i` for `q_i` residuals of a fit with `p_i`
//! mean parameters. Mapping each subject through that CDF and then `Φ⁻¹` gives
//! an approximately normal sample, which is checked with the Anderson–Darling
//! normality test. The test estimates mean and variance from the sample: the
//! pooled `σ̂²` shifts every transformed value together, so comparing against
//! a fully specified `N(0, 1)` would be far too conservative.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{std_normal_cdf, SubjectData};

/// Residuals of one subject from a homoskedastic fit with `n_mean_params`
/// subject-specific mean parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResiduals {
    pub id: String,
    pub residuals: Vec<f64>,
    pub n_mean_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenedSubject {
    pub id: String,
    /// Number of residuals `q_i`.
    pub q: usize,
    pub df: usize,
    /// Residual variance `s²_i = Σ e² / df_i`.
    pub s2: f64,
    /// `Φ⁻¹(χ²_df(df s²_i / σ̂²))`.
    pub transformed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceScreenResult {
    pub subjects: Vec<ScreenedSubject>,
    /// Subjects left out for lack of residual degrees of freedom.
    pub excluded: usize,
    /// Pooled residual variance, weighted by degrees of freedom.
    pub sigma2_hat: f64,
    /// Anderson–Darling statistic of the standardised transformed values.
    pub a2: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// Per-subject least-squares residuals of `y = a + b t` over the measurements
/// taken before treatment (those with `z_{j-1} = 0`).
pub fn growth_model_residuals(dataset: &[SubjectData]) -> Vec<SubjectResiduals> {
    dataset
        .iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = (0..s.n_obs())
                .filter(|&j| !s.previous_treatment(j))
                .map(|j| (s.times[j], s.values[j]))
                .collect();
            let residuals = if pts.len() >= 2 {
                let n = pts.len() as f64;
                let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
                let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
                let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
                let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
                let b = sty / stt;
                pts.iter().map(|p| p.1 - ym - b * (p.0 - tm)).collect()
            } else {
                Vec::new()
            };
            SubjectResiduals {
                id: s.id.clone(),
                residuals,
                n_mean_params: 2,
            }
        })
        .collect()
}

/// Maps `x ~ χ²(df)` to a standard-normal quantile, using the upper tail
/// above the median so that neither tail loses precision.
fn chi2_to_normal(x: f64, df: usize) -> f64 {
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    let normal = Normal::standard();
    let lower = chi.cdf(x);
    if lower <= 0.5 {
        normal.inverse_cdf(lower)
    } else {
        -normal.inverse_cdf(chi.sf(x))
    }
}

pub fn variance_screen(residuals: &[SubjectResiduals], alpha: f64) -> Result<VarianceScreenResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let mut kept = Vec::new();
    let mut excluded = 0;
    for r in residuals {
        let q = r.residuals.len();
        if q < r.n_mean_params + 1 {
            excluded += 1;
            continue;
        }
        let df = q - r.n_mean_params;
        let ss: f64 = r.residuals.iter().map(|e| e * e).sum();
        kept.push((r.id.clone(), q, df, ss));
    }
    if excluded > 0 {
        log::info!(
            "variance screen: {excluded} subject(s) without residual degrees of freedom excluded"
        );
    }
    if kept.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance screen needs at least two eligible subjects, found {}",
            kept.len()
        )));
    }
    let total_ss: f64 = kept.iter().map(|k| k.3).sum();
    let total_df: usize = kept.iter().map(|k| k.2).sum();
    let sigma2_hat = total_ss / total_df as f64;
    if !(sigma2_hat > 0.0) {
        return Err(Error::Domain("pooled residual variance is zero".into()));
    }
    let subjects: Vec<ScreenedSubject> = kept
        .into_iter()
        .map(|(id, q, df, ss)| ScreenedSubject {
            id,
            q,
            df,
            s2: ss / df as f64,
            transformed: chi2_to_normal(ss / sigma2_hat, df),
        })
        .collect();
    let z: Vec<f64> = subjects.iter().map(|s| s.transformed).collect();
    let (a2, p_value) = anderson_darling_normality(&z);
    Ok(VarianceScreenResult {
        subjects,
        excluded,
        sigma2_hat,
        a2,
        p_value,
        alpha,
        reject: p_value < alpha,
    })
}

/// Growth-model residuals followed by [`variance_screen`].
pub fn variance_screen_dataset(
    dataset: &[SubjectData],
    alpha: f64,
) -> Result<VarianceScreenResult> {
    variance_screen(&growth_model_residuals(dataset), alpha)
}

/// Anderson–Darling `A²` of a sample against the fully specified `N(0, 1)`.
pub fn anderson_darling(sample: &[f64]) -> f64 {
    let n = sample.len();
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    // 1 - Φ(z) is taken as Φ(-z) so that the upper tail keeps its precision.
    let s: f64 = (0..n)
        .map(|i| {
            (2 * i + 1) as f64 * (std_normal_cdf(z[i]).ln() + std_normal_cdf(-z[n - 1 - i]).ln())
        })
        .sum();
    -nf - s / nf
}

/// Normality test with mean and variance estimated from the sample: returns
/// `A²` of the standardised sample and the p-value of Stephens' modified
/// statistic `A²(1 + 0.75/n + 2.25/n²)` (D'Agostino & Stephens' approximation).
pub fn anderson_darling_normality(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return (f64::INFINITY, 0.0);
    }
    let standardised: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    let a2 = anderson_darling(&standardised);
    (
        a2,
        anderson_darling_normality_pvalue(a2 * (1.0 + 0.75 / n + 2.25 / (n * n))),
    )
}

/// Upper-tail probability of the modified statistic of [`anderson_darling_normality`].
pub fn anderson_darling_normality_pvalue(aa: f64) -> f64 {
    // The last branch is a fitted quadratic that turns upwards past its vertex.
    let p = if !(aa < 150.0) {
        0.0
    } else if aa < 0.2 {
        1.0 - (-13.436 + 101.14 * aa - 223.73 * aa * aa).exp()
    } else if aa < 0.34 {
        1.0 - (-8.318 + 42.796 * aa - 59.938 * aa * aa).exp()
    } else if aa < 0.6 {
        (0.9177 - 4.279 * aa - 1.38 * aa * aa).exp()
    } else {
        (1.2937 - 5.709 * aa + 0.0186 * aa * aa).exp()
    };
    p.clamp(0.0, 1.0)
}

/// Upper-tail probability of `A²` against a fully specified distribution
/// (limiting law, Marsaglia & Marsaglia's approximation).
pub fn anderson_darling_pvalue(a2: f64) -> f64 {
    if !(a2 > 0.0) {
        return 1.0;
    }
    if a2.is_infinite() {
        return 0.0;
    }
    let z = a2;
    let cdf = if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105 - (0.0649821 - (0.0347962 - (0.0116720 - 0.00168691 * z) * z) * z) * z)
                    * z)
    } else {
        (-(1.0776
            - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z)
            .exp())
        .exp()
    };
    (1.0 - cdf).clamp(0.0, 1.0)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
