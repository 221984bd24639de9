//! Convergence diagnostics, posterior summaries, posterior predictive replicates,
//! the residual-variance screen and derived clinical quantities.

mod clinical;
mod ppc;
mod screen;

use std::collections::HashSet;

use crate::error::{Error, Result};

pub use clinical::benefit_fraction;
pub use ppc::posterior_predictive;
pub use screen::{
    anderson_darling, anderson_darling_normality, anderson_darling_normality_pvalue,
    anderson_darling_pvalue, growth_model_residuals, ks_statistic, variance_screen,
    variance_screen_dataset, ScreenedSubject, SubjectResiduals, VarianceScreenResult,
};

/// Draws laid out as `chains × iters × params`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsMatrix {
    names: Vec<String>,
    chains: usize,
    iters: usize,
    values: Vec<f64>,
}

impl DrawsMatrix {
    pub fn new(names: Vec<String>, chains: usize, iters: usize, values: Vec<f64>) -> Result<Self> {
        let expected = chains * iters * names.len();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} values supplied for {chains} chains × {iters} iterations × {} parameters",
                values.len(),
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter name {n:?}"
                )));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let p = pos % names.len();
            return Err(Error::InvalidArgument(format!(
                "non-finite draw {} for parameter {}",
                values[pos], names[p]
            )));
        }
        Ok(Self {
            names,
            chains,
            iters,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.chains
    }

    pub fn n_iters(&self) -> usize {
        self.iters
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, chain: usize, iter: usize) -> &[f64] {
        let p = self.names.len();
        let o = (chain * self.iters + iter) * p;
        &self.values[o..o + p]
    }

    pub fn get(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.row(chain, iter)[param]
    }

    /// Draws of one parameter, one vector per chain.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iters).map(|i| self.get(c, i, param)).collect())
            .collect()
    }

    pub fn chains_by_name(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        self.index_of(name).map(|p| self.chains_of(p))
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-R̂: every chain is cut into two halves (the middle draw of an odd-length
/// chain is dropped) and the halves are compared as separate chains.
/// Returns `NaN` (with a warning) when the within-chain variance is zero.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument(
            "split-R̂ needs at least one chain".into(),
        ));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "chains have different lengths".into(),
        ));
    }
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "split-R̂ needs at least 4 iterations, got {n}"
        )));
    }
    let half = n / 2;
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect();
    let nh = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = pieces.iter().map(|p| sample_variance(p)).sum::<f64>() / pieces.len() as f64;
    if !(w > 0.0) {
        log::warn!("split-R̂ undefined: zero within-chain variance");
        return Ok(f64::NAN);
    }
    let b = nh * sample_variance(&means);
    let var_plus = (nh - 1.0) / nh * w + b / nh;
    Ok((var_plus / w).sqrt())
}

/// Quantile by linear interpolation between order statistics of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Monte Carlo standard error of the mean by non-overlapping batch means of
/// size `⌊√n⌋` within each chain.
pub fn mcse_batch_means(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let b = (n as f64).sqrt().floor() as usize;
    let batch_means: Vec<f64> = if b >= 1 {
        chains
            .iter()
            .flat_map(|c| c[..(n / b) * b].chunks(b).map(mean))
            .collect()
    } else {
        Vec::new()
    };
    if batch_means.len() < 2 {
        let all: Vec<f64> = chains.iter().flatten().copied().collect();
        return if all.len() < 2 {
            f64::NAN
        } else {
            (sample_variance(&all) / all.len() as f64).sqrt()
        };
    }
    (sample_variance(&batch_means) / batch_means.len() as f64).sqrt()
}

/// One row of a posterior summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub mcse: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub rhat: f64,
}

pub fn summarize_chains(name: &str, chains: &[Vec<f64>]) -> SummaryRow {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let m = if all.is_empty() { f64::NAN } else { mean(&all) };
    let sd = if all.len() > 1 {
        sample_variance(&all).max(0.0).sqrt()
    } else {
        f64::NAN
    };
    all.sort_by(f64::total_cmp);
    let rhat = split_rhat(chains).unwrap_or(f64::NAN);
    SummaryRow {
        name: name.to_string(),
        mean: m,
        sd,
        mcse: mcse_batch_means(chains),
        q2_5: quantile_sorted(&all, 0.025),
        q97_5: quantile_sorted(&all, 0.975),
        rhat,
    }
}

/// Mean, SD, MCSE, 2.5%/97.5% quantiles and split-R̂ of every column.
pub fn summarize(draws: &DrawsMatrix) -> Vec<SummaryRow> {
    (0..draws.n_params())
        .map(|p| summarize_chains(&draws.names()[p], &draws.chains_of(p)))
        .collect()
}
