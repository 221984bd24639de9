//! Posterior predictive replicates of the longitudinal measurements.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inference::params::EFFECT_LABELS;
use crate::model::{conditional_mean, conditional_variance, RandomEffects, SubjectData, N_EFFECTS};

use super::DrawsMatrix;

/// `n_rep` replicates of every observed measurement, flattened subject by
/// subject and occasion by occasion. Each replicate picks one posterior draw
/// uniformly and regenerates `y` at the observed times and treatment history
/// with that draw's random effects, `σ0` and `ν`.
pub fn posterior_predictive<R: Rng + ?Sized>(
    draws: &DrawsMatrix,
    dataset: &[SubjectData],
    n_rep: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if draws.n_chains() * draws.n_iters() == 0 {
        return Err(Error::InvalidArgument(
            "posterior predictive needs at least one draw".into(),
        ));
    }
    let column = |name: &str| {
        draws
            .index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("draws have no column {name:?}")))
    };
    let sigma0 = column("sigma0")?;
    let nu = column("nu")?;
    let effect_cols: Vec<[usize; N_EFFECTS]> = dataset
        .iter()
        .map(|s| {
            let mut cols = [0; N_EFFECTS];
            for (c, label) in cols.iter_mut().zip(EFFECT_LABELS) {
                *c = column(&format!("r_{}_{label}", s.id))?;
            }
            Ok(cols)
        })
        .collect::<Result<_>>()?;

    let n_obs: usize = dataset.iter().map(SubjectData::n_obs).sum();
    let mut out = Vec::with_capacity(n_rep);
    for _ in 0..n_rep {
        let chain = rng.random_range(0..draws.n_chains());
        let iter = rng.random_range(0..draws.n_iters());
        let row = draws.row(chain, iter);
        let mut rep = Vec::with_capacity(n_obs);
        for (s, cols) in dataset.iter().zip(&effect_cols) {
            let r = RandomEffects::from_array(cols.map(|c| row[c]));
            let start = s.treatment_start();
            for j in 0..s.n_obs() {
                let z_prev = s.previous_treatment(j);
                let mu = conditional_mean(&r, s.times[j], z_prev, start)?;
                let var = conditional_variance(row[sigma0], row[nu], r.c, z_prev)?;
                let e: f64 = rng.sample(StandardNormal);
                rep.push(mu + var.sqrt() * e);
            }
        }
        out.push(rep);
    }
    Ok(out)
}
