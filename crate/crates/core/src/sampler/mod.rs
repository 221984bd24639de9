//! Gradient-based MCMC: NUTS with dual-averaging step size and windowed
//! diagonal-metric adaptation, run over independent chains.
//!
//! Chain `c` draws from `ChaCha20Rng::seed_from_u64(seed)` with stream `c`, so
//! its output depends only on the seed and its index.

pub mod adapt;
pub mod nuts;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DrawsMatrix;
use crate::error::{Error, Result};
use crate::inference::{initial_values, Constrained, JointPosterior, ParameterVector, PriorConfig};
use crate::model::SubjectData;

pub use adapt::{DualAveraging, WindowedAdaptation};
pub use nuts::{
    find_reasonable_step_size, leapfrog, nuts_transition, NutsParams, PhasePoint, TransitionInfo,
};

/// Differentiable log-density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log-density
    /// (`-∞` outside the support).
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Total iterations per chain, warmup included.
    pub iters: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Energy error above which a trajectory is flagged divergent.
    pub divergence_threshold: f64,
    pub seed: u64,
    /// Print a progress line to stderr every 100 iterations.
    pub progress: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            iters: 1000,
            warmup: 500,
            target_accept: 0.8,
            max_tree_depth: 10,
            divergence_threshold: 1000.0,
            seed: 0,
            progress: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if !(self.warmup > 0 && self.warmup < self.iters) {
            return Err(Error::Config(format!(
                "need 0 < warmup < iters, got warmup = {} and iters = {}",
                self.warmup, self.iters
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::Config("max_tree_depth must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config(
                "divergence_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.iters - self.warmup
    }
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Mutable state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub point: PhasePoint,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub rng: ChaCha20Rng,
    pub divergences: usize,
}

/// Per-chain sampling statistics for the retained iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub divergent: Vec<bool>,
    pub divergences: usize,
    pub warmup_divergences: usize,
}

impl ChainStats {
    pub fn mean_accept_stat(&self) -> f64 {
        self.accept_stat.iter().sum::<f64>() / self.accept_stat.len().max(1) as f64
    }
}

/// Retained unconstrained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

/// Runs warmup and sampling for one chain from `state`.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    mut state: ChainState,
    config: &SamplerConfig,
    chain: usize,
) -> ChainOutput {
    let dim = state.point.q.len();
    let mut params = NutsParams {
        step_size: state.step_size,
        max_tree_depth: config.max_tree_depth,
        max_delta_h: config.divergence_threshold,
    };
    params.step_size = find_reasonable_step_size(
        target,
        &state.point,
        &state.inv_mass,
        params.step_size,
        &mut state.rng,
    );
    let mut dual = DualAveraging::new(config.target_accept, params.step_size);
    let mut windows = WindowedAdaptation::new(dim, config.warmup);

    let n_draws = config.n_draws();
    let mut draws = Vec::with_capacity(n_draws);
    let mut accept_stat = Vec::with_capacity(n_draws);
    let mut tree_depth = Vec::with_capacity(n_draws);
    let mut n_leapfrog = Vec::with_capacity(n_draws);
    let mut divergent = Vec::with_capacity(n_draws);
    let mut warmup_divergences = 0;

    for it in 0..config.iters {
        let info = nuts_transition(
            target,
            &mut state.point,
            &state.inv_mass,
            &params,
            &mut state.rng,
        );
        if it < config.warmup {
            warmup_divergences += usize::from(info.divergent);
            params.step_size = dual.update(info.accept_stat);
            if windows.learn(&mut state.inv_mass, &state.point.q) {
                params.step_size = find_reasonable_step_size(
                    target,
                    &state.point,
                    &state.inv_mass,
                    params.step_size,
                    &mut state.rng,
                );
                dual.restart(params.step_size);
            }
            if it + 1 == config.warmup {
                params.step_size = dual.final_step();
            }
        } else {
            state.divergences += usize::from(info.divergent);
            draws.push(state.point.q.clone());
            accept_stat.push(info.accept_stat);
            tree_depth.push(info.tree_depth);
            n_leapfrog.push(info.n_leapfrog);
            divergent.push(info.divergent);
        }
        if config.progress && (it + 1) % 100 == 0 {
            let phase = if it < config.warmup {
                "warmup"
            } else {
                "sampling"
            };
            eprintln!(
                "chain {}: iteration {}/{} ({phase})",
                chain + 1,
                it + 1,
                config.iters
            );
        }
    }
    state.step_size = params.step_size;

    ChainOutput {
        draws,
        stats: ChainStats {
            step_size: state.step_size,
            inv_mass: state.inv_mass,
            accept_stat,
            tree_depth,
            n_leapfrog,
            divergent,
            divergences: state.divergences,
            warmup_divergences,
        },
    }
}

/// Number of starting points tried per chain before giving up.
pub const MAX_INIT_ATTEMPTS: usize = 100;

/// Runs `config.n_chains` chains in parallel. `init` proposes starting points;
/// it is called until the target is finite there, up to [`MAX_INIT_ATTEMPTS`] times.
pub fn sample<T, F>(target: &T, config: &SamplerConfig, init: F) -> Result<Vec<ChainOutput>>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha20Rng) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    let dim = target.dim();
    (0..config.n_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(config.seed, chain);
            let mut last_problem = String::from("no attempt made");
            for _ in 0..MAX_INIT_ATTEMPTS {
                let q = match init(&mut rng) {
                    Ok(q) => q,
                    Err(e) => {
                        last_problem = e.to_string();
                        continue;
                    }
                };
                if q.len() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "initial point has length {}, target dimension is {dim}",
                        q.len()
                    )));
                }
                let point = PhasePoint::new(target, q);
                if point.log_density.is_finite() && point.grad.iter().all(|g| g.is_finite()) {
                    let state = ChainState {
                        point,
                        step_size: 1.0,
                        inv_mass: vec![1.0; dim],
                        rng,
                        divergences: 0,
                    };
                    return Ok(run_chain(target, state, config, chain));
                }
                last_problem = format!("log density {} at the proposed point", point.log_density);
            }
            Err(Error::Initialization(format!(
                "chain {}: no finite starting point in {MAX_INIT_ATTEMPTS} attempts ({last_problem})",
                chain + 1
            )))
        })
        .collect()
}

/// Posterior draws of the joint model with their sampling statistics.
#[derive(Debug, Clone)]
pub struct Fit {
    pub draws: DrawsMatrix,
    pub chains: Vec<ChainStats>,
    pub n_events: usize,
    /// Prior with resolved Weibull bounds.
    pub prior: PriorConfig,
}

impl Fit {
    pub fn total_divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergences).sum()
    }
}

/// Fits the joint model. Draws are stored on the constrained scale with derived
/// columns (see [`Constrained::column_names`]).
pub fn run(dataset: &[SubjectData], prior: &PriorConfig, config: &SamplerConfig) -> Result<Fit> {
    config.validate()?;
    let posterior = JointPosterior::new(dataset, prior)?;
    if posterior.n_events() == 0 {
        log::warn!(
            "dataset has no events; the Weibull parameters are determined by the prior alone"
        );
    }
    let resolved = *posterior.prior();
    let coords = posterior.weibull_coordinates();
    let outputs = sample(&posterior, config, |rng| {
        initial_values(dataset, &resolved, 0.1, rng).map(ParameterVector::into_vec)
    })?;

    let n = dataset.len();
    let ids: Vec<String> = dataset.iter().map(|s| s.id.clone()).collect();
    let names = Constrained::column_names(&ids);
    let n_draws = config.n_draws();
    let mut values = Vec::with_capacity(config.n_chains * n_draws * names.len());
    for out in &outputs {
        for x in &out.draws {
            let p = ParameterVector::new(x.clone(), n)?.with_weibull_bounds(coords)?;
            values.extend(p.constrain().to_row());
        }
    }
    let draws = DrawsMatrix::new(names, config.n_chains, n_draws, values)?;
    Ok(Fit {
        draws,
        chains: outputs.into_iter().map(|o| o.stats).collect(),
        n_events: posterior.n_events(),
        prior: resolved,
    })
}
