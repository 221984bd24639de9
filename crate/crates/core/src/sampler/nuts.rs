//! Leapfrog integration and the multinomial No-U-Turn transition with the
//! generalised U-turn criterion (checked across every pair of merged subtrees).

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Position, momentum, gradient and log-density at one phase-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    /// Evaluates the target at `q`; momentum starts at zero.
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let log_density = target.log_density_and_gradient(&q, &mut grad);
        let p = vec![0.0; q.len()];
        Self {
            q,
            p,
            grad,
            log_density,
        }
    }

    pub fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    /// `H = -log π(q) + ½ pᵀ M⁻¹ p`; non-finite values map to `+∞`.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = -self.log_density + self.kinetic(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_mass: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
    }

    pub fn resample_momentum<R: Rng + ?Sized>(&mut self, inv_mass: &[f64], rng: &mut R) {
        for (p, m) in self.p.iter_mut().zip(inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }
}

/// One leapfrog step of size `step` (negative steps integrate backwards).
/// Returns `false` when the new log-density or gradient is not finite.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &mut PhasePoint,
    step: f64,
    inv_mass: &[f64],
) -> bool {
    let half = 0.5 * step;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_mass) {
        *q += step * m * p;
    }
    z.log_density = target.log_density_and_gradient(&z.q, &mut z.grad);
    let finite = z.log_density.is_finite() && z.grad.iter().all(|g| g.is_finite());
    if finite {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }
    finite
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Boundary momenta of a (sub)trajectory and the sum of its momenta.
struct Edges {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
    rho: Vec<f64>,
}

impl Edges {
    fn zeros(n: usize) -> Self {
        Self {
            p_beg: vec![0.0; n],
            p_sharp_beg: vec![0.0; n],
            p_end: vec![0.0; n],
            p_sharp_end: vec![0.0; n],
            rho: vec![0.0; n],
        }
    }
}

struct Tree<'a, T: ?Sized, R: ?Sized> {
    target: &'a T,
    rng: &'a mut R,
    inv_mass: &'a [f64],
    step: f64,
    h0: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized, R: Rng + ?Sized> Tree<'_, T, R> {
    /// Extends the trajectory from `z` by `2^depth` steps in direction `sign`.
    /// Returns whether the new subtree is valid (no divergence, no U-turn).
    fn build(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        edges: &mut Edges,
        log_sum_weight: &mut f64,
        sign: f64,
    ) -> bool {
        if depth == 0 {
            let ok = leapfrog(self.target, z, sign * self.step, self.inv_mass);
            self.n_leapfrog += 1;
            let h = if ok {
                z.hamiltonian(self.inv_mass)
            } else {
                f64::INFINITY
            };
            if h - self.h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            z_propose.clone_from(z);
            let p_sharp = z.velocity(self.inv_mass);
            for (r, p) in edges.rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            edges.p_sharp_beg.clone_from(&p_sharp);
            edges.p_sharp_end = p_sharp;
            edges.p_beg.clone_from(&z.p);
            edges.p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let n = z.q.len();
        // Initial subtree.
        let mut init = Edges::zeros(n);
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build(depth - 1, z, z_propose, &mut init, &mut lsw_init, sign) {
            return false;
        }
        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut fin = Edges::zeros(n);
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut fin,
            &mut lsw_final,
            sign,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if self.rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&init.rho, &fin.rho);
        for (r, s) in edges.rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);

        edges.p_beg = init.p_beg;
        edges.p_sharp_beg = init.p_sharp_beg;
        edges.p_end = fin.p_end;
        edges.p_sharp_end = fin.p_sharp_end;
        persist
    }
}

/// Settings of a single transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsParams {
    pub step_size: f64,
    pub max_tree_depth: usize,
    pub max_delta_h: f64,
}

/// One NUTS transition from `current` (whose momentum is resampled).
pub fn nuts_transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &mut PhasePoint,
    inv_mass: &[f64],
    params: &NutsParams,
    rng: &mut R,
) -> TransitionInfo {
    current.resample_momentum(inv_mass, rng);
    let n = current.q.len();
    let h0 = current.hamiltonian(inv_mass);

    let mut z_fwd = current.clone();
    let mut z_bck = current.clone();
    let mut z_sample = current.clone();
    let mut z_propose = current.clone();

    let p_sharp = current.velocity(inv_mass);
    let mut p_fwd_fwd = current.p.clone();
    let mut p_sharp_fwd_fwd = p_sharp.clone();
    let mut p_fwd_bck = current.p.clone();
    let mut p_sharp_fwd_bck = p_sharp.clone();
    let mut p_bck_fwd = current.p.clone();
    let mut p_sharp_bck_fwd = p_sharp.clone();
    let mut p_bck_bck = current.p.clone();
    let mut p_sharp_bck_bck = p_sharp;
    let mut rho = current.p.clone();
    let mut log_sum_weight = 0.0;

    let mut tree = Tree {
        target,
        rng,
        inv_mass,
        step: params.step_size,
        h0,
        max_delta_h: params.max_delta_h,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut depth = 0;
    while depth < params.max_tree_depth {
        let mut edges = Edges::zeros(n);
        let mut lsw_subtree = f64::NEG_INFINITY;
        let (valid, rho_fwd, rho_bck);
        if tree.rng.random::<f64>() > 0.5 {
            // The existing trajectory becomes the backward part.
            rho_bck = rho.clone();
            p_bck_fwd.clone_from(&p_fwd_fwd);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_fwd);
            valid = tree.build(
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut edges,
                &mut lsw_subtree,
                1.0,
            );
            p_fwd_bck = edges.p_beg;
            p_sharp_fwd_bck = edges.p_sharp_beg;
            p_fwd_fwd = edges.p_end;
            p_sharp_fwd_fwd = edges.p_sharp_end;
            rho_fwd = edges.rho;
        } else {
            rho_fwd = rho.clone();
            p_fwd_bck.clone_from(&p_bck_bck);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_bck);
            valid = tree.build(
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut edges,
                &mut lsw_subtree,
                -1.0,
            );
            p_bck_fwd = edges.p_beg;
            p_sharp_bck_fwd = edges.p_sharp_beg;
            p_bck_bck = edges.p_end;
            p_sharp_bck_bck = edges.p_sharp_end;
            rho_bck = edges.rho;
        }
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if tree.rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let rho_ext = add(&rho_bck, &p_fwd_bck);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
        let rho_ext = add(&rho_fwd, &p_bck_fwd);
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }

    let info = TransitionInfo {
        accept_stat: if tree.n_leapfrog > 0 {
            tree.sum_metro_prob / tree.n_leapfrog as f64
        } else {
            0.0
        },
        tree_depth: depth,
        n_leapfrog: tree.n_leapfrog,
        divergent: tree.divergent,
        energy: z_sample.hamiltonian(inv_mass),
    };
    *current = z_sample;
    info
}

/// Doubles or halves `step` until the acceptance probability of a single
/// leapfrog step crosses 0.8.
pub fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &PhasePoint,
    inv_mass: &[f64],
    mut step: f64,
    rng: &mut R,
) -> f64 {
    let threshold = 0.8f64.ln();
    let trial = |step: f64, rng: &mut R| {
        let mut z = start.clone();
        z.resample_momentum(inv_mass, rng);
        let h0 = z.hamiltonian(inv_mass);
        let h = if leapfrog(target, &mut z, step, inv_mass) {
            z.hamiltonian(inv_mass)
        } else {
            f64::INFINITY
        };
        h0 - h
    };
    let direction = if trial(step, rng) > threshold { 1 } else { -1 };
    loop {
        let delta = trial(step, rng);
        if direction == 1 && !(delta > threshold) {
            break;
        }
        if direction == -1 && !(delta < threshold) {
            break;
        }
        step = if direction == 1 {
            2.0 * step
        } else {
            0.5 * step
        };
        if !(1e-12..=1e7).contains(&step) {
            log::warn!("step-size search stopped at {step}");
            break;
        }
    }
    step
}
