//! Unconstrained parametrisation of a 5×5 correlation matrix through its
//! Cholesky factor.
//!
//! Each of the 10 free reals is squashed by `tanh` into a canonical partial
//! correlation `z_ij ∈ (-1, 1)`; row `i` of `L` is then built as
//! `L_i0 = z_i0`, `L_ij = z_ij sqrt(1 - Σ_{k<j} L_ik²)`, `L_ii = sqrt(1 - Σ_{k<i} L_ik²)`.
//! The free reals are ordered row-major over the strict lower triangle:
//! `(1,0), (2,0), (2,1), (3,0), ...`.
//!
//! The log-Jacobian returned is for the map from the free reals to the
//! off-diagonal entries of `Ω = L Lᵀ`, so a density written over `Ω` becomes a
//! proper density over the free reals.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::model::{Mat5, N_EFFECTS};

pub const N_CORR: usize = N_EFFECTS * (N_EFFECTS - 1) / 2;

/// Scalar operations needed by the transform; implemented for `f64` and [`Dual`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn ln(self) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Forward-mode dual number carrying one directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn variable(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl Real for Dual {
    fn constant(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self {
            v: s,
            d: self.d / (2.0 * s),
        }
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Self {
            v: t,
            d: self.d * (1.0 - t * t),
        }
    }
    fn ln(self) -> Self {
        Self {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }
}

/// Cholesky factor of the correlation matrix, the log-Jacobian of the map onto
/// `Ω`, and `log det Ω`.
pub struct CorrTransform<R> {
    pub chol: [[R; N_EFFECTS]; N_EFFECTS],
    pub log_jacobian: R,
    pub log_det: R,
}

pub fn corr_cholesky<R: Real>(free: &[R]) -> CorrTransform<R> {
    assert_eq!(
        free.len(),
        N_CORR,
        "expected {N_CORR} free correlation parameters"
    );
    let zero = R::constant(0.0);
    let one = R::constant(1.0);
    let mut chol = [[zero; N_EFFECTS]; N_EFFECTS];
    chol[0][0] = one;
    let mut log_jacobian = zero;
    let mut log_det = zero;
    let mut idx = 0;
    for i in 1..N_EFFECTS {
        let mut sum_sq = zero;
        for j in 0..i {
            let z = free[idx].tanh();
            idx += 1;
            log_jacobian = log_jacobian + (one - z * z).ln();
            let entry = if j == 0 {
                z
            } else {
                let remaining = one - sum_sq;
                log_jacobian = log_jacobian + R::constant(0.5) * remaining.ln();
                z * remaining.sqrt()
            };
            chol[i][j] = entry;
            sum_sq = sum_sq + entry * entry;
        }
        let diag_sq = one - sum_sq;
        chol[i][i] = diag_sq.sqrt();
        let log_diag = R::constant(0.5) * diag_sq.ln();
        // L -> Ω Jacobian contributes (K - 1 - i) log L_ii.
        log_jacobian = log_jacobian + R::constant((N_EFFECTS - 1 - i) as f64) * log_diag;
        log_det = log_det + R::constant(2.0) * log_diag;
    }
    CorrTransform {
        chol,
        log_jacobian,
        log_det,
    }
}

/// Inverse of [`corr_cholesky`] for a valid correlation Cholesky factor.
pub fn corr_free_from_cholesky(chol: &Mat5) -> [f64; N_CORR] {
    let mut free = [0.0; N_CORR];
    let mut idx = 0;
    for (i, row) in chol.iter().enumerate().skip(1) {
        let mut sum_sq = 0.0;
        for &entry in &row[..i] {
            let z = entry / (1.0 - sum_sq).sqrt();
            free[idx] = z.clamp(-1.0, 1.0).atanh();
            idx += 1;
            sum_sq += entry * entry;
        }
    }
    free
}

pub fn corr_cholesky_f64(free: &[f64]) -> Mat5 {
    corr_cholesky::<f64>(free).chol
}

/// Value and gradient with respect to the free reals of
/// `Σ_{pq} weight_pq L_pq + jac_coef · log|J| + det_coef · log det Ω`.
///
/// The weights carry the downstream sensitivity of the likelihood to `L`;
/// the two coefficients select the Jacobian and LKJ terms of the prior.
pub fn corr_weighted_grad(
    free: &[f64],
    weight: &Mat5,
    jac_coef: f64,
    det_coef: f64,
) -> (f64, [f64; N_CORR]) {
    let mut grad = [0.0; N_CORR];
    let mut value = 0.0;
    let mut duals = [Dual::constant(0.0); N_CORR];
    for (d, &v) in duals.iter_mut().zip(free) {
        *d = Dual::constant(v);
    }
    for n in 0..N_CORR {
        duals[n].d = 1.0;
        let t = corr_cholesky(&duals);
        let mut acc =
            t.log_jacobian * Dual::constant(jac_coef) + t.log_det * Dual::constant(det_coef);
        for p in 0..N_EFFECTS {
            for q in 0..=p {
                if weight[p][q] != 0.0 {
                    acc = acc + t.chol[p][q] * Dual::constant(weight[p][q]);
                }
            }
        }
        grad[n] = acc.d;
        value = acc.v;
        duals[n].d = 0.0;
    }
    (value, grad)
}
