//! Exact argmin solvers over the probability simplex for FTRL objectives.
//!
//! Three regularizers are supported, matching the policies built on top:
//!
//! - `solve_tsallis`: F(p) = -(2/eta) * sum_i sqrt(p_i). The optimum has the
//!   closed form p_i = (eta * L_i + lambda)^-2 with lambda solving
//!   sum_i (eta * L_i + lambda)^-2 = 1; we bisect that scalar equation.
//! - `solve_hybrid`: F(p) = sum_i (-2 sqrt(p_i)/eta + p_i ln(p_i)/zeta).
//!   No closed form; we solve the KKT system with a safeguarded Newton
//!   iteration nested inside a bracketed search on the multiplier.
//! - `exp_weights`: the negative-entropy argmin, i.e. the softmax
//!   p_i proportional to exp(-eta * L_i).
//!
//! All returned distributions are strictly positive and renormalized so the
//! simplex invariant holds at machine precision.

use crate::error::{Error, Result};

/// Cumulative estimated losses; all entries finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    values: Vec<f64>,
}

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::parameter("loss vector must be non-empty"));
        }
        if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::parameter(
                "loss vector entries must be finite and nonnegative",
            ));
        }
        Ok(LossVector { values })
    }

    pub fn zeros(k: usize) -> Self {
        LossVector {
            values: vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A point on the (K-1)-simplex with strictly positive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

/// Tolerance on |sum(p) - 1| accepted by [`ActionDistribution::new`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::parameter("distribution must be non-empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::parameter(
                "distribution entries must be finite and strictly positive",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::parameter(format!(
                "distribution sums to {sum}, outside tolerance {SIMPLEX_SUM_TOL}"
            )));
        }
        Ok(ActionDistribution { probs })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one arm");
        ActionDistribution {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF sampling: maps a uniform draw `u01` in [0,1) to an arm.
    pub fn sample_with(&self, u01: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u01 < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Learning rate for the Tsallis regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsallisConfig {
    pub eta: f64,
}

impl TsallisConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::parameter("tsallis eta must be finite and positive"));
        }
        Ok(TsallisConfig { eta })
    }
}

/// Learning rates for the hybrid (Tsallis + negative entropy) regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    pub eta: f64,
    pub zeta: f64,
}

impl HybridConfig {
    pub fn new(eta: f64, zeta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0 && zeta.is_finite() && zeta > 0.0) {
            return Err(Error::parameter(
                "hybrid eta and zeta must be finite and positive",
            ));
        }
        Ok(HybridConfig { eta, zeta })
    }
}

/// Output of [`solve_tsallis`]: the argmin and the simplex multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct TsallisSolution {
    pub dist: ActionDistribution,
    pub lambda: f64,
}

const MAX_BISECT_ITERS: usize = 200;
/// Residual tolerance on the fixed-point sum before renormalization.
const SUM_RESIDUAL_TOL: f64 = 1e-12;

/// Minimizes <p, L> + F(p) over the simplex for the Tsallis regularizer
/// F(p) = -(2/eta) sum_i sqrt(p_i).
///
/// The optimum satisfies p_i = (eta * L_i + lambda)^-2 where lambda is the
/// unique root of S(lambda) = sum_i (eta * L_i + lambda)^-2 = 1 on the
/// bracket (-eta*min(L), -eta*min(L) + sqrt(K)]. S is strictly decreasing
/// there and S at the upper end is provably <= 1, so bisection cannot fail.
pub fn solve_tsallis(losses: &LossVector, cfg: &TsallisConfig) -> Result<TsallisSolution> {
    let eta = cfg.eta;
    let k = losses.len();
    let min_loss = losses
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    // Work in the shifted variable mu = lambda + eta*min(L); the per-arm
    // offsets eta*(L_i - min L) are nonnegative, which avoids cancellation
    // when lambda sits close to -eta*min(L).
    let shifted: Vec<f64> = losses
        .values()
        .iter()
        .map(|l| eta * (l - min_loss))
        .collect();
    let sum_at = |mu: f64| -> f64 {
        shifted
            .iter()
            .map(|s| {
                let b = s + mu;
                1.0 / (b * b)
            })
            .sum()
    };

    let hi = (k as f64).sqrt();
    // Endpoint check: for constant loss vectors S(hi) = 1 up to a couple of
    // ulps, and returning hi directly keeps lambda = sqrt(K) - eta*c exact.
    if (sum_at(hi) - 1.0).abs() <= SUM_RESIDUAL_TOL {
        return finish_tsallis(&shifted, hi, eta, min_loss);
    }

    let mut lo = 1e-18;
    while !sum_at(lo).is_finite() {
        lo *= 10.0;
        if lo >= hi {
            return Err(Error::Numerical(
                "tsallis bracket collapsed while searching for a finite lower end".into(),
            ));
        }
    }

    let mut hi = hi;
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECT_ITERS {
        mu = 0.5 * (lo + hi);
        let s = sum_at(mu);
        if s > 1.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        // |S'| <= 2 near the root, so this width bounds |S - 1| well below
        // the residual tolerance.
        if hi - lo <= 1e-14 * hi.max(1.0) {
            mu = 0.5 * (lo + hi);
            break;
        }
    }

    let residual = (sum_at(mu) - 1.0).abs();
    if residual > SUM_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "tsallis fixed point residual {residual} after {MAX_BISECT_ITERS} iterations"
        )));
    }
    finish_tsallis(&shifted, mu, eta, min_loss)
}

fn finish_tsallis(shifted: &[f64], mu: f64, eta: f64, min_loss: f64) -> Result<TsallisSolution> {
    let mut probs: Vec<f64> = shifted
        .iter()
        .map(|s| {
            let b = s + mu;
            1.0 / (b * b)
        })
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(TsallisSolution {
        dist: ActionDistribution::new(probs)?,
        lambda: mu - eta * min_loss,
    })
}

/// Minimizes <p, L> + F(p) over the simplex for the hybrid regularizer
/// F(p) = sum_i (-2 sqrt(p_i)/eta + p_i ln(p_i)/zeta).
///
/// KKT: g(p_i) = -L_i - lambda with g(x) = -1/(eta sqrt(x)) + (ln x + 1)/zeta,
/// a strictly increasing map, plus sum_i p_i = 1. We run a bracketed Newton
/// search on lambda; each evaluation inverts g per coordinate in log space
/// (u = ln x), again Newton safeguarded by a bracket. Coordinates are capped
/// at x = 1, which leaves the bracketing argument intact.
pub fn solve_hybrid(losses: &LossVector, cfg: &HybridConfig) -> Result<ActionDistribution> {
    let eta = cfg.eta;
    let zeta = cfg.zeta;
    let k = losses.len();
    if k == 1 {
        return ActionDistribution::new(vec![1.0]);
    }

    // G(u) = g(e^u); concave, strictly increasing, defined on all of R.
    let g_log = |u: f64| -> f64 { -(-0.5 * u).exp() / eta + (u + 1.0) / zeta };
    let g_log_deriv = |u: f64| -> f64 { (-0.5 * u).exp() / (2.0 * eta) + 1.0 / zeta };

    // Inverts g in log space: returns u <= 0 with g(e^u) = y (or u = 0 when
    // the cap binds). `u_init` is a warm start from the previous outer step.
    let invert = |y: f64, u_init: f64| -> f64 {
        let mut hi = 0.0_f64;
        if g_log(hi) <= y {
            return 0.0;
        }
        let mut lo = u_init.min(-1.0);
        while g_log(lo) > y {
            lo *= 2.0;
            if lo < -1e4 {
                // e^u underflows to 0 long before this; the bracket is
                // certain to contain the root by now.
                break;
            }
        }
        let mut u = u_init.clamp(lo, hi);
        for _ in 0..100 {
            let r = g_log(u) - y;
            if r.abs() <= 1e-15 * y.abs().max(1.0) {
                break;
            }
            if r > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let step = r / g_log_deriv(u);
            let mut next = u - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-16 * u.abs().max(1e-12) {
                u = next;
                break;
            }
            u = next;
        }
        u
    };

    let min_loss = losses
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // lambda_lo forces the best arm to the cap (sum >= 1); lambda_hi forces
    // every arm to at most 1/K (sum <= 1).
    let g_at_one = -1.0 / eta + 1.0 / zeta;
    let g_at_unif = -(k as f64).sqrt() / eta + (1.0 - (k as f64).ln()) / zeta;
    let mut lam_lo = -min_loss - g_at_one;
    let mut lam_hi = -min_loss - g_at_unif;

    let mut u = vec![-((k as f64).ln()); k];
    let mut lambda = 0.5 * (lam_lo + lam_hi);
    let mut converged = false;
    for _ in 0..MAX_BISECT_ITERS {
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for (i, l) in losses.values().iter().enumerate() {
            u[i] = invert(-l - lambda, u[i]);
            let x = u[i].exp();
            sum += x;
            if u[i] < 0.0 {
                // dx/dlambda = -x / G'(u); capped coordinates contribute 0.
                dsum -= x / g_log_deriv(u[i]);
            }
        }
        let phi = sum - 1.0;
        if phi.abs() <= SUM_RESIDUAL_TOL {
            converged = true;
            break;
        }
        if phi > 0.0 {
            lam_lo = lambda;
        } else {
            lam_hi = lambda;
        }
        if lam_hi - lam_lo <= 1e-15 * lambda.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut next = if dsum < 0.0 {
            lambda - phi / dsum
        } else {
            lambda
        };
        if !(next > lam_lo && next < lam_hi) {
            next = 0.5 * (lam_lo + lam_hi);
        }
        lambda = next;
    }
    if !converged {
        let sum: f64 = u.iter().map(|ui| ui.exp()).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!(
                "hybrid solver stalled at sum {sum}"
            )));
        }
    }

    let mut probs: Vec<f64> = u.iter().map(|ui| ui.exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    ActionDistribution::new(probs)
}

/// Exponential-weights distribution p_i proportional to exp(-eta * L_i),
/// computed with max-subtraction so large losses cannot underflow everything
/// to zero. Backs the Exp3-Coop and center-based Exp3 baselines.
pub fn exp_weights(losses: &LossVector, eta: f64) -> Result<ActionDistribution> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::parameter(
            "exp_weights eta must be finite and positive",
        ));
    }
    let min_loss = losses
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let mut probs: Vec<f64> = losses
        .values()
        .iter()
        .map(|l| (-eta * (l - min_loss)).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    // Extremely large eta*L gaps underflow individual weights to zero; nudge
    // them to the smallest positive weight consistent with the invariant.
    if probs.iter().any(|p| *p <= 0.0) {
        let floor = f64::MIN_POSITIVE;
        for p in &mut probs {
            if *p <= 0.0 {
                *p = floor;
            }
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
    }
    ActionDistribution::new(probs)
}
