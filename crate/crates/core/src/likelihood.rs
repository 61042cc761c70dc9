//! Densities, survival functions and the penalized log-posterior.
//!
//! The censoring density and survival function are left out of every
//! expression: under independent censoring they are common to all subgroups
//! and do not depend on the parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp};
use crate::model::{Dataset, Hyperparams, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Floor for log survival values, close to the log of the smallest positive double.
pub const LOG_FLOOR: f64 = -745.0;

/// Standard normal log density.
#[inline]
pub fn log_std_normal_pdf(a: f64) -> f64 {
    -0.5 * a * a - 0.5 * LN_2PI
}

/// `1 / Mills ratio` for large arguments via the continued fraction
/// `a + 1/(a + 2/(a + 3/(a + ...)))`.
fn mills_denominator(a: f64) -> f64 {
    let mut t = a;
    for k in (1..=120).rev() {
        t = a + k as f64 / t;
    }
    t
}

/// `log(1 - Phi(a))`, accurate in both tails and never below [`LOG_FLOOR`].
pub fn log_std_normal_sf(a: f64) -> f64 {
    let v = if a < 8.0 {
        (0.5 * libm::erfc(a / std::f64::consts::SQRT_2)).ln()
    } else {
        log_std_normal_pdf(a) - mills_denominator(a).ln()
    };
    v.max(LOG_FLOOR)
}

/// Normal hazard `phi(a) / (1 - Phi(a))`.
pub fn std_normal_hazard(a: f64) -> f64 {
    if a < 8.0 {
        let sf = 0.5 * libm::erfc(a / std::f64::consts::SQRT_2);
        (log_std_normal_pdf(a)).exp() / sf
    } else {
        mills_denominator(a)
    }
}

/// Log density of `N(mu, Omega^{-1})` at `x`.
pub fn gaussian_logpdf(x: &DVector<f64>, mu: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::cholesky(omega).ok_or(Error::NotPositiveDefinite { k: 0 })?;
    let r = x - mu;
    let p = x.len() as f64;
    Ok(0.5 * linalg::log_det(&chol) - 0.5 * p * LN_2PI - 0.5 * linalg::quad_form(omega, &r))
}

/// Log of the outcome density (event) or survival (censored) for one subject
/// under one subgroup's AFT layer, with `beta0`, `beta` in the noise-scaled
/// parameterization.
pub fn aft_log_terms(
    t: f64,
    delta: u8,
    x: &DVector<f64>,
    beta0: f64,
    beta: &DVector<f64>,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::NonPositivePrecision { k: 0, value: tau });
    }
    Ok(aft_log_term_scaled(t, delta, beta0 + beta.dot(x), tau))
}

/// Same as [`aft_log_terms`] given the linear predictor `eta = beta0 + beta'x`.
#[inline]
pub(crate) fn aft_log_term_scaled(t: f64, delta: u8, eta: f64, tau: f64) -> f64 {
    let a = tau * t - eta;
    if delta == 1 {
        tau.ln() + log_std_normal_pdf(a)
    } else {
        log_std_normal_sf(a)
    }
}

/// Per-subject, per-subgroup log density pieces.
#[derive(Debug, Clone)]
pub struct LogDensityTerms {
    /// n x K predictor log densities.
    pub log_fx: DMatrix<f64>,
    /// n x K outcome log density (events) or log survival (censored).
    pub log_surv: DMatrix<f64>,
    /// n x K `log pi_k + log_fx + log_surv`.
    pub log_total: DMatrix<f64>,
}

impl LogDensityTerms {
    pub fn compute(d: &Dataset, params: &ModelParams) -> Result<Self> {
        let (n, p, k) = (d.n(), d.p(), params.k());
        let mut log_fx = DMatrix::zeros(n, k);
        let mut log_surv = DMatrix::zeros(n, k);
        let mut log_total = DMatrix::zeros(n, k);
        for kk in 0..k {
            let tau = params.tau[kk];
            if !(tau > 0.0) {
                return Err(Error::NonPositivePrecision { k: kk, value: tau });
            }
            let chol = linalg::cholesky(&params.omega[kk])
                .ok_or(Error::NotPositiveDefinite { k: kk })?;
            let half_logdet = 0.5 * linalg::log_det(&chol);
            let lt = chol.l().transpose();
            let mu = params.mu.row(kk).transpose();
            let beta = params.beta.row(kk).transpose();
            let log_pi = params.pi[kk].ln();
            for i in 0..n {
                let xi = d.x.row(i).transpose();
                let r = &xi - &mu;
                let quad = (&lt * r).norm_squared();
                let fx = half_logdet - 0.5 * p as f64 * LN_2PI - 0.5 * quad;
                let eta = params.beta0[kk] + beta.dot(&xi);
                let fs = aft_log_term_scaled(d.t[i], d.delta[i], eta, tau);
                log_fx[(i, kk)] = fx;
                log_surv[(i, kk)] = fs;
                log_total[(i, kk)] = log_pi + fx + fs;
            }
        }
        Ok(LogDensityTerms { log_fx, log_surv, log_total })
    }

    /// Observed-data mixture log-likelihood `sum_i log sum_k exp(log_total)`.
    pub fn log_likelihood(&self) -> f64 {
        let k = self.log_total.ncols();
        let mut buf = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..self.log_total.nrows() {
            for kk in 0..k {
                buf[kk] = self.log_total[(i, kk)];
            }
            total += log_sum_exp(&buf);
        }
        total
    }
}

/// Laplace density `exp(-|y| / v) / (2 v)` in log form.
#[inline]
pub fn log_laplace(y: f64, v: f64) -> f64 {
    -y.abs() / v - (2.0 * v).ln()
}

/// Log of the spike-and-slab marginal density
/// `p1 LP(y; v1) + (1 - p1) LP(y; v0)`.
pub fn log_spike_slab(y: f64, h: &Hyperparams) -> f64 {
    let a = h.p1.ln() + log_laplace(y, h.v1);
    let b = (1.0 - h.p1).ln() + log_laplace(y, h.v0);
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Slab membership probability of an off-diagonal entry with value `y`.
pub fn slab_probability(y: f64, h: &Hyperparams) -> f64 {
    let log_odds = (h.p1.ln() + log_laplace(y, h.v1)) - ((1.0 - h.p1).ln() + log_laplace(y, h.v0));
    1.0 / (1.0 + (-log_odds).exp())
}

/// `sum_{j<l} w_jl' L(w_jl) w_jl` with the Laplacian evaluated at the entries
/// themselves, i.e. `0.5 sum_{k != k'} (s_k - s_k')^2` with
/// `s = w / sqrt(w^2 + eps^2)`.
pub fn similarity_quadratic(omega: &[DMatrix<f64>], eps: f64) -> f64 {
    let k = omega.len();
    if k < 2 {
        return 0.0;
    }
    let p = omega[0].nrows();
    let mut s = vec![0.0; k];
    let mut total = 0.0;
    for l in 1..p {
        for j in 0..l {
            for (kk, o) in omega.iter().enumerate() {
                let w = o[(j, l)];
                s[kk] = w / (w * w + eps * eps).sqrt();
            }
            for a in 0..k {
                for b in (a + 1)..k {
                    total += (s[a] - s[b]).powi(2);
                }
            }
        }
    }
    total
}

/// Log prior density of the parameters, additive constants of the Exponential
/// and Laplace factors omitted.
pub fn log_prior(params: &ModelParams, h: &Hyperparams) -> f64 {
    let p = params.p();
    let mut total = 0.0;
    for o in &params.omega {
        total -= h.tau0 * o.diagonal().sum();
        for l in 1..p {
            for j in 0..l {
                total += log_spike_slab(o[(j, l)], h);
            }
        }
    }
    total -= h.lambda1 * params.beta.iter().map(|v| v.abs()).sum::<f64>();
    total -= h.lambda2 * params.mu.iter().map(|v| v.abs()).sum::<f64>();
    total -= 0.5 * h.u * similarity_quadratic(&params.omega, h.eps);
    total
}

/// Observed-data log-likelihood (memberships marginalized over `pi`).
pub fn log_likelihood(d: &Dataset, params: &ModelParams) -> Result<f64> {
    Ok(LogDensityTerms::compute(d, params)?.log_likelihood())
}

/// Penalized log-posterior with memberships and edge indicators marginalized.
pub fn penalized_log_posterior(d: &Dataset, params: &ModelParams, h: &Hyperparams) -> Result<f64> {
    Ok(log_likelihood(d, params)? + log_prior(params, h))
}
