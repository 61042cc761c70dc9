//! Noise-scaled penalized regression update for one subgroup's AFT layer.
//!
//! With `eta_i = beta0 + beta'x_i` the subgroup maximizes
//! `sum_i rho_i [log tau - 0.5 E(tau z_i - eta_i)^2] - lambda1 |beta|_1`
//! where the expectation uses the imputed first and second moments of the
//! latent log survival time. For fixed `tau` this is a weighted lasso with
//! response `tau * zhat`; for fixed `(beta0, beta)` the optimal `tau` is the
//! positive root of a quadratic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::soft_threshold;
use crate::model::{Dataset, Responsibilities};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionUpdate {
    pub beta0: f64,
    pub beta: DVector<f64>,
    pub tau: f64,
    pub sweeps: usize,
}

const OUTER_TOL: f64 = 1e-8;
const CD_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 1000;
const MAX_CD_SWEEPS: usize = 10_000;

/// Penalized weighted objective of subgroup `k` (additive constants dropped).
pub fn regression_objective(
    d: &Dataset,
    r: &Responsibilities,
    k: usize,
    beta0: f64,
    beta: &DVector<f64>,
    tau: f64,
    lambda1: f64,
) -> f64 {
    let mut total = 0.0;
    for i in 0..d.n() {
        let w = r.rho[(i, k)];
        if w == 0.0 {
            continue;
        }
        let eta = beta0 + d.x.row(i).transpose().dot(beta);
        let sq = tau * tau * r.z2hat[(i, k)] - 2.0 * tau * eta * r.zhat[(i, k)] + eta * eta;
        total += w * (tau.ln() - 0.5 * sq);
    }
    total - lambda1 * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Covariance-form lasso: minimizes `0.5 b'Gb - c'b + lambda |b|_1` in place,
/// with `gb` kept equal to `G b`. Returns the number of sweeps.
pub(crate) fn lasso_cd(g: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, b: &mut DVector<f64>, gb: &mut DVector<f64>) -> usize {
    let p = b.len();
    let mut sweeps = 0;
    let mut full = true;
    loop {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..p {
            if !full && b[j] == 0.0 {
                continue;
            }
            let gjj = g[(j, j)];
            if gjj <= 0.0 {
                if b[j] != 0.0 {
                    let old = b[j];
                    b[j] = 0.0;
                    gb.axpy(-old, &g.column(j), 1.0);
                }
                continue;
            }
            let partial = c[j] - (gb[j] - gjj * b[j]);
            let new = soft_threshold(partial, lambda) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                gb.axpy(delta, &g.column(j), 1.0);
                b[j] = new;
                max_change = max_change.max(delta.abs());
            }
            scale = scale.max(new.abs());
        }
        let settled = max_change <= CD_TOL * scale;
        if sweeps >= MAX_CD_SWEEPS {
            break;
        }
        if settled {
            if full {
                break;
            }
            full = true;
        } else {
            full = false;
        }
    }
    sweeps
}

/// Maximizes the subgroup objective jointly over `(beta0, beta, tau)`.
///
/// For fixed `tau` the lasso in `(beta0, beta)` is solved to high accuracy;
/// the profiled objective is concave in `tau` with derivative
/// `N / tau - A tau + B(tau)` (envelope theorem), whose root is located by a
/// bracketed Illinois iteration. The intercept is profiled out, so only the
/// previous `beta` and `tau` serve as warm starts.
#[allow(clippy::too_many_arguments)]
pub fn update_regression(
    d: &Dataset,
    r: &Responsibilities,
    k: usize,
    beta_prev: &DVector<f64>,
    _beta0_prev: f64,
    tau_prev: f64,
    lambda1: f64,
) -> Result<RegressionUpdate> {
    if !(tau_prev > 0.0 && tau_prev.is_finite()) {
        return Err(Error::NonPositivePrecision { k, value: tau_prev });
    }
    let (n, p) = (d.n(), d.p());
    let w = r.rho.column(k);
    let total: f64 = w.sum();
    let a: f64 = (0..n).map(|i| w[i] * r.z2hat[(i, k)]).sum();
    if !(a > 0.0) {
        return Err(Error::NonPositiveSecondMoment(a));
    }

    let mut xbar = DVector::zeros(p);
    let mut zbar = 0.0;
    let mut zx = DVector::zeros(p);
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let xi = d.x.row(i).transpose();
        xbar.axpy(wi, &xi, 1.0);
        zx.axpy(wi * r.zhat[(i, k)], &xi, 1.0);
        zbar += wi * r.zhat[(i, k)];
    }
    xbar /= total;
    zbar /= total;
    let centered = DMatrix::from_fn(n, p, |i, j| w[i].sqrt() * (d.x[(i, j)] - xbar[j]));
    let gram = centered.tr_mul(&centered);
    // sum_i w_i (x_i - xbar)(zhat_i - zbar) = zx - total * zbar * xbar
    let cz = &zx - &xbar * (total * zbar);

    let mut beta = beta_prev.clone();
    let mut gb = &gram * &beta;
    let mut sweeps = 0;
    let mut last_tau = tau_prev;
    // Profile derivative at `tau`; leaves the lasso solution in `beta`.
    let mut slope = |tau: f64, beta: &mut DVector<f64>, gb: &mut DVector<f64>| -> f64 {
        let ratio = tau / last_tau;
        *beta *= ratio;
        *gb *= ratio;
        last_tau = tau;
        sweeps += lasso_cd(&gram, &(&cz * tau), lambda1, beta, gb);
        let beta0 = tau * zbar - beta.dot(&xbar);
        let b = beta0 * total * zbar + beta.dot(&zx);
        total / tau - a * tau + b
    };

    let mut tau = tau_prev;
    let g0 = slope(tau, &mut beta, &mut gb);
    let (mut lo, mut glo, mut hi, mut ghi);
    if g0 > 0.0 {
        (lo, glo) = (tau, g0);
        hi = tau;
        loop {
            hi *= 2.0;
            ghi = slope(hi, &mut beta, &mut gb);
            if ghi <= 0.0 || !hi.is_finite() {
                break;
            }
            (lo, glo) = (hi, ghi);
        }
    } else {
        (hi, ghi) = (tau, g0);
        lo = tau;
        loop {
            lo *= 0.5;
            glo = slope(lo, &mut beta, &mut gb);
            if glo >= 0.0 || lo < 1e-300 {
                break;
            }
            (hi, ghi) = (lo, glo);
        }
    }
    if glo == 0.0 {
        tau = lo;
    } else if ghi == 0.0 {
        tau = hi;
    } else {
        let mut side = 0i8;
        for _ in 0..MAX_OUTER {
            tau = (lo * ghi - hi * glo) / (ghi - glo);
            if !(tau > lo && tau < hi) {
                tau = 0.5 * (lo + hi);
            }
            let g = slope(tau, &mut beta, &mut gb);
            if g == 0.0 || (hi - lo) <= OUTER_TOL * 1e-4 * tau {
                break;
            }
            if g > 0.0 {
                (lo, glo) = (tau, g);
                if side == 1 {
                    ghi *= 0.5;
                }
                side = 1;
            } else {
                (hi, ghi) = (tau, g);
                if side == -1 {
                    glo *= 0.5;
                }
                side = -1;
            }
        }
    }
    slope(tau, &mut beta, &mut gb);
    let beta0 = tau * zbar - beta.dot(&xbar);
    Ok(RegressionUpdate { beta0, beta, tau, sweeps })
}
