//! Joint update of the subgroup precision matrices and the predictor means.
//!
//! The precision subproblem maximizes, over positive-definite `Omega_1..Omega_K`,
//!
//! ```text
//! sum_k (n_k/2) [log det Omega_k - tr(S_k Omega_k)] - tau0 sum_{k,j} omega_kjj
//!   - sum_{k, j<l} w_kjl |omega_kjl| - (u/2) sum_{j<l} omega_jl' L_jl omega_jl
//! ```
//!
//! with `L_jl` frozen at reference values. It is solved by consensus ADMM: the
//! smooth log-det part is split from the penalties, the log-det step has an
//! eigenvalue closed form whose iterates are positive definite, and the penalty
//! step decouples into one K-dimensional problem per pair `(j, l)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, soft_threshold};
use crate::model::{Dataset, Hyperparams};

/// Effective subgroup sizes below this are rejected by [`weighted_scatter`].
pub const SCATTER_FLOOR: f64 = 1e-8;

/// Cross-subgroup Laplacians for every pair `(j, l)`, parameterized by the
/// scales `s_k = sqrt(w_k^2 + eps^2)` of the reference values `w`:
/// `L_kk = (K - 1) / s_k^2`, `L_kk' = -1 / (s_k s_k')`.
#[derive(Debug, Clone)]
pub struct SimilarityLaplacian {
    /// Per subgroup, p x p matrix of scales (only the upper triangle is read).
    scales: Vec<DMatrix<f64>>,
}

impl SimilarityLaplacian {
    pub fn from_reference(omega: &[DMatrix<f64>], eps: f64) -> Self {
        let scales = omega
            .iter()
            .map(|o| o.map(|w| (w * w + eps * eps).sqrt()))
            .collect();
        SimilarityLaplacian { scales }
    }

    pub fn k(&self) -> usize {
        self.scales.len()
    }

    /// Scales `s_k` of pair `(j, l)`.
    pub fn scales(&self, j: usize, l: usize) -> Vec<f64> {
        self.scales.iter().map(|s| s[(j, l)]).collect()
    }

    /// Dense K x K Laplacian of pair `(j, l)`.
    pub fn matrix(&self, j: usize, l: usize) -> DMatrix<f64> {
        let s = self.scales(j, l);
        let k = s.len();
        DMatrix::from_fn(k, k, |a, b| {
            if a == b {
                (k as f64 - 1.0) / (s[a] * s[a])
            } else {
                -1.0 / (s[a] * s[b])
            }
        })
    }

    /// `z' L_jl z`, computed as `K |y|^2 - (1'y)^2` with `y_k = z_k / s_k`.
    pub fn quadratic(&self, j: usize, l: usize, z: &[f64]) -> f64 {
        let k = self.k() as f64;
        let (mut sq, mut sum) = (0.0, 0.0);
        for (kk, s) in self.scales.iter().enumerate() {
            let y = z[kk] / s[(j, l)];
            sq += y * y;
            sum += y;
        }
        k * sq - sum * sum
    }

    /// `sum_{j<l} omega_jl' L_jl omega_jl`.
    pub fn total_quadratic(&self, omega: &[DMatrix<f64>]) -> f64 {
        let p = omega[0].nrows();
        let mut z = vec![0.0; omega.len()];
        let mut total = 0.0;
        for l in 1..p {
            for j in 0..l {
                for (kk, o) in omega.iter().enumerate() {
                    z[kk] = o[(j, l)];
                }
                total += self.quadratic(j, l, &z);
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Initial augmented-Lagrangian penalty, adapted by residual balancing.
    pub rho: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig { rho: 1.0, abs_tol: 1e-6, rel_tol: 1e-4, max_iter: 1000 }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0 && self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.max_iter > 0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("ADMM settings must be positive".into()))
        }
    }
}

const RHO_MIN: f64 = 1e-3;
const RHO_MAX: f64 = 1e3;

/// Consensus variables carried between calls to warm-start the solver.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: Vec<DMatrix<f64>>,
    pub dual: Vec<DMatrix<f64>>,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct PrecisionSolution {
    pub omega: Vec<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Smallest eigenvalue over every log-det-step iterate and the returned matrices.
    pub min_eigenvalue: f64,
    /// Objective at the returned matrices.
    pub objective: f64,
    pub state: AdmmState,
}

/// Weighted scatter `sum_i rho_i (x_i - mu)(x_i - mu)' / n_k` and `n_k = sum_i rho_i`.
pub fn weighted_scatter(
    d: &Dataset,
    rho_k: &[f64],
    mu_k: &[f64],
) -> Result<(DMatrix<f64>, f64)> {
    let (n, p) = (d.n(), d.p());
    if rho_k.len() != n || mu_k.len() != p {
        return Err(Error::DimensionMismatch("scatter weights or mean".into()));
    }
    let count: f64 = rho_k.iter().sum();
    if !(count >= SCATTER_FLOOR) {
        return Err(Error::DegenerateCount { k: 0, count, floor: SCATTER_FLOOR });
    }
    let r = DMatrix::from_fn(n, p, |i, j| rho_k[i].sqrt() * (d.x[(i, j)] - mu_k[j]));
    let s = r.tr_mul(&r) / count;
    Ok(((&s + s.transpose()) * 0.5, count))
}

/// Per-entry L1 weights `q / v1 + (1 - q) / v0` from slab probabilities.
pub fn penalty_weights(q: &[DMatrix<f64>], h: &Hyperparams) -> Vec<DMatrix<f64>> {
    q.iter()
        .map(|qk| qk.map(|v| v / h.v1 + (1.0 - v) / h.v0))
        .collect()
}

/// Minimizes `rho |z - c|^2 + sum_k w_k |z_k| + (u/2) z' L z` over `z` in R^K,
/// where `L` is the similarity Laplacian with scales `s`.
///
/// Writing `z' L z = K |y|^2 - (1'y)^2` with `y = z / s` and introducing the
/// auxiliary `m` through `-(1'y)^2 = min_m (m^2 - 2 m 1'y)` makes the problem
/// separable in `z` for fixed `m`; the optimal `m` is the unique root of a
/// decreasing piecewise-linear function, located exactly from its breakpoints.
pub fn similarity_prox(c: &[f64], w: &[f64], s: &[f64], rho: f64, u: f64, out: &mut [f64]) {
    let k = c.len();
    if u == 0.0 || k < 2 {
        for kk in 0..k {
            out[kk] = soft_threshold(2.0 * rho * c[kk], w[kk]) / (2.0 * rho);
        }
        return;
    }
    let kf = k as f64;
    let z_at = |m: f64, kk: usize| -> f64 {
        soft_threshold(2.0 * rho * c[kk] + u * m / s[kk], w[kk])
            / (2.0 * rho + u * kf / (s[kk] * s[kk]))
    };
    let g = |m: f64| -> f64 { (0..k).map(|kk| z_at(m, kk) / s[kk]).sum::<f64>() - m };

    let mut bps: Vec<f64> = Vec::with_capacity(2 * k);
    for kk in 0..k {
        bps.push(s[kk] * (w[kk] - 2.0 * rho * c[kk]) / u);
        bps.push(s[kk] * (-w[kk] - 2.0 * rho * c[kk]) / u);
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let root = {
        let g0 = g(bps[0]);
        if g0 <= 0.0 {
            let gl = g(bps[0] - 1.0);
            bps[0] - g0 / (g0 - gl)
        } else {
            let mut found = None;
            let mut prev = (bps[0], g0);
            for &b in &bps[1..] {
                let gb = g(b);
                if gb <= 0.0 {
                    let (a, ga) = prev;
                    found = Some(if ga == gb { a } else { a + ga * (b - a) / (ga - gb) });
                    break;
                }
                prev = (b, gb);
            }
            match found {
                Some(m) => m,
                None => {
                    let (b, gb) = prev;
                    let gr = g(b + 1.0);
                    b + gb / (gb - gr)
                }
            }
        }
    };
    for kk in 0..k {
        out[kk] = z_at(root, kk);
    }
}

/// The precision subproblem with its data, weights and frozen Laplacian.
#[derive(Debug, Clone)]
pub struct PrecisionProblem<'a> {
    pub scatter: &'a [DMatrix<f64>],
    pub counts: &'a [f64],
    /// Per subgroup p x p L1 weights on off-diagonal entries.
    pub weights: Vec<DMatrix<f64>>,
    pub tau0: f64,
    pub u: f64,
    pub laplacian: SimilarityLaplacian,
}

impl<'a> PrecisionProblem<'a> {
    /// Builds the problem with penalty weights from slab probabilities `q` and
    /// the Laplacian frozen at `reference`.
    pub fn new(
        scatter: &'a [DMatrix<f64>],
        counts: &'a [f64],
        q: &[DMatrix<f64>],
        h: &Hyperparams,
        reference: &[DMatrix<f64>],
    ) -> Self {
        PrecisionProblem {
            scatter,
            counts,
            weights: penalty_weights(q, h),
            tau0: h.tau0,
            u: h.u,
            laplacian: SimilarityLaplacian::from_reference(reference, h.eps),
        }
    }

    fn p(&self) -> usize {
        self.scatter[0].nrows()
    }

    /// Objective to maximize; `-inf` if any matrix is not positive definite.
    pub fn objective(&self, omega: &[DMatrix<f64>]) -> f64 {
        let p = self.p();
        let mut total = 0.0;
        for (k, o) in omega.iter().enumerate() {
            let Some(chol) = linalg::cholesky(o) else {
                return f64::NEG_INFINITY;
            };
            total += 0.5
                * self.counts[k]
                * (linalg::log_det(&chol) - linalg::trace_product(&self.scatter[k], o));
            total -= self.tau0 * o.diagonal().sum();
            let w = &self.weights[k];
            for l in 1..p {
                for j in 0..l {
                    total -= w[(j, l)] * o[(j, l)].abs();
                }
            }
        }
        if self.u > 0.0 && omega.len() > 1 {
            total -= 0.5 * self.u * self.laplacian.total_quadratic(omega);
        }
        total
    }

    /// Runs ADMM from `start` (or from a previous solver state) and returns the
    /// best positive-definite point among the consensus iterate, the log-det
    /// iterate and `start` itself, so the objective never decreases.
    pub fn solve(
        &self,
        start: &[DMatrix<f64>],
        warm: Option<AdmmState>,
        cfg: &AdmmConfig,
    ) -> PrecisionSolution {
        let k = start.len();
        let p = self.p();
        let mut state = warm.unwrap_or_else(|| AdmmState {
            z: start.to_vec(),
            dual: vec![DMatrix::zeros(p, p); k],
            rho: cfg.rho,
        });
        let mut omega = start.to_vec();
        let mut min_eig = f64::INFINITY;
        let mut converged = false;
        let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
        let mut iterations = 0;
        let dim = ((k * p * p) as f64).sqrt();
        let mut c = vec![0.0; k];
        let mut w = vec![0.0; k];
        let mut zpair = vec![0.0; k];

        for it in 1..=cfg.max_iter {
            iterations = it;
            let rho = state.rho;
            for kk in 0..k {
                let half_n = 0.5 * self.counts[kk];
                let target = (&state.z[kk] - &state.dual[kk]) * rho - &self.scatter[kk] * half_n;
                let target = (&target + target.transpose()) * 0.5;
                let eig = SymmetricEigen::new(target);
                let roots = eig.eigenvalues.map(|d| {
                    (d + (d * d + 4.0 * rho * half_n).sqrt()) / (2.0 * rho)
                });
                min_eig = min_eig.min(roots.min());
                let v = &eig.eigenvectors;
                let o = v * DMatrix::from_diagonal(&roots) * v.transpose();
                omega[kk] = (&o + o.transpose()) * 0.5;
            }

            let z_old = state.z.clone();
            for kk in 0..k {
                for j in 0..p {
                    state.z[kk][(j, j)] =
                        omega[kk][(j, j)] + state.dual[kk][(j, j)] - self.tau0 / rho;
                }
            }
            for l in 1..p {
                for j in 0..l {
                    for kk in 0..k {
                        c[kk] = omega[kk][(j, l)] + state.dual[kk][(j, l)];
                        w[kk] = self.weights[kk][(j, l)];
                    }
                    let s = self.laplacian.scales(j, l);
                    similarity_prox(&c, &w, &s, rho, self.u, &mut zpair);
                    for kk in 0..k {
                        state.z[kk][(j, l)] = zpair[kk];
                        state.z[kk][(l, j)] = zpair[kk];
                    }
                }
            }

            let (mut r2, mut s2, mut on2, mut zn2, mut un2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for kk in 0..k {
                let diff = &omega[kk] - &state.z[kk];
                state.dual[kk] += &diff;
                r2 += diff.norm_squared();
                s2 += (&state.z[kk] - &z_old[kk]).norm_squared();
                on2 += omega[kk].norm_squared();
                zn2 += state.z[kk].norm_squared();
                un2 += state.dual[kk].norm_squared();
            }
            r_norm = r2.sqrt();
            s_norm = rho * s2.sqrt();
            let eps_pri = dim * cfg.abs_tol + cfg.rel_tol * on2.sqrt().max(zn2.sqrt());
            let eps_dual = dim * cfg.abs_tol + cfg.rel_tol * rho * un2.sqrt();
            if r_norm <= eps_pri && s_norm <= eps_dual {
                converged = true;
                break;
            }
            let new_rho = if r_norm > 10.0 * s_norm {
                (rho * 2.0).min(RHO_MAX)
            } else if s_norm > 10.0 * r_norm {
                (rho / 2.0).max(RHO_MIN)
            } else {
                rho
            };
            if new_rho != rho {
                let scale = rho / new_rho;
                for d in state.dual.iter_mut() {
                    *d *= scale;
                }
                state.rho = new_rho;
            }
        }

        let candidates: [&[DMatrix<f64>]; 3] = [&state.z, &omega, start];
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (idx, cand) in candidates.iter().enumerate() {
            let v = self.objective(cand);
            if v > best_val {
                best = idx;
                best_val = v;
            }
        }
        let chosen = candidates[best].to_vec();
        for o in &chosen {
            min_eig = min_eig.min(linalg::min_eigenvalue(o));
        }
        PrecisionSolution {
            omega: chosen,
            iterations,
            converged,
            primal_residual: r_norm,
            dual_residual: s_norm,
            min_eigenvalue: min_eig,
            objective: best_val,
            state,
        }
    }
}

/// Solves the joint precision subproblem with the Laplacian frozen at
/// `omega_prev`, starting from `omega_prev`.
pub fn solve_precisions(
    scatter: &[DMatrix<f64>],
    counts: &[f64],
    q: &[DMatrix<f64>],
    h: &Hyperparams,
    omega_prev: &[DMatrix<f64>],
    cfg: &AdmmConfig,
) -> Result<PrecisionSolution> {
    let k = scatter.len();
    if counts.len() != k || q.len() != k || omega_prev.len() != k {
        return Err(Error::DimensionMismatch("precision subproblem inputs".into()));
    }
    for (kk, &n) in counts.iter().enumerate() {
        if !(n > 0.0) {
            return Err(Error::DegenerateCount { k: kk, count: n, floor: 0.0 });
        }
    }
    cfg.validate()?;
    let problem = PrecisionProblem::new(scatter, counts, q, h, omega_prev);
    Ok(problem.solve(omega_prev, None, cfg))
}

/// Penalized weighted Gaussian mean update by cyclic coordinate descent.
///
/// For subgroup `k` each coordinate maximizes
/// `-0.5 sum_i rho_ik (x_i - mu)' Omega_k (x_i - mu) - lambda2 |mu_j|`.
pub fn update_means(
    d: &Dataset,
    rho: &DMatrix<f64>,
    omega: &[DMatrix<f64>],
    mu_prev: &DMatrix<f64>,
    lambda2: f64,
) -> DMatrix<f64> {
    let (n, p) = (d.n(), d.p());
    let mut mu = mu_prev.clone();
    for (k, o) in omega.iter().enumerate() {
        let nk: f64 = rho.column(k).sum();
        if nk <= 0.0 {
            continue;
        }
        let mut xbar = vec![0.0; p];
        for i in 0..n {
            let r = rho[(i, k)];
            if r == 0.0 {
                continue;
            }
            for j in 0..p {
                xbar[j] += r * d.x[(i, j)];
            }
        }
        for v in xbar.iter_mut() {
            *v /= nk;
        }
        // resid_l = xbar_l - mu_l
        let mut resid: Vec<f64> = (0..p).map(|j| xbar[j] - mu[(k, j)]).collect();
        for _ in 0..10_000 {
            let mut max_change: f64 = 0.0;
            for j in 0..p {
                let mut b = o[(j, j)] * xbar[j];
                for l in 0..p {
                    if l != j {
                        b += o[(j, l)] * resid[l];
                    }
                }
                let new = soft_threshold(nk * b, lambda2) / (nk * o[(j, j)]);
                let change = new - mu[(k, j)];
                if change != 0.0 {
                    max_change = max_change.max(change.abs());
                    mu[(k, j)] = new;
                    resid[j] = xbar[j] - new;
                }
            }
            if max_change < 1e-8 {
                break;
            }
        }
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn toy_dataset() -> Dataset {
        let x = DMatrix::from_row_slice(
            5,
            2,
            &[0.3, 1.2, -0.7, 0.4, 1.1, -0.2, 0.05, 0.9, -1.4, -0.6],
        );
        Dataset::new(vec![0.0; 5], vec![1; 5], x).unwrap()
    }

    #[test]
    fn laplacian_null_vector_and_quadratic_identity() {
        let omega = vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        ];
        let eps = 1e-3;
        let lap = SimilarityLaplacian::from_reference(&omega, eps);
        let l = lap.matrix(0, 1);
        let s = DVector::from_vec(lap.scales(0, 1));
        assert!((&l * &s).amax() < 1e-10 * l.amax());
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        assert!(eig.min() > -1e-9 * l.amax());

        let w: Vec<f64> = omega.iter().map(|o| o[(0, 1)]).collect();
        let wv = DVector::from_vec(w.clone());
        let direct = wv.dot(&(&l * &wv));
        let norm: Vec<f64> = w.iter().map(|v| v / (v * v + eps * eps).sqrt()).collect();
        let mut identity = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    identity += 0.5 * (norm[a] - norm[b]).powi(2);
                }
            }
        }
        assert_abs_diff_eq!(direct, identity, epsilon = 1e-9);
        assert_abs_diff_eq!(lap.quadratic(0, 1, &w), identity, epsilon = 1e-9);
    }

    #[test]
    fn scatter_with_unit_weights_is_mle_covariance() {
        let d = toy_dataset();
        let mean: Vec<f64> = (0..2).map(|j| d.x.column(j).mean()).collect();
        let (s, n) = weighted_scatter(&d, &[1.0; 5], &mean).unwrap();
        assert_eq!(n, 5.0);
        for a in 0..2 {
            for b in 0..2 {
                let direct: f64 = (0..5)
                    .map(|i| (d.x[(i, a)] - mean[a]) * (d.x[(i, b)] - mean[b]))
                    .sum::<f64>()
                    / 5.0;
                assert_abs_diff_eq!(s[(a, b)], direct, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn scatter_of_single_subject_is_rank_one() {
        let x = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let d = Dataset::new(vec![0.0], vec![1], x).unwrap();
        let (s, n) = weighted_scatter(&d, &[1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(n, 1.0);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]));
    }

    #[test]
    fn scatter_rejects_empty_weights() {
        let d = toy_dataset();
        let err = weighted_scatter(&d, &[0.0; 5], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCount { .. }));
    }

    #[test]
    fn scatter_fractional_weights_match_direct_sum() {
        let d = toy_dataset();
        let rho = [0.1, 0.9, 0.5, 0.25, 0.75];
        let mu = [0.2, -0.1];
        let (s, n) = weighted_scatter(&d, &rho, &mu).unwrap();
        let total: f64 = rho.iter().sum();
        assert_abs_diff_eq!(n, total, epsilon = 1e-15);
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for i in 0..5 {
                    acc += rho[i] * (d.x[(i, a)] - mu[a]) * (d.x[(i, b)] - mu[b]);
                }
                assert_abs_diff_eq!(s[(a, b)], acc / total, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn unpenalized_single_group_recovers_inverse_scatter() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0]);
        let h = Hyperparams {
            tau0: 1e-12,
            v0: 1e11,
            v1: 1e12,
            u: 0.0,
            ..Hyperparams::default_for(50, 3)
        };
        let q = vec![DMatrix::zeros(3, 3)];
        let cfg = AdmmConfig { abs_tol: 1e-10, rel_tol: 1e-10, max_iter: 5000, ..Default::default() };
        let sol = solve_precisions(
            std::slice::from_ref(&s),
            &[50.0],
            &q,
            &h,
            &[DMatrix::identity(3, 3)],
            &cfg,
        )
        .unwrap();
        let inv = s.try_inverse().unwrap();
        assert!((&sol.omega[0] - &inv).amax() < 1e-6, "{} vs {}", sol.omega[0], inv);
        assert!(sol.min_eigenvalue > 0.0);
    }

    #[test]
    fn prox_without_coupling_is_soft_threshold() {
        let mut out = [0.0; 2];
        similarity_prox(&[1.0, -0.1], &[0.5, 0.5], &[1.0, 1.0], 1.0, 0.0, &mut out);
        assert_abs_diff_eq!(out[0], 0.75, epsilon = 1e-15);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn prox_satisfies_optimality_conditions() {
        // Subgradient check: 2 rho (z - c) + u L z + w sign(z) = 0 on the support,
        // |2 rho (-c) + u (L z)_k| <= w_k off the support.
        let cases: &[(&[f64], &[f64], &[f64])] = &[
            (&[0.8, -0.5, 0.1], &[0.2, 0.3, 0.05], &[0.5, 0.001, 0.3]),
            (&[0.4, 0.35], &[0.01, 0.01], &[0.001, 0.001]),
            (&[0.0, 0.9], &[1.0, 0.1], &[0.2, 0.6]),
        ];
        for &(c, w, s) in cases {
            for &(rho, u) in &[(1.0, 0.5), (3.0, 10.0), (0.01, 100.0)] {
                let k = c.len();
                let mut z = vec![0.0; k];
                similarity_prox(c, w, s, rho, u, &mut z);
                let lap = DMatrix::from_fn(k, k, |a, b| {
                    if a == b {
                        (k as f64 - 1.0) / (s[a] * s[a])
                    } else {
                        -1.0 / (s[a] * s[b])
                    }
                });
                let lz = &lap * DVector::from_vec(z.clone());
                let scale = 1.0 + u * lap.amax() * z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for kk in 0..k {
                    let g = 2.0 * rho * (z[kk] - c[kk]) + u * lz[kk];
                    if z[kk] != 0.0 {
                        assert!((g + w[kk] * z[kk].signum()).abs() < 1e-8 * scale, "{g} {z:?}");
                    } else {
                        assert!(g.abs() <= w[kk] + 1e-8 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn means_unpenalized_with_diagonal_precision_are_weighted_means() {
        let d = toy_dataset();
        let rho = DMatrix::from_column_slice(5, 1, &[0.1, 0.9, 0.5, 0.25, 0.75]);
        let o = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let mu = update_means(&d, &rho, &[o], &DMatrix::zeros(1, 2), 0.0);
        let total = rho.sum();
        for j in 0..2 {
            let m = (0..5).map(|i| rho[(i, 0)] * d.x[(i, j)]).sum::<f64>() / total;
            assert_abs_diff_eq!(mu[(0, j)], m, epsilon = 1e-12);
        }
    }

    #[test]
    fn means_fully_shrunk_under_huge_penalty() {
        let d = toy_dataset();
        let rho = DMatrix::from_element(5, 1, 1.0);
        let o = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let mu = update_means(&d, &rho, &[o], &DMatrix::from_element(1, 2, 0.3), 1e6);
        assert!(mu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_column_sample_mean_when_unpenalized() {
        let d = toy_dataset();
        let rho = DMatrix::from_element(5, 1, 1.0);
        let o = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let mu = update_means(&d, &rho, &[o], &DMatrix::zeros(1, 2), 0.0);
        for j in 0..2 {
            assert_abs_diff_eq!(mu[(0, j)], d.x.column(j).mean(), epsilon = 1e-8);
        }
    }
}
