//! MAP-EM driver: E-step, block M-step, initialization and multi-start fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{log_prior, slab_probability, std_normal_hazard, LogDensityTerms};
use crate::linalg::log_sum_exp;
use crate::model::{Dataset, FitDiagnostics, FitResult, Hyperparams, ModelParams, Responsibilities};
use crate::parallel::map_indexed;
use crate::precision::{
    penalty_weights, update_means, weighted_scatter, AdmmConfig, AdmmState, PrecisionProblem,
    SimilarityLaplacian,
};
use crate::regression::{lasso_cd, update_regression};
use crate::selection;

/// Within-cluster variances are floored at this value during initialization.
pub const VAR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// k-means on the rows of the predictor matrix.
    Kmeans,
    /// Uniformly random partition.
    Random,
    /// Hard-assignment clustering of linear regressions of `t` on the leading
    /// spectral directions of the outcome-weighted, whitened predictors,
    /// refined by lasso regressions in the full predictor space; also seeds the
    /// outcome parameters. The construction barely depends on the random
    /// stream, so in a multi-start fit only start 0 uses it and later starts
    /// use random partitions.
    Regression,
}

/// How the MAP estimate is sparsified before edges are called.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Threshold coefficients and means; edges come from the PIPs of the MAP
    /// precision matrices.
    PipOnly,
    /// Also threshold off-diagonal precision entries before computing PIPs.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_starts: usize,
    pub init_method: InitMethod,
    pub seed: u64,
    pub admm: AdmmConfig,
    /// Constant `c` of the threshold level `c sqrt(K^3 log p / n)`.
    pub threshold_c: f64,
    /// PIP level above which an edge is called.
    pub pip_level: f64,
    pub threshold_mode: ThresholdMode,
    /// Worker threads for independent starts; 1 runs sequentially.
    pub jobs: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            rel_tol: 1e-5,
            n_starts: 5,
            init_method: InitMethod::Regression,
            seed: 0,
            admm: AdmmConfig::default(),
            threshold_c: 1.0,
            pip_level: 0.5,
            threshold_mode: ThresholdMode::PipOnly,
            jobs: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if !(self.threshold_c >= 0.0) {
            return bad("threshold_c must be non-negative");
        }
        if !(self.pip_level > 0.0 && self.pip_level < 1.0) {
            return bad("pip_level must lie in (0, 1)");
        }
        self.admm.validate()
    }
}

/// Smallest admissible effective subgroup size, `max(5, 0.01 n)`.
pub fn degenerate_floor(n: usize) -> f64 {
    5f64.max(0.01 * n as f64)
}

/// Truncated-normal moments of `Z ~ N(m, 1/tau^2)` given `Z > t`.
pub fn censored_moments(t: f64, m: f64, tau: f64) -> (f64, f64) {
    let h = std_normal_hazard(tau * (t - m));
    let first = m + h / tau;
    let second = m * m + 1.0 / (tau * tau) + (t + m) * h / tau;
    (first, second)
}

fn e_step_from_terms(
    d: &Dataset,
    params: &ModelParams,
    h: &Hyperparams,
    terms: &LogDensityTerms,
) -> Responsibilities {
    let (n, k) = (d.n(), params.k());
    let mut rho = DMatrix::zeros(n, k);
    let mut buf = vec![0.0; k];
    for i in 0..n {
        for kk in 0..k {
            buf[kk] = terms.log_total[(i, kk)];
        }
        let norm = log_sum_exp(&buf);
        for kk in 0..k {
            rho[(i, kk)] = (buf[kk] - norm).exp();
        }
    }

    let p = params.p();
    let q = params
        .omega
        .iter()
        .map(|o| {
            DMatrix::from_fn(p, p, |j, l| if j == l { 0.0 } else { slab_probability(o[(j, l)], h) })
        })
        .collect();

    let mut zhat = DMatrix::zeros(n, k);
    let mut z2hat = DMatrix::zeros(n, k);
    for kk in 0..k {
        let tau = params.tau[kk];
        let beta = params.beta.row(kk);
        for i in 0..n {
            let t = d.t[i];
            if d.is_event(i) {
                zhat[(i, kk)] = t;
                z2hat[(i, kk)] = t * t;
            } else {
                let eta = params.beta0[kk] + beta.dot(&d.x.row(i));
                let (m1, m2) = censored_moments(t, eta / tau, tau);
                zhat[(i, kk)] = m1;
                z2hat[(i, kk)] = m2;
            }
        }
    }

    let floor = degenerate_floor(n);
    for kk in 0..k {
        let c = rho.column(kk).sum();
        if c < floor {
            log::warn!("subgroup {kk} has effective size {c:.2} below {floor:.2}");
        }
    }
    Responsibilities { rho, q, zhat, z2hat }
}

/// Membership probabilities, slab probabilities and imputed outcome moments.
pub fn e_step(d: &Dataset, params: &ModelParams, h: &Hyperparams) -> Result<Responsibilities> {
    let terms = LogDensityTerms::compute(d, params)?;
    Ok(e_step_from_terms(d, params, h, &terms))
}

/// Expected complete-data log-posterior at `params` under the E-step output
/// `r`, with the similarity Laplacian frozen at `reference`. Terms that do not
/// depend on the parameters are dropped.
pub fn surrogate(
    d: &Dataset,
    r: &Responsibilities,
    params: &ModelParams,
    h: &Hyperparams,
    reference: &[DMatrix<f64>],
) -> Result<f64> {
    let terms = LogDensityTerms::compute(d, params)?;
    let (n, k, p) = (d.n(), params.k(), params.p());
    let mut total = 0.0;
    for kk in 0..k {
        let tau = params.tau[kk];
        let log_pi = params.pi[kk].ln();
        let beta = params.beta.row(kk);
        for i in 0..n {
            let w = r.rho[(i, kk)];
            if w == 0.0 {
                continue;
            }
            let eta = params.beta0[kk] + beta.dot(&d.x.row(i));
            let sq = tau * tau * r.z2hat[(i, kk)] - 2.0 * tau * eta * r.zhat[(i, kk)] + eta * eta;
            total += w * (log_pi + terms.log_fx[(i, kk)] + tau.ln() - 0.5 * sq);
        }
    }
    let weights = penalty_weights(&r.q, h);
    for (o, w) in params.omega.iter().zip(&weights) {
        total -= h.tau0 * o.diagonal().sum();
        for l in 1..p {
            for j in 0..l {
                total -= w[(j, l)] * o[(j, l)].abs();
            }
        }
    }
    total -= h.lambda1 * params.beta.iter().map(|v| v.abs()).sum::<f64>();
    total -= h.lambda2 * params.mu.iter().map(|v| v.abs()).sum::<f64>();
    if h.u > 0.0 && k > 1 {
        let lap = SimilarityLaplacian::from_reference(reference, h.eps);
        total -= 0.5 * h.u * lap.total_quadratic(&params.omega);
    }
    Ok(total)
}

/// Result of one M-step.
#[derive(Debug, Clone)]
pub struct MStep {
    pub params: ModelParams,
    pub admm_iterations: usize,
    /// Smallest eigenvalue over the precision iterates of the inner solver.
    pub min_eigenvalue: f64,
    pub admm_state: AdmmState,
}

/// Block-wise maximization of the surrogate: mixture weights, means (with the
/// previous precisions), precisions (with the new means), then regressions.
pub fn m_step(
    d: &Dataset,
    r: &Responsibilities,
    prev: &ModelParams,
    h: &Hyperparams,
    admm: &AdmmConfig,
    warm: Option<AdmmState>,
) -> Result<MStep> {
    let (n, k) = (d.n(), prev.k());
    let counts: Vec<f64> = (0..k).map(|kk| r.rho.column(kk).sum()).collect();
    let pi = DVector::from_fn(k, |kk, _| counts[kk] / n as f64);

    let mu = update_means(d, &r.rho, &prev.omega, &prev.mu, h.lambda2);

    let mut scatter = Vec::with_capacity(k);
    for kk in 0..k {
        let rho_k: Vec<f64> = r.rho.column(kk).iter().copied().collect();
        let mu_k: Vec<f64> = mu.row(kk).iter().copied().collect();
        let (s, _) = weighted_scatter(d, &rho_k, &mu_k).map_err(|e| match e {
            Error::DegenerateCount { count, floor, .. } => Error::DegenerateCount { k: kk, count, floor },
            other => other,
        })?;
        scatter.push(s);
    }
    let problem = PrecisionProblem::new(&scatter, &counts, &r.q, h, &prev.omega);
    let sol = problem.solve(&prev.omega, warm, admm);

    let mut beta0 = prev.beta0.clone();
    let mut beta = prev.beta.clone();
    let mut tau = prev.tau.clone();
    for kk in 0..k {
        let b_prev = prev.beta.row(kk).transpose();
        let up = update_regression(d, r, kk, &b_prev, prev.beta0[kk], prev.tau[kk], h.lambda1)?;
        beta0[kk] = up.beta0;
        beta.set_row(kk, &up.beta.transpose());
        tau[kk] = up.tau;
    }

    Ok(MStep {
        params: ModelParams { beta0, beta, tau, mu, omega: sol.omega, pi },
        admm_iterations: sol.iterations,
        min_eigenvalue: sol.min_eigenvalue,
        admm_state: sol.state,
    })
}

/// Ridge added to the cluster covariance before inversion, relative to each
/// (floored) variance.
const INIT_SHRINKAGE: f64 = 0.2;

/// Parameters implied by a hard partition: cluster means, precisions from the
/// inverse of the within-cluster covariance with its diagonal inflated by
/// `1 + INIT_SHRINKAGE`, zero coefficients, and intercept-only outcome fits on
/// the cluster's observed events.
///
/// The starting precisions are dense on purpose: an edge that is zero in every
/// subgroup starts the similarity prior at its steepest, which ties the
/// subgroups' graphs together from the first iteration.
pub fn params_from_labels(d: &Dataset, labels: &[usize], k: usize) -> Result<ModelParams> {
    let (n, p) = (d.n(), d.p());
    let mut mu = DMatrix::zeros(k, p);
    let mut omega = Vec::with_capacity(k);
    let mut beta0 = DVector::zeros(k);
    let mut tau = DVector::zeros(k);
    let mut pi = DVector::zeros(k);
    for kk in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == kk).collect();
        if members.is_empty() {
            return Err(Error::DegenerateCount { k: kk, count: 0.0, floor: 1.0 });
        }
        let m = members.len() as f64;
        for j in 0..p {
            mu[(kk, j)] = members.iter().map(|&i| d.x[(i, j)]).sum::<f64>() / m;
        }
        let xc = DMatrix::from_fn(members.len(), p, |r, j| d.x[(members[r], j)] - mu[(kk, j)]);
        let mut cov = xc.tr_mul(&xc) / m;
        for j in 0..p {
            cov[(j, j)] = cov[(j, j)].max(VAR_FLOOR) * (1.0 + INIT_SHRINKAGE);
        }
        let inv = cov
            .cholesky()
            .ok_or(Error::DegenerateCount { k: kk, count: m, floor: 1.0 })?
            .inverse();
        omega.push((&inv + inv.transpose()) * 0.5);

        let events: Vec<f64> = members.iter().filter(|&&i| d.is_event(i)).map(|&i| d.t[i]).collect();
        let ts: Vec<f64> = if events.len() >= 2 {
            events
        } else {
            members.iter().map(|&i| d.t[i]).collect()
        };
        let tm = ts.iter().sum::<f64>() / ts.len() as f64;
        let tv = ts.iter().map(|v| (v - tm).powi(2)).sum::<f64>() / ts.len() as f64;
        tau[kk] = 1.0 / tv.max(VAR_FLOOR).sqrt();
        beta0[kk] = tm * tau[kk];
        pi[kk] = m / n as f64;
    }
    Ok(ModelParams { beta0, beta: DMatrix::zeros(k, p), tau, mu, omega, pi })
}

const INIT_RETRIES: usize = 20;

fn kmeans_labels(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let (n, p) = (x.nrows(), x.ncols());
    let dist2 = |i: usize, c: &[f64]| -> f64 { (0..p).map(|j| (x[(i, j)] - c[j]).powi(2)).sum() };
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().copied().collect() };

    let mut centers = vec![row(rng.random_range(0..n))];
    let mut best: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if target < b {
                    chosen = i;
                    break;
                }
                target -= b;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for i in 0..n {
            best[i] = best[i].min(dist2(i, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut arg = 0;
            let mut dmin = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let v = dist2(i, center);
                if v < dmin {
                    dmin = v;
                    arg = c;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut sizes = vec![0usize; k];
        for i in 0..n {
            sizes[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += x[(i, j)];
            }
        }
        if sizes.contains(&0) {
            return None;
        }
        for c in 0..k {
            for j in 0..p {
                centers[c][j] = sums[c][j] / sizes[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Some(labels)
}

fn random_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    if sizes.iter().any(|&s| s < 2.min(n / k.max(1)).max(1)) {
        None
    } else {
        Some(labels)
    }
}

const REGRESSION_RESTARTS: usize = 50;
const WHITENING_RIDGE: f64 = 1e-3;

/// Number of predictors kept by the outcome-moment screen.
fn screen_size(n: usize, p: usize, k: usize) -> usize {
    (n / (10 * k)).clamp(k, p.max(k)).min(p)
}

/// Low-dimensional predictor directions for regression clustering.
///
/// Predictors are first screened by the excess of `mean(t^2 x_j^2)` over
/// `mean(t^2) mean(x_j^2)`, which is large only where the subgroup
/// coefficients load. Within the screened block, after whitening,
/// `E[t^2 x x']` is a multiple of the identity plus a combination of the
/// `beta_k beta_k'`, so its leading `k` eigenvectors span the subgroup
/// coefficient directions. Returns the centred projections (`n x k`).
fn spectral_features(d: &Dataset, k: usize) -> DMatrix<f64> {
    let (n, p) = (d.n(), d.p());
    let nf = n as f64;
    let xbar = DVector::from_fn(p, |j, _| d.x.column(j).sum() / nf);
    let xc = DMatrix::from_fn(n, p, |i, j| d.x[(i, j)] - xbar[j]);
    let tbar = d.t.sum() / nf;
    let t2 = d.t.map(|v| (v - tbar).powi(2));
    let t2bar = t2.sum() / nf;
    let mut score: Vec<(usize, f64)> = (0..p)
        .map(|j| {
            let col = xc.column(j);
            let var = col.norm_squared() / nf;
            let cross = (0..n).map(|i| t2[i] * col[i] * col[i]).sum::<f64>() / nf;
            (j, if var > 0.0 { cross / (t2bar * var).max(f64::MIN_POSITIVE) } else { f64::NEG_INFINITY })
        })
        .collect();
    score.sort_by(|a, b| b.1.total_cmp(&a.1));
    let kept: Vec<usize> = score.iter().take(screen_size(n, p, k)).map(|s| s.0).collect();
    let s = kept.len();

    let xs = DMatrix::from_fn(n, s, |i, c| xc[(i, kept[c])]);
    let mut cov = xs.tr_mul(&xs) / nf;
    for c in 0..s {
        cov[(c, c)] += WHITENING_RIDGE;
    }
    let eig = SymmetricEigen::new(cov);
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.max(WHITENING_RIDGE).sqrt());
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let xw = &xs * &w;
    let weighted = DMatrix::from_fn(n, s, |i, c| (d.t[i] - tbar) * xw[(i, c)]);
    let eig = SymmetricEigen::new(weighted.tr_mul(&weighted) / nf);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let dims = k.min(s);
    let v = DMatrix::from_fn(s, dims, |c, e| eig.eigenvectors[(c, order[e])]);
    xw * v
}

/// Least-squares fit of `t` on `[1, f]` over `members`.
fn ols_fit(f: &DMatrix<f64>, t: &DVector<f64>, members: &[usize]) -> Option<DVector<f64>> {
    let dims = f.ncols() + 1;
    let a = DMatrix::from_fn(members.len(), dims, |r, c| if c == 0 { 1.0 } else { f[(members[r], c - 1)] });
    let b = DVector::from_fn(members.len(), |r, _| t[members[r]]);
    let mut gram = a.tr_mul(&a);
    for c in 1..dims {
        gram[(c, c)] += 1e-10;
    }
    Some(gram.cholesky()?.solve(&a.tr_mul(&b)))
}

fn residual(f: &DMatrix<f64>, t: &DVector<f64>, i: usize, coef: &DVector<f64>) -> f64 {
    t[i] - coef[0] - (0..f.ncols()).map(|c| f[(i, c)] * coef[c + 1]).sum::<f64>()
}

fn assign(f: &DMatrix<f64>, t: &DVector<f64>, fits: &[DVector<f64>]) -> (Vec<usize>, f64) {
    let mut labels = vec![0; f.nrows()];
    let mut rss = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for (kk, coef) in fits.iter().enumerate() {
            let r = residual(f, t, i, coef).powi(2);
            if r < best {
                best = r;
                *label = kk;
            }
        }
        rss += best;
    }
    (labels, rss)
}

/// Seeds each cluster with an exact fit through a random minimal subset of
/// subjects, then alternates per-cluster fits and reassignment to the cluster
/// with the smallest squared residual. Returns the labels, the cluster fits
/// and the residual sum of squares.
fn regression_labels_once(
    f: &DMatrix<f64>,
    t: &DVector<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<DVector<f64>>, f64)> {
    let n = f.nrows();
    let size = f.ncols() + 1;
    if n < k * size {
        return None;
    }
    let mut fits = Vec::with_capacity(k);
    for _ in 0..k {
        let members = rand::seq::index::sample(rng, n, size).into_vec();
        fits.push(ols_fit(f, t, &members)?);
    }
    let (mut labels, mut rss) = assign(f, t, &fits);
    for _ in 0..100 {
        fits.clear();
        for kk in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == kk).collect();
            if members.len() < size + 1 {
                return None;
            }
            fits.push(ols_fit(f, t, &members)?);
        }
        let (next, next_rss) = assign(f, t, &fits);
        rss = next_rss;
        if next == labels {
            break;
        }
        labels = next;
    }
    Some((labels, fits, rss))
}

/// Lasso penalty of the refinement fits, relative to the largest marginal
/// covariance of the cluster.
const REFINE_PENALTY: f64 = 0.1;
const REFINE_ITERATIONS: usize = 50;

/// Lasso fit of `y` on `[1, x]` over `members`; returns `(intercept, slopes)`.
fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, members: &[usize]) -> (f64, DVector<f64>) {
    let (m, p) = (members.len() as f64, x.ncols());
    let xbar = DVector::from_fn(p, |j, _| members.iter().map(|&i| x[(i, j)]).sum::<f64>() / m);
    let ybar = members.iter().map(|&i| y[i]).sum::<f64>() / m;
    let xc = DMatrix::from_fn(members.len(), p, |r, j| x[(members[r], j)] - xbar[j]);
    let yc = DVector::from_fn(members.len(), |r, _| y[members[r]] - ybar);
    let g = xc.tr_mul(&xc);
    let c = xc.tr_mul(&yc);
    let lambda = REFINE_PENALTY * c.amax();
    let mut b = DVector::zeros(p);
    let mut gb = DVector::zeros(p);
    lasso_cd(&g, &c, lambda, &mut b, &mut gb);
    (ybar - b.dot(&xbar), b)
}

/// Residual of subject `i` under a native-scale fit; a censored subject only
/// contributes when the fit exceeds its censoring time.
fn native_residual(d: &Dataset, i: usize, fit: &(f64, DVector<f64>)) -> f64 {
    let r = d.t[i] - fit.0 - d.x.row(i).transpose().dot(&fit.1);
    if d.is_event(i) {
        r
    } else {
        r.max(0.0)
    }
}

/// Hard-assignment lasso regressions in the full predictor space, started
/// from `labels`. Censored outcomes are imputed as the larger of the
/// censoring time and the current fitted value.
#[allow(clippy::type_complexity)]
fn refine_labels(d: &Dataset, mut labels: Vec<usize>, k: usize) -> Option<(Vec<usize>, Vec<(f64, DVector<f64>)>)> {
    let n = d.n();
    let mut y = d.t.clone();
    let mut fits = Vec::with_capacity(k);
    for _ in 0..REFINE_ITERATIONS {
        fits.clear();
        for kk in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == kk).collect();
            if members.len() < 2 {
                return None;
            }
            fits.push(lasso_fit(&d.x, &y, &members));
        }
        let mut next = vec![0; n];
        for (i, label) in next.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for (kk, fit) in fits.iter().enumerate() {
                let r = native_residual(d, i, fit).powi(2);
                if r < best {
                    best = r;
                    *label = kk;
                }
            }
            if !d.is_event(i) {
                let fit = &fits[*label];
                y[i] = d.t[i].max(fit.0 + d.x.row(i).transpose().dot(&fit.1));
            }
        }
        if next == labels {
            break;
        }
        labels = next;
    }
    Some((labels, fits))
}

/// Regression-clustering start: labels plus outcome parameters in the
/// noise-scaled parameterization, one `(beta0, beta, tau)` per cluster.
#[allow(clippy::type_complexity)]
fn regression_start(d: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, Vec<(f64, DVector<f64>, f64)>)> {
    let f = spectral_features(d, k);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..REGRESSION_RESTARTS {
        if let Some((labels, _, rss)) = regression_labels_once(&f, &d.t, k, rng) {
            if best.as_ref().is_none_or(|b| rss < b.1) {
                best = Some((labels, rss));
            }
        }
    }
    let (labels, fits) = refine_labels(d, best?.0, k)?;
    let outcome = fits
        .into_iter()
        .enumerate()
        .map(|(kk, fit)| {
            let members: Vec<usize> = (0..d.n()).filter(|&i| labels[i] == kk).collect();
            let rss: f64 = members.iter().map(|&i| native_residual(d, i, &fit).powi(2)).sum();
            let tau = 1.0 / (rss / members.len() as f64).max(VAR_FLOOR).sqrt();
            (fit.0 * tau, fit.1 * tau, tau)
        })
        .collect();
    Some((labels, outcome))
}

/// Starting parameters from a partition of the subjects (see [`InitMethod`]).
pub fn initialize(d: &Dataset, k: usize, method: InitMethod, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if k > d.n() {
        return Err(Error::InvalidConfig(format!("K = {k} exceeds n = {}", d.n())));
    }
    for _ in 0..INIT_RETRIES {
        let labels = match method {
            InitMethod::Kmeans => kmeans_labels(&d.x, k, rng),
            InitMethod::Random => random_labels(d.n(), k, rng),
            InitMethod::Regression => {
                if let Some((labels, outcome)) = regression_start(d, k, rng) {
                    let mut params = params_from_labels(d, &labels, k)?;
                    for (kk, (b0, beta, tau)) in outcome.into_iter().enumerate() {
                        params.beta0[kk] = b0;
                        params.beta.set_row(kk, &beta.transpose());
                        params.tau[kk] = tau;
                    }
                    return Ok(params);
                }
                None
            }
        };
        if let Some(labels) = labels {
            return params_from_labels(d, &labels, k);
        }
    }
    Err(Error::DegenerateCount { k: 0, count: 0.0, floor: 1.0 })
}

/// RNG for start `start` of a fit seeded with `seed`.
pub fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// One EM run from fixed starting parameters.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: ModelParams,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: FitDiagnostics,
}

/// Iterates E and M steps from `init` until the relative change of the
/// penalized log-posterior drops below `cfg.rel_tol`.
pub fn run_em(d: &Dataset, init: ModelParams, h: &Hyperparams, cfg: &EmConfig) -> Result<EmRun> {
    let floor = degenerate_floor(d.n());
    let mut params = init;
    let mut terms = LogDensityTerms::compute(d, &params)?;
    let mut objective = terms.log_likelihood() + log_prior(&params, h);
    let mut trace = vec![objective];
    let mut diagnostics = FitDiagnostics::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut warm: Option<AdmmState> = None;

    for it in 1..=cfg.max_iter {
        let r = e_step_from_terms(d, &params, h, &terms);
        if r.counts().iter().any(|&c| c < floor) {
            diagnostics.degenerate = true;
            break;
        }
        iterations = it;
        let before = surrogate(d, &r, &params, h, &params.omega)?;
        let step = m_step(d, &r, &params, h, &cfg.admm, warm.take())?;
        let after = surrogate(d, &r, &step.params, h, &params.omega)?;
        diagnostics.surrogate.push((before, after));
        diagnostics.min_eigenvalue.push(step.min_eigenvalue);
        diagnostics.admm_iterations.push(step.admm_iterations);
        warm = Some(step.admm_state);
        params = step.params;

        terms = LogDensityTerms::compute(d, &params)?;
        let next = terms.log_likelihood() + log_prior(&params, h);
        trace.push(next);
        let change = (next - objective).abs() / objective.abs().max(1.0);
        objective = next;
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    if !diagnostics.degenerate {
        let counts = e_step_from_terms(d, &params, h, &terms).counts();
        diagnostics.degenerate = counts.iter().any(|&c| c < floor);
    }
    Ok(EmRun { params, objective, trace, converged, iterations, diagnostics })
}

/// Hard labels: the most probable subgroup of each subject (lowest index on ties).
pub fn memberships(r: &Responsibilities) -> Vec<usize> {
    (0..r.rho.nrows())
        .map(|i| {
            let row = r.rho.row(i);
            let mut arg = 0;
            for kk in 1..row.len() {
                if row[kk] > row[arg] {
                    arg = kk;
                }
            }
            arg
        })
        .collect()
}

fn check_inputs(d: &Dataset, k: usize, h: &Hyperparams, cfg: &EmConfig) -> Result<()> {
    h.validate()?;
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if d.n() < k {
        return Err(Error::InvalidConfig(format!("K = {k} exceeds n = {}", d.n())));
    }
    Ok(())
}

/// Callback handed every completed EM run (with its hyperparameters and start
/// index) before starts are compared. Used for auditing solver invariants.
pub type RunObserver<'a> = &'a (dyn Fn(&Hyperparams, usize, &EmRun) + Sync);

/// Multi-start MAP-EM fit with `k` subgroups. Each start initializes with
/// `cfg.init_method` (see [`InitMethod::Regression`] for its one exception),
/// drawing from its own stream of the seeded generator. The
/// best non-degenerate final objective wins, ties going to the lowest start
/// index.
pub fn fit(d: &Dataset, k: usize, h: &Hyperparams, cfg: &EmConfig) -> Result<FitResult> {
    fit_observed(d, k, h, cfg, None)
}

/// [`fit`] with an optional observer of every run.
pub fn fit_observed(
    d: &Dataset,
    k: usize,
    h: &Hyperparams,
    cfg: &EmConfig,
    observer: Option<RunObserver>,
) -> Result<FitResult> {
    check_inputs(d, k, h, cfg)?;
    let runs = map_indexed(cfg.jobs, cfg.n_starts, |s| -> Result<Option<EmRun>> {
        let mut rng = start_rng(cfg.seed, s);
        let method = match cfg.init_method {
            InitMethod::Regression if s > 0 => InitMethod::Random,
            m => m,
        };
        let init = match initialize(d, k, method, &mut rng) {
            Ok(p) => p,
            Err(Error::DegenerateCount { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let run = run_em(d, init, h, cfg)?;
        if let Some(obs) = observer {
            obs(h, s, &run);
        }
        Ok(if run.diagnostics.degenerate { None } else { Some(run) })
    });

    let mut best: Option<(usize, EmRun)> = None;
    for (s, run) in runs.into_iter().enumerate() {
        let Some(run) = run? else {
            log::debug!("start {s} collapsed a subgroup");
            continue;
        };
        let better = match &best {
            None => true,
            Some((_, b)) => run.objective > b.objective,
        };
        if better {
            best = Some((s, run));
        }
    }
    let (start, run) = best.ok_or(Error::AllStartsDegenerate { starts: cfg.n_starts })?;
    selection::finalize(d, run, start, h, cfg)
}

/// Single EM run warm-started from `init` (used along selection grids).
pub fn fit_from(d: &Dataset, init: &ModelParams, h: &Hyperparams, cfg: &EmConfig) -> Result<FitResult> {
    fit_from_observed(d, init, h, cfg, None)
}

/// [`fit_from`] with an optional observer of the run.
pub fn fit_from_observed(
    d: &Dataset,
    init: &ModelParams,
    h: &Hyperparams,
    cfg: &EmConfig,
    observer: Option<RunObserver>,
) -> Result<FitResult> {
    check_inputs(d, init.k(), h, cfg)?;
    init.validate()?;
    let run = run_em(d, init.clone(), h, cfg)?;
    if let Some(obs) = observer {
        obs(h, 0, &run);
    }
    if run.diagnostics.degenerate {
        return Err(Error::AllStartsDegenerate { starts: 1 });
    }
    selection::finalize(d, run, 0, h, cfg)
}
