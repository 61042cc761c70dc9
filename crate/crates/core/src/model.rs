//! Domain types shared by every stage of the fit: the observed data, the prior
//! constants, the parameter container and the outputs of the E-step and of a
//! complete fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed data: log observed times, censoring indicators and predictors.
///
/// `t[i]` is the logarithm of `min(survival, censoring)`; `delta[i] == 1` marks
/// an observed event.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: DVector<f64>,
    pub delta: Vec<u8>,
    pub x: DMatrix<f64>,
    /// Set when the columns of `x` were centred and scaled at ingestion.
    pub standardization: Option<Standardization>,
}

/// Column means and standard deviations removed from a standardized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(t: Vec<f64>, delta: Vec<u8>, x: DMatrix<f64>) -> Result<Self> {
        validate_dataset(Dataset {
            t: DVector::from_vec(t),
            delta,
            x,
            standardization: None,
        })
    }

    /// Builds a dataset from raw (not log-transformed) positive times.
    pub fn from_raw_times(times: &[f64], delta: Vec<u8>, x: DMatrix<f64>) -> Result<Self> {
        let mut t = Vec::with_capacity(times.len());
        for (i, &v) in times.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::NonFinite { what: "log time", index: i });
            }
            t.push(v.ln());
        }
        Self::new(t, delta, x)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_event(&self, i: usize) -> bool {
        self.delta[i] == 1
    }

    /// Returns a copy with every column centred to mean zero and scaled to unit
    /// (population) standard deviation. Constant columns are only centred.
    pub fn standardized(&self) -> Dataset {
        let (n, p) = (self.n(), self.p());
        let mut x = self.x.clone();
        let mut mean = vec![0.0; p];
        let mut sd = vec![1.0; p];
        for j in 0..p {
            let m = x.column(j).sum() / n as f64;
            let var = x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let s = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                x[(i, j)] = (x[(i, j)] - m) / s;
            }
            mean[j] = m;
            sd[j] = s;
        }
        Dataset {
            t: self.t.clone(),
            delta: self.delta.clone(),
            x,
            standardization: Some(Standardization { mean, sd }),
        }
    }
}

impl Standardization {
    /// Maps a precision matrix estimated on the standardized scale back to the
    /// scale of the original predictors.
    pub fn precision_to_raw(&self, omega: &DMatrix<f64>) -> DMatrix<f64> {
        let p = omega.nrows();
        DMatrix::from_fn(p, p, |j, l| omega[(j, l)] / (self.sd[j] * self.sd[l]))
    }
}

/// Checks the dataset invariants and hands the dataset back unchanged.
pub fn validate_dataset(d: Dataset) -> Result<Dataset> {
    let n = d.x.nrows();
    if n == 0 || d.x.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "predictor matrix is {}x{}, need at least one row and column",
            n,
            d.x.ncols()
        )));
    }
    if d.t.len() != n || d.delta.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} times, {} indicators, {} predictor rows",
            d.t.len(),
            d.delta.len(),
            n
        )));
    }
    if let Some(i) = d.t.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "log time", index: i });
    }
    if let Some(i) = d.x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "predictor matrix", index: i });
    }
    if let Some(i) = d.delta.iter().position(|&v| v > 1) {
        return Err(Error::InvalidIndicator { index: i, value: d.delta[i].to_string() });
    }
    Ok(d)
}

/// Prior and tuning constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Exponential rate on the precision diagonals.
    pub tau0: f64,
    /// Spike scale.
    pub v0: f64,
    /// Slab scale.
    pub v1: f64,
    /// Prior slab probability.
    pub p1: f64,
    /// Laplace rate on regression coefficients.
    pub lambda1: f64,
    /// Laplace rate on predictor means.
    pub lambda2: f64,
    /// Similarity prior strength.
    pub u: f64,
    /// Smoothing constant of the similarity Laplacian.
    pub eps: f64,
}

impl Hyperparams {
    /// Defaults for a dataset with `n` subjects and `p` predictors; the Laplace
    /// rates scale as `sqrt(n log p)`. The spike scale is the widest value of
    /// the default selection grid: on standardized predictors with about a
    /// hundred subjects per subgroup, narrower spikes shrink every edge to zero.
    pub fn default_for(n: usize, p: usize) -> Self {
        let rate = ((n as f64) * (p.max(2) as f64).ln()).sqrt();
        Hyperparams {
            tau0: 1e-2,
            v0: 0.05,
            v1: 1.0,
            p1: 0.5,
            lambda1: rate,
            lambda2: rate,
            u: 1.0,
            eps: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparams(m.to_string()));
        if !(self.v0 > 0.0 && self.v1 > self.v0 && self.v1.is_finite()) {
            return bad("need v1 > v0 > 0");
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return bad("p1 must lie in (0, 1)");
        }
        if !(self.tau0 > 0.0 && self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return bad("tau0, lambda1 and lambda2 must be positive");
        }
        if !(self.u >= 0.0 && self.u.is_finite()) {
            return bad("u must be non-negative");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

/// Full parameter set of the mixture: per-subgroup intercept, coefficients,
/// noise precision, predictor mean and precision matrix, plus mixture weights.
///
/// Coefficients are stored in the noise-scaled parameterization: the
/// native-scale coefficients are `beta / tau` (see [`native_coefficients`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta0: DVector<f64>,
    /// K x p.
    pub beta: DMatrix<f64>,
    pub tau: DVector<f64>,
    /// K x p.
    pub mu: DMatrix<f64>,
    pub omega: Vec<DMatrix<f64>>,
    pub pi: DVector<f64>,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.omega.len()
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    /// Reorders subgroups so that new subgroup `i` is old subgroup `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> ModelParams {
        let k = order.len();
        let p = self.p();
        ModelParams {
            beta0: DVector::from_fn(k, |i, _| self.beta0[order[i]]),
            beta: DMatrix::from_fn(k, p, |i, j| self.beta[(order[i], j)]),
            tau: DVector::from_fn(k, |i, _| self.tau[order[i]]),
            mu: DMatrix::from_fn(k, p, |i, j| self.mu[(order[i], j)]),
            omega: order.iter().map(|&o| self.omega[o].clone()).collect(),
            pi: DVector::from_fn(k, |i, _| self.pi[order[i]]),
        }
    }

    /// Checks the shape and value invariants (symmetric positive-definite
    /// precisions, positive noise precisions, weights on the simplex).
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let p = self.p();
        if self.beta0.len() != k
            || self.beta.nrows() != k
            || self.tau.len() != k
            || self.mu.shape() != (k, p)
            || self.pi.len() != k
            || self.omega.iter().any(|o| o.shape() != (p, p))
        {
            return Err(Error::DimensionMismatch("inconsistent parameter shapes".into()));
        }
        for (kk, &tau) in self.tau.iter().enumerate() {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::NonPositivePrecision { k: kk, value: tau });
            }
        }
        for (kk, o) in self.omega.iter().enumerate() {
            if crate::linalg::min_eigenvalue(o) <= 0.0 {
                return Err(Error::NotPositiveDefinite { k: kk });
            }
        }
        if self.pi.iter().any(|&w| w < 0.0) || (self.pi.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidHyperparams("mixture weights off the simplex".into()));
        }
        Ok(())
    }
}

/// Native-scale coefficients `beta / tau` (K x p) and intercepts `beta0 / tau`.
pub fn native_coefficients(params: &ModelParams) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = params.k();
    for kk in 0..k {
        let tau = params.tau[kk];
        if !(tau > 0.0) {
            return Err(Error::NonPositivePrecision { k: kk, value: tau });
        }
    }
    let beta = DMatrix::from_fn(k, params.p(), |i, j| params.beta[(i, j)] / params.tau[i]);
    let beta0 = DVector::from_fn(k, |i, _| params.beta0[i] / params.tau[i]);
    Ok((beta, beta0))
}

/// E-step output.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// n x K posterior membership probabilities.
    pub rho: DMatrix<f64>,
    /// Per subgroup, p x p symmetric slab probabilities (diagonal unused, zero).
    pub q: Vec<DMatrix<f64>>,
    /// n x K conditional mean of the latent log survival time.
    pub zhat: DMatrix<f64>,
    /// n x K conditional second moment of the latent log survival time.
    pub z2hat: DMatrix<f64>,
}

impl Responsibilities {
    /// Effective subgroup sizes (column sums of `rho`).
    pub fn counts(&self) -> DVector<f64> {
        DVector::from_fn(self.rho.ncols(), |k, _| self.rho.column(k).sum())
    }
}

/// Upper-triangle index pair `(j, l)` with `j < l`.
pub type Edge = (usize, usize);

/// Per-iteration diagnostics of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Surrogate (expected complete-data log-posterior with the similarity
    /// Laplacian frozen) before and after each M-step.
    pub surrogate: Vec<(f64, f64)>,
    /// Smallest eigenvalue over every precision iterate visited by the inner
    /// solver during each EM iteration.
    pub min_eigenvalue: Vec<f64>,
    /// Inner solver iterations per EM iteration.
    pub admm_iterations: Vec<usize>,
    /// Set when the run stopped because a subgroup emptied out.
    pub degenerate: bool,
}

/// Outcome of a complete fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// MAP estimate.
    pub map: ModelParams,
    /// Thresholded estimate (shares `tau`, `pi`, `beta0` and the precision
    /// diagonals with `map`).
    pub thresholded: ModelParams,
    /// Per subgroup p x p posterior inclusion probabilities; the diagonal is
    /// `NaN` (not an edge).
    pub pip: Vec<DMatrix<f64>>,
    pub edges: Vec<Vec<Edge>>,
    /// Hard subgroup labels, zero-based.
    pub memberships: Vec<usize>,
    pub bic: f64,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the start that produced this fit.
    pub start: usize,
    pub diagnostics: FitDiagnostics,
    /// Copied from the dataset when the fit ran on standardized predictors.
    pub standardization: Option<Standardization>,
}

impl FitResult {
    /// Number of nonzero sparse parameters of the thresholded estimate:
    /// coefficients, means and called edges, each counted per subgroup.
    pub fn sparse_count(&self) -> usize {
        let nz = |m: &DMatrix<f64>| m.iter().filter(|v| **v != 0.0).count();
        nz(&self.thresholded.beta)
            + nz(&self.thresholded.mu)
            + self.edges.iter().map(Vec::len).sum::<usize>()
    }

    /// MAP precision matrices on the scale of the original predictors.
    pub fn raw_precisions(&self) -> Vec<DMatrix<f64>> {
        match &self.standardization {
            Some(s) => self.map.omega.iter().map(|o| s.precision_to_raw(o)).collect(),
            None => self.map.omega.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(beta: &[&[f64]], tau: &[f64]) -> ModelParams {
        let k = beta.len();
        let p = beta[0].len();
        ModelParams {
            beta0: DVector::zeros(k),
            beta: DMatrix::from_fn(k, p, |i, j| beta[i][j]),
            tau: DVector::from_column_slice(tau),
            mu: DMatrix::zeros(k, p),
            omega: vec![DMatrix::identity(p, p); k],
            pi: DVector::from_element(k, 1.0 / k as f64),
        }
    }

    #[test]
    fn minimal_dataset_is_valid() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let d = Dataset::new(vec![0.1, 0.2], vec![1, 0], x).unwrap();
        assert_eq!((d.n(), d.p()), (2, 1));
    }

    #[test]
    fn indicator_outside_zero_one_is_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let err = Dataset::new(vec![0.1, 0.2], vec![1, 2], x).unwrap_err();
        assert!(matches!(err, Error::InvalidIndicator { index: 1, .. }));
    }

    #[test]
    fn non_finite_predictor_is_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let err = Dataset::new(vec![0.1, 0.2], vec![1, 0], x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "predictor matrix", .. }));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let err = Dataset::new(vec![0.1], vec![1, 0], x).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn native_coefficients_divide_by_tau() {
        let (b, _) = native_coefficients(&params_with(&[&[2.0, 0.0]], &[2.0])).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);

        let (b, _) = native_coefficients(&params_with(&[&[0.0, 0.0]], &[3.7])).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));

        let (b, _) = native_coefficients(&params_with(&[&[3.0, -3.0]], &[1.5])).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, -2.0]);
    }

    #[test]
    fn native_coefficients_reject_nonpositive_tau() {
        let err = native_coefficients(&params_with(&[&[1.0]], &[0.0])).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrecision { k: 0, .. }));
    }

    #[test]
    fn hyperparams_require_slab_wider_than_spike() {
        let mut h = Hyperparams::default_for(100, 10);
        h.validate().unwrap();
        h.v0 = 2.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn standardization_round_trips_precision_scale() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 60.0]);
        let d = Dataset::new(vec![0.0; 3], vec![1; 3], x).unwrap().standardized();
        for j in 0..2 {
            let col = d.x.column(j);
            assert!(col.sum().abs() < 1e-12);
            assert!((col.norm_squared() / 3.0 - 1.0).abs() < 1e-12);
        }
        let s = d.standardization.unwrap();
        let raw = s.precision_to_raw(&DMatrix::identity(2, 2));
        assert!((raw[(0, 0)] * s.sd[0] * s.sd[0] - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn native_round_trip(b in prop::collection::vec(-50.0f64..50.0, 1..6), tau in 0.01f64..100.0) {
                let params = params_with(&[&b], &[tau]);
                let (native, _) = native_coefficients(&params).unwrap();
                for (j, v) in b.iter().enumerate() {
                    let back = native[(0, j)] * tau;
                    prop_assert!((back - v).abs() <= 4.0 * f64::EPSILON * v.abs().max(1.0));
                }
            }
        }
    }
}
