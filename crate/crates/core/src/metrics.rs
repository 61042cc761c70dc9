//! Evaluation against a known truth: clustering error, precision-matrix
//! squared error and support recovery rates, all under one label alignment.

use nalgebra::DMatrix;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Edge, FitResult};
use crate::simgen::Truth;

/// Largest label count handled by exhaustive permutation search.
pub const MAX_PERMUTATION_LABELS: usize = 8;

fn n_labels(v: &[usize]) -> usize {
    v.iter().max().map_or(0, |m| m + 1)
}

/// `c[e][t]` = number of subjects with estimated label `e` and true label `t`.
fn confusion(est: &[usize], truth: &[usize], size: usize) -> Vec<Vec<i64>> {
    let mut c = vec![vec![0i64; size]; size];
    for (&e, &t) in est.iter().zip(truth) {
        c[e][t] += 1;
    }
    c
}

fn check_lengths(est: &[usize], truth: &[usize]) -> Result<()> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated labels vs {} true labels",
            est.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Visits every permutation of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        f(&perm);
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Best relabeling by exhaustive search: `perm[t]` is the estimated label
/// matched to true label `t`. Returns it with the number of matched subjects.
fn best_permutation(est: &[usize], truth: &[usize]) -> Result<(Vec<usize>, i64)> {
    check_lengths(est, truth)?;
    let size = n_labels(est).max(n_labels(truth));
    if size > MAX_PERMUTATION_LABELS {
        return Err(Error::TooManyLabels(size));
    }
    let c = confusion(est, truth, size);
    let mut best = (Vec::new(), -1);
    for_each_permutation(size, |perm| {
        let hits: i64 = (0..size).map(|t| c[perm[t]][t]).sum();
        if hits > best.1 {
            best = (perm.to_vec(), hits);
        }
    });
    Ok(best)
}

/// Smallest misclassified fraction over all relabelings of the estimate.
/// Labels are zero-based; at most eight distinct labels.
pub fn clustering_error(est: &[usize], truth: &[usize]) -> Result<f64> {
    let (_, hits) = best_permutation(est, truth)?;
    Ok(1.0 - hits as f64 / est.len() as f64)
}

/// Assignment-based clustering error for any number of labels.
pub fn clustering_error_hungarian(est: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(est, truth)?;
    let size = n_labels(est).max(n_labels(truth));
    let c = confusion(est, truth, size);
    let weights = Matrix::from_rows(c).expect("square confusion matrix");
    let (hits, _) = kuhn_munkres(&weights);
    Ok(1.0 - hits as f64 / est.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMethod {
    /// Relabeling minimizing the clustering error.
    Labels,
    /// Relabeling minimizing the precision-matrix error.
    Parameters,
}

/// Matching of true subgroups to estimated ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `est_for_truth[t]` is the estimated subgroup matched to true subgroup
    /// `t`, or `None` when the estimate has fewer subgroups.
    pub est_for_truth: Vec<Option<usize>>,
    pub method: AlignmentMethod,
}

impl Alignment {
    pub fn identity(k: usize) -> Self {
        Alignment { est_for_truth: (0..k).map(Some).collect(), method: AlignmentMethod::Labels }
    }
}

/// Alignment from the CE-optimal relabeling.
pub fn align_by_labels(est: &[usize], truth: &[usize], k_est: usize, k_true: usize) -> Result<Alignment> {
    let (perm, _) = best_permutation(est, truth)?;
    let est_for_truth = (0..k_true)
        .map(|t| perm.get(t).copied().filter(|&e| e < k_est))
        .collect();
    Ok(Alignment { est_for_truth, method: AlignmentMethod::Labels })
}

fn squared_distance(a: Option<&DMatrix<f64>>, b: &DMatrix<f64>) -> Result<f64> {
    match a {
        Some(a) if a.shape() != b.shape() => Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?} precision matrix",
            a.shape(),
            b.shape()
        ))),
        Some(a) => Ok((a - b).norm_squared()),
        None => Ok(b.norm_squared()),
    }
}

/// Alignment minimizing the summed precision-matrix squared error, for use
/// when no true labels are available.
pub fn align_by_parameters(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<Alignment> {
    let size = est.len().max(truth.len());
    if size > MAX_PERMUTATION_LABELS {
        return Err(Error::TooManyLabels(size));
    }
    let mut cost = vec![vec![0.0; size]; size];
    for (t, tm) in truth.iter().enumerate() {
        for (e, row) in cost.iter_mut().enumerate() {
            row[t] = squared_distance(est.get(e), tm)?;
        }
    }
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::INFINITY);
    for_each_permutation(size, |perm| {
        let v: f64 = (0..truth.len()).map(|t| cost[perm[t]][t]).sum();
        if v < best.1 {
            best = (perm.to_vec(), v);
        }
    });
    let est_for_truth = (0..truth.len())
        .map(|t| Some(best.0[t]).filter(|&e| e < est.len()))
        .collect();
    Ok(Alignment { est_for_truth, method: AlignmentMethod::Parameters })
}

/// `sum_t |Omega_hat_{a(t)} - Omega*_t|_F^2`; an unmatched true subgroup is
/// compared against the zero matrix.
pub fn precision_matrix_error(est: &[DMatrix<f64>], truth: &[DMatrix<f64>], a: &Alignment) -> Result<f64> {
    if a.est_for_truth.len() != truth.len() {
        return Err(Error::DimensionMismatch("alignment does not cover the truth".into()));
    }
    let mut total = 0.0;
    for (t, tm) in truth.iter().enumerate() {
        let e = a.est_for_truth[t].map(|e| est.get(e)).unwrap_or(None);
        total += squared_distance(e, tm)?;
    }
    Ok(total)
}

/// Pooled true and false positive rates of the called edges over all true
/// subgroups and upper-triangle pairs of a `p`-node graph.
pub fn support_rates(
    est_edges: &[Vec<Edge>],
    true_edges: &[Vec<Edge>],
    a: &Alignment,
    p: usize,
) -> Result<(f64, f64)> {
    if a.est_for_truth.len() != true_edges.len() {
        return Err(Error::DimensionMismatch("alignment does not cover the truth".into()));
    }
    let (mut tp, mut fp, mut positives) = (0usize, 0usize, 0usize);
    let empty = Vec::new();
    for (t, truth) in true_edges.iter().enumerate() {
        let called = a.est_for_truth[t].and_then(|e| est_edges.get(e)).unwrap_or(&empty);
        let truth: std::collections::BTreeSet<Edge> = truth.iter().map(|&(j, l)| (j.min(l), j.max(l))).collect();
        positives += truth.len();
        for &(j, l) in called {
            if truth.contains(&(j.min(l), j.max(l))) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    if positives == 0 {
        return Err(Error::EmptyTruth);
    }
    let pairs = true_edges.len() * p * (p - 1) / 2;
    let negatives = pairs - positives;
    let fpr = if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 };
    Ok((tp as f64 / positives as f64, fpr))
}

/// One row of an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ce: f64,
    pub pme: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// CE, PME (on the raw predictor scale) and edge rates of a fit, all under the
/// CE-optimal alignment.
pub fn evaluate(fit: &FitResult, truth: &Truth) -> Result<Metrics> {
    let k_est = fit.map.k();
    let k_true = truth.omega.len();
    let ce = if k_est.max(k_true) <= MAX_PERMUTATION_LABELS {
        clustering_error(&fit.memberships, &truth.labels)?
    } else {
        clustering_error_hungarian(&fit.memberships, &truth.labels)?
    };
    let align = align_by_labels(&fit.memberships, &truth.labels, k_est, k_true)?;
    let pme = precision_matrix_error(&fit.raw_precisions(), &truth.omega, &align)?;
    let (tpr, fpr) = support_rates(&fit.edges, &truth.adjacency, &align, truth.beta.ncols())?;
    Ok(Metrics { ce, pme, tpr, fpr })
}

/// Column means and sample standard deviations (zero for a single row).
pub fn summarize(rows: &[Metrics]) -> Option<(Metrics, Metrics)> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let pick = |f: fn(&Metrics) -> f64| -> (f64, f64) {
        let mean = rows.iter().map(f).sum::<f64>() / n;
        let sd = if rows.len() > 1 {
            (rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, sd)
    };
    let (ce, pme, tpr, fpr) = (pick(|r| r.ce), pick(|r| r.pme), pick(|r| r.tpr), pick(|r| r.fpr));
    Some((
        Metrics { ce: ce.0, pme: pme.0, tpr: tpr.0, fpr: fpr.0 },
        Metrics { ce: ce.1, pme: pme.1, tpr: tpr.1, fpr: fpr.1 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ce_examples() {
        assert_eq!(clustering_error(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(clustering_error(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(clustering_error(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.25);
        assert!(matches!(clustering_error(&[9, 0], &[0, 0]), Err(Error::TooManyLabels(10))));
        assert_eq!(clustering_error_hungarian(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.25);
    }

    #[test]
    fn permutations_are_exhaustive() {
        let mut count = 0;
        for_each_permutation(4, |_| count += 1);
        assert_eq!(count, 24);
    }

    #[test]
    fn pme_with_symmetric_perturbation() {
        let truth = vec![DMatrix::<f64>::identity(3, 3)];
        let mut est = truth.clone();
        est[0][(0, 2)] += 0.5;
        est[0][(2, 0)] += 0.5;
        let a = Alignment::identity(1);
        assert_abs_diff_eq!(precision_matrix_error(&est, &truth, &a).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(precision_matrix_error(&truth, &truth, &a).unwrap(), 0.0);
    }

    #[test]
    fn rates_examples() {
        let truth = vec![vec![(0, 1), (1, 2)]];
        let a = Alignment::identity(1);
        assert_eq!(support_rates(&truth, &truth, &a, 3).unwrap(), (1.0, 0.0));
        assert_eq!(support_rates(&[vec![]], &truth, &a, 3).unwrap(), (0.0, 0.0));
        assert!(matches!(support_rates(&[vec![]], &[vec![]], &a, 3), Err(Error::EmptyTruth)));
    }

    #[test]
    fn missing_estimated_group_counts_as_empty() {
        let a = align_by_labels(&[0, 0, 0, 0], &[0, 0, 1, 1], 1, 2).unwrap();
        assert_eq!(a.est_for_truth, vec![Some(0), None]);
        let truth = vec![DMatrix::<f64>::identity(2, 2); 2];
        let pme = precision_matrix_error(&truth[..1], &truth, &a).unwrap();
        assert_eq!(pme, 2.0);
    }

    #[test]
    fn parameter_alignment_recovers_swap() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 2.0]);
        let al = align_by_parameters(&[b.clone(), a.clone()], &[a, b]).unwrap();
        assert_eq!(al.est_for_truth, vec![Some(1), Some(0)]);
        assert_eq!(al.method, AlignmentMethod::Parameters);
    }

    #[test]
    fn summary_of_two_rows() {
        let r1 = Metrics { ce: 0.0, pme: 1.0, tpr: 0.8, fpr: 0.1 };
        let r2 = Metrics { ce: 0.2, pme: 3.0, tpr: 1.0, fpr: 0.0 };
        let (m, s) = summarize(&[r1, r2]).unwrap();
        assert_abs_diff_eq!(m.pme, 2.0);
        assert_abs_diff_eq!(s.pme, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.tpr, 0.9, epsilon = 1e-15);
    }
}
