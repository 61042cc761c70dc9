//! Post-processing of a MAP fit (thresholding, inclusion probabilities, edge
//! calls, BIC) and grid search over `K`, `v0` and `u`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{self, e_step, EmConfig, EmRun, RunObserver, ThresholdMode};
use crate::error::{Error, Result};
use crate::likelihood::{log_likelihood, slab_probability};
use crate::model::{Dataset, Edge, FitResult, Hyperparams, ModelParams};
use crate::parallel::map_indexed;

/// Threshold level `c sqrt(K^3 log p / n)`.
pub fn threshold_level(n: usize, p: usize, k: usize, c: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    c * ((k as f64).powi(3) * (p as f64).ln() / n as f64).sqrt()
}

fn zero_small(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    m.map(|v| if v.abs() <= t { 0.0 } else { v })
}

/// Zeroes entries of `beta` and `mu` with absolute value at most `t`.
pub fn threshold_sparse(map: &ModelParams, t: f64) -> ModelParams {
    ModelParams {
        beta: zero_small(&map.beta, t),
        mu: zero_small(&map.mu, t),
        ..map.clone()
    }
}

/// Zeroes entries of `beta`, `mu` and the off-diagonal precision entries with
/// absolute value at most `c sqrt(K^3 log p / n)`.
pub fn threshold_estimate(map: &ModelParams, c: f64, n: usize) -> ModelParams {
    let t = threshold_level(n, map.p(), map.k(), c);
    let mut out = threshold_sparse(map, t);
    for o in out.omega.iter_mut() {
        let p = o.nrows();
        for l in 0..p {
            for j in 0..p {
                if j != l && o[(j, l)].abs() <= t {
                    o[(j, l)] = 0.0;
                }
            }
        }
    }
    out
}

/// Posterior inclusion probabilities of every off-diagonal entry; `NaN` on the
/// diagonal.
pub fn compute_pip(omega: &[DMatrix<f64>], h: &Hyperparams) -> Vec<DMatrix<f64>> {
    omega
        .iter()
        .map(|o| {
            let p = o.nrows();
            DMatrix::from_fn(p, p, |j, l| if j == l { f64::NAN } else { slab_probability(o[(j, l)], h) })
        })
        .collect()
}

/// Upper-triangle pairs whose PIP strictly exceeds `a`.
pub fn call_edges(pip: &[DMatrix<f64>], a: f64) -> Vec<Vec<Edge>> {
    pip.iter()
        .map(|m| {
            let p = m.nrows();
            let mut edges = Vec::new();
            for j in 0..p {
                for l in (j + 1)..p {
                    if m[(j, l)] > a {
                        edges.push((j, l));
                    }
                }
            }
            edges
        })
        .collect()
}

/// `-2 log L(thresholded) + log(n) * S`, with `S` the sparse count of the fit.
pub fn bic(d: &Dataset, fit: &FitResult) -> Result<f64> {
    let ll = log_likelihood(d, &fit.thresholded)?;
    Ok(-2.0 * ll + (d.n() as f64).ln() * fit.sparse_count() as f64)
}

/// Turns a finished EM run into a [`FitResult`].
pub fn finalize(d: &Dataset, run: EmRun, start: usize, h: &Hyperparams, cfg: &EmConfig) -> Result<FitResult> {
    let map = run.params;
    let thresholded = match cfg.threshold_mode {
        ThresholdMode::PipOnly => {
            threshold_sparse(&map, threshold_level(d.n(), map.p(), map.k(), cfg.threshold_c))
        }
        ThresholdMode::Full => threshold_estimate(&map, cfg.threshold_c, d.n()),
    };
    let pip = compute_pip(&thresholded.omega, h);
    let edges = call_edges(&pip, cfg.pip_level);
    let memberships = em::memberships(&e_step(d, &map, h)?);
    let mut fit = FitResult {
        map,
        thresholded,
        pip,
        edges,
        memberships,
        bic: f64::NAN,
        objective_trace: run.trace,
        converged: run.converged,
        iterations: run.iterations,
        start,
        diagnostics: run.diagnostics,
        standardization: d.standardization.clone(),
    };
    fit.bic = bic(d, &fit)?;
    Ok(fit)
}

/// One grid point of a model search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub v0: f64,
    pub u: f64,
    /// `NaN` when the fit failed.
    pub bic: f64,
    pub sparse_count: usize,
    pub converged: bool,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best: FitResult,
    /// Index of the winning row in `table`.
    pub best_row: usize,
    /// Rows ordered by `K`, then `v0`, then `u`, each in grid order.
    pub table: Vec<SelectionRow>,
    /// The fit behind each row of `table`; `None` where it failed.
    pub fits: Vec<Option<FitResult>>,
}

/// Fits every grid point and returns the minimum-BIC fit. For each `K` one
/// multi-start fit runs at the largest `v0` and smallest `u`. Every `(K, u)`
/// chain starts from that fit and then visits `v0` from largest to smallest,
/// warm-starting each fit from the previous one's MAP. Ties are
/// broken by the smaller sparse count, then the smaller `K`.
pub fn select_model(
    d: &Dataset,
    k_grid: &[usize],
    v0_grid: &[f64],
    u_grid: &[f64],
    h_base: &Hyperparams,
    cfg: &EmConfig,
) -> Result<Selection> {
    select_model_observed(d, k_grid, v0_grid, u_grid, h_base, cfg, None)
}

/// [`select_model`] with an optional observer of every EM run.
pub fn select_model_observed(
    d: &Dataset,
    k_grid: &[usize],
    v0_grid: &[f64],
    u_grid: &[f64],
    h_base: &Hyperparams,
    cfg: &EmConfig,
    observer: Option<RunObserver>,
) -> Result<Selection> {
    if k_grid.is_empty() || v0_grid.is_empty() || u_grid.is_empty() {
        return Err(Error::InvalidConfig("selection grids must be nonempty".into()));
    }
    let inner = EmConfig { jobs: 1, ..*cfg };
    // A narrow spike pins edges that start at zero, so dense fits make the
    // better warm starts.
    let mut order: Vec<usize> = (0..v0_grid.len()).collect();
    order.sort_by(|&a, &b| v0_grid[b].total_cmp(&v0_grid[a]));
    let u_first = (0..u_grid.len()).min_by(|&a, &b| u_grid[a].total_cmp(&u_grid[b])).expect("nonempty grid");

    // One multi-start fit per K at the widest spike and the weakest coupling;
    // every chain of that K starts from it.
    let seeds = map_indexed(cfg.jobs, k_grid.len(), |ki| {
        let h = Hyperparams { v0: v0_grid[order[0]], u: u_grid[u_first], ..*h_base };
        em::fit_observed(d, k_grid[ki], &h, &inner, observer)
    });

    let chains: Vec<(usize, usize)> =
        (0..k_grid.len()).flat_map(|ki| (0..u_grid.len()).map(move |ui| (ki, ui))).collect();
    let results = map_indexed(cfg.jobs, chains.len(), |c| {
        let (ki, ui) = chains[c];
        let (k, u) = (k_grid[ki], u_grid[ui]);
        let mut prev: Option<ModelParams> = None;
        let mut out: Vec<Option<Result<FitResult>>> = (0..v0_grid.len()).map(|_| None).collect();
        for (step, &vi) in order.iter().enumerate() {
            let v0 = v0_grid[vi];
            let h = Hyperparams { v0, u, ..*h_base };
            let res = match (&prev, step, &seeds[ki]) {
                (_, 0, Ok(seed)) if ui == u_first => Ok(seed.clone()),
                (_, 0, Ok(seed)) => em::fit_from_observed(d, &seed.map, &h, &inner, observer),
                (Some(init), _, _) => em::fit_from_observed(d, init, &h, &inner, observer),
                (None, _, _) => em::fit_observed(d, k, &h, &inner, observer),
            };
            match &res {
                Ok(f) => prev = Some(f.map.clone()),
                Err(e) => {
                    log::info!("fit K={k} v0={v0} u={u} failed: {e}");
                    prev = None;
                }
            }
            out[vi] = Some(res);
        }
        out
    });

    let mut slots: Vec<Vec<Option<Result<FitResult>>>> = results;
    let mut table = Vec::new();
    let mut fits: Vec<Option<FitResult>> = Vec::new();
    let ku = u_grid.len();
    for (ki, &k) in k_grid.iter().enumerate() {
        for (vi, &v0) in v0_grid.iter().enumerate() {
            for (ui, &u) in u_grid.iter().enumerate() {
                let res = slots[ki * ku + ui][vi].take().expect("each grid point is visited once");
                let row = SelectionRow {
                    k,
                    v0,
                    u,
                    bic: f64::NAN,
                    sparse_count: 0,
                    converged: false,
                    failed: true,
                };
                match res {
                    Ok(f) => {
                        table.push(SelectionRow {
                            bic: f.bic,
                            sparse_count: f.sparse_count(),
                            converged: f.converged,
                            failed: false,
                            ..row
                        });
                        fits.push(Some(f));
                    }
                    Err(_) => {
                        table.push(row);
                        fits.push(None);
                    }
                }
            }
        }
    }

    let best_row = best_row(&table).ok_or_else(|| Error::AllFitsFailed { table: table.clone() })?;
    let best = fits[best_row].clone().expect("winning row has a fit");
    Ok(Selection { best, best_row, table, fits })
}

/// Index of the minimum-BIC usable row with the documented tie-breaks.
pub fn best_row(table: &[SelectionRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in table.iter().enumerate() {
        if row.failed || !row.bic.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &table[b];
                (row.bic, row.sparse_count, row.k) < (cur.bic, cur.sparse_count, cur.k)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}
