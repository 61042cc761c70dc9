//! File formats: headerless predictor CSV, two-column survival CSV, JSON
//! result/truth/config files and CSV reports.
//!
//! Subgroup memberships and truth labels are written one-based; predictor
//! indices (edges, PIP positions) are zero-based column indices.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::{Dataset, Edge, FitDiagnostics, FitResult, Hyperparams, ModelParams, Standardization};
use crate::selection::SelectionRow;
use crate::simgen::Truth;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(f))
}

fn records(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "file has no rows"));
    }
    Ok(out)
}

fn number(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("'{field}' is not finite")));
    }
    Ok(v)
}

/// Headerless numeric CSV, one subject per row.
pub fn read_predictors(path: &Path) -> Result<DMatrix<f64>> {
    let rows = records(path)?;
    let p = rows[0].1.len();
    let mut data = Vec::with_capacity(rows.len() * p);
    for (line, fields) in &rows {
        if fields.len() != p {
            return Err(parse_err(path, *line, format!("expected {p} columns, found {}", fields.len())));
        }
        for f in fields {
            data.push(number(path, *line, f)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), p, &data))
}

/// Two-column CSV of log observed time and event indicator (0 or 1).
pub fn read_survival(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let rows = records(path)?;
    let mut t = Vec::with_capacity(rows.len());
    let mut delta = Vec::with_capacity(rows.len());
    for (line, fields) in &rows {
        if fields.len() != 2 {
            return Err(parse_err(path, *line, format!("expected 2 columns, found {}", fields.len())));
        }
        t.push(number(path, *line, &fields[0])?);
        delta.push(match fields[1].as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(path, *line, format!("censoring indicator '{other}' is not 0 or 1"))),
        });
    }
    Ok((t, delta))
}

pub fn load_dataset(x_path: &Path, surv_path: &Path) -> Result<Dataset> {
    let x = read_predictors(x_path)?;
    let (t, delta) = read_survival(surv_path)?;
    if t.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows but {} has {}",
            x_path.display(),
            x.nrows(),
            surv_path.display(),
            t.len()
        )));
    }
    Dataset::new(t, delta, x)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn write_predictors(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    for i in 0..x.nrows() {
        let line: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_survival(path: &Path, t: &DVector<f64>, delta: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    for (v, d) in t.iter().zip(delta) {
        writeln!(w, "{v},{d}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("ragged {what}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub beta0: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub omega: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<f64>,
}

impl ParamsFile {
    pub fn from_params(p: &ModelParams) -> Self {
        ParamsFile {
            beta0: p.beta0.iter().copied().collect(),
            beta: rows_of(&p.beta),
            tau: p.tau.iter().copied().collect(),
            mu: rows_of(&p.mu),
            omega: p.omega.iter().map(rows_of).collect(),
            pi: p.pi.iter().copied().collect(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let omega = self.omega.iter().map(|o| from_rows(o, "precision matrix")).collect::<Result<Vec<_>>>()?;
        let p = ModelParams {
            beta0: DVector::from_column_slice(&self.beta0),
            beta: from_rows(&self.beta, "coefficients")?,
            tau: DVector::from_column_slice(&self.tau),
            mu: from_rows(&self.mu, "means")?,
            omega,
            pi: DVector::from_column_slice(&self.pi),
        };
        let k = p.k();
        if p.beta0.len() != k || p.beta.nrows() != k || p.tau.len() != k || p.mu.nrows() != k || p.pi.len() != k {
            return Err(Error::DimensionMismatch("parameter blocks disagree on K".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub surrogate_before: Vec<f64>,
    pub surrogate_after: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    pub admm_iterations: Vec<usize>,
    pub degenerate: bool,
}

/// Serialized [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub k: usize,
    pub p: usize,
    pub converged: bool,
    pub iterations: usize,
    pub start: usize,
    pub bic: f64,
    /// One-based.
    pub memberships: Vec<usize>,
    pub edges: Vec<Vec<Edge>>,
    /// Per subgroup, PIPs of the pairs `(0,1), (0,2), ..., (p-2,p-1)`.
    pub pip: Vec<Vec<f64>>,
    pub map: ParamsFile,
    pub thresholded: ParamsFile,
    pub objective_trace: Vec<f64>,
    pub diagnostics: DiagnosticsFile,
    pub standardization: Option<Standardization>,
}

impl ResultFile {
    pub fn from_fit(fit: &FitResult) -> Self {
        let p = fit.map.p();
        let pip = fit
            .pip
            .iter()
            .map(|m| {
                let mut v = Vec::with_capacity(p * p.saturating_sub(1) / 2);
                for j in 0..p {
                    for l in (j + 1)..p {
                        v.push(m[(j, l)]);
                    }
                }
                v
            })
            .collect();
        ResultFile {
            k: fit.map.k(),
            p,
            converged: fit.converged,
            iterations: fit.iterations,
            start: fit.start,
            bic: fit.bic,
            memberships: fit.memberships.iter().map(|g| g + 1).collect(),
            edges: fit.edges.clone(),
            pip,
            map: ParamsFile::from_params(&fit.map),
            thresholded: ParamsFile::from_params(&fit.thresholded),
            objective_trace: fit.objective_trace.clone(),
            diagnostics: DiagnosticsFile {
                surrogate_before: fit.diagnostics.surrogate.iter().map(|s| s.0).collect(),
                surrogate_after: fit.diagnostics.surrogate.iter().map(|s| s.1).collect(),
                min_eigenvalue: fit.diagnostics.min_eigenvalue.clone(),
                admm_iterations: fit.diagnostics.admm_iterations.clone(),
                degenerate: fit.diagnostics.degenerate,
            },
            standardization: fit.standardization.clone(),
        }
    }

    pub fn to_fit(&self) -> Result<FitResult> {
        let p = self.p;
        let pairs = p * p.saturating_sub(1) / 2;
        let mut pip = Vec::with_capacity(self.pip.len());
        for v in &self.pip {
            if v.len() != pairs {
                return Err(Error::DimensionMismatch(format!("PIP list has {} entries, expected {pairs}", v.len())));
            }
            let mut m = DMatrix::from_element(p, p, f64::NAN);
            let mut it = v.iter();
            for j in 0..p {
                for l in (j + 1)..p {
                    let x = *it.next().unwrap();
                    m[(j, l)] = x;
                    m[(l, j)] = x;
                }
            }
            pip.push(m);
        }
        if self.memberships.contains(&0) {
            return Err(Error::DimensionMismatch("memberships are one-based".into()));
        }
        let d = &self.diagnostics;
        Ok(FitResult {
            map: self.map.to_params()?,
            thresholded: self.thresholded.to_params()?,
            pip,
            edges: self.edges.clone(),
            memberships: self.memberships.iter().map(|g| g - 1).collect(),
            bic: self.bic,
            objective_trace: self.objective_trace.clone(),
            converged: self.converged,
            iterations: self.iterations,
            start: self.start,
            diagnostics: FitDiagnostics {
                surrogate: d.surrogate_before.iter().copied().zip(d.surrogate_after.iter().copied()).collect(),
                min_eigenvalue: d.min_eigenvalue.clone(),
                admm_iterations: d.admm_iterations.clone(),
                degenerate: d.degenerate,
            },
            standardization: self.standardization.clone(),
        })
    }
}

/// Serialized [`Truth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    /// One-based.
    pub labels: Vec<usize>,
    pub omega: Vec<Vec<Vec<f64>>>,
    pub adjacency: Vec<Vec<Edge>>,
    pub beta: Vec<Vec<f64>>,
    pub tau: f64,
    pub censoring_scale: Option<f64>,
}

impl TruthFile {
    pub fn from_truth(t: &Truth) -> Self {
        TruthFile {
            labels: t.labels.iter().map(|g| g + 1).collect(),
            omega: t.omega.iter().map(rows_of).collect(),
            adjacency: t.adjacency.clone(),
            beta: rows_of(&t.beta),
            tau: t.tau,
            censoring_scale: t.censoring_scale,
        }
    }

    pub fn to_truth(&self) -> Result<Truth> {
        if self.labels.contains(&0) {
            return Err(Error::DimensionMismatch("truth labels are one-based".into()));
        }
        Ok(Truth {
            labels: self.labels.iter().map(|g| g - 1).collect(),
            omega: self.omega.iter().map(|o| from_rows(o, "precision matrix")).collect::<Result<_>>()?,
            adjacency: self.adjacency.clone(),
            beta: from_rows(&self.beta, "coefficients")?,
            tau: self.tau,
            censoring_scale: self.censoring_scale,
        })
    }
}

/// Hyperparameter overrides; unset fields take the data-dependent defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub tau0: Option<f64>,
    pub v0: Option<f64>,
    pub v1: Option<f64>,
    pub p1: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub u: Option<f64>,
    pub eps: Option<f64>,
}

impl HyperOverrides {
    pub fn apply(&self, mut h: Hyperparams) -> Hyperparams {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut h.tau0, self.tau0);
        set(&mut h.v0, self.v0);
        set(&mut h.v1, self.v1);
        set(&mut h.p1, self.p1);
        set(&mut h.lambda1, self.lambda1);
        set(&mut h.lambda2, self.lambda2);
        set(&mut h.u, self.u);
        set(&mut h.eps, self.eps);
        h
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub hyperparams: HyperOverrides,
    pub em: EmConfig,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|source| Error::Json { path: path.display().to_string(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| Error::Json { path: path.display().to_string(), source })?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn save_result(path: &Path, fit: &FitResult) -> Result<()> {
    write_json(path, &ResultFile::from_fit(fit))
}

pub fn load_result(path: &Path) -> Result<FitResult> {
    read_json::<ResultFile>(path)?.to_fit()
}

pub fn save_truth(path: &Path, truth: &Truth) -> Result<()> {
    write_json(path, &TruthFile::from_truth(truth))
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    read_json::<TruthFile>(path)?.to_truth()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_fail(path: &Path, e: csv::Error) -> Error {
    parse_err(path, 0, e.to_string())
}

pub fn write_selection_table(path: &Path, rows: &[SelectionRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Metrics report with a leading label column (`replicate name`, `mean`, `sd`).
pub fn write_metrics(path: &Path, rows: &[(String, Metrics)]) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_metrics_to(f, rows).map_err(|e| match e {
        Error::Io { source, .. } => io_err(path, source),
        Error::Parse { message, .. } => parse_err(path, 0, message),
        other => other,
    })
}

/// As [`write_metrics`], to any writer.
pub fn write_metrics_to<W: std::io::Write>(out: W, rows: &[(String, Metrics)]) -> Result<()> {
    let here = Path::new("<metrics>");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "ce", "pme", "tpr", "fpr"]).map_err(|e| csv_fail(here, e))?;
    for (label, m) in rows {
        w.write_record([label.clone(), m.ce.to_string(), m.pme.to_string(), m.tpr.to_string(), m.fpr.to_string()])
            .map_err(|e| csv_fail(here, e))?;
    }
    w.flush().map_err(|e| io_err(here, e))
}

/// Per-iteration objective, surrogate and solver diagnostics.
pub fn write_trace(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "objective", "surrogate_before", "surrogate_after", "min_eigenvalue", "admm_iterations"])
        .map_err(|e| csv_fail(path, e))?;
    let d = &fit.diagnostics;
    for (it, obj) in fit.objective_trace.iter().enumerate() {
        let (sb, sa, me, ai) = if it == 0 {
            (String::new(), String::new(), String::new(), String::new())
        } else {
            let s = d.surrogate.get(it - 1);
            (
                s.map_or(String::new(), |s| s.0.to_string()),
                s.map_or(String::new(), |s| s.1.to_string()),
                d.min_eigenvalue.get(it - 1).map_or(String::new(), |v| v.to_string()),
                d.admm_iterations.get(it - 1).map_or(String::new(), |v| v.to_string()),
            )
        };
        w.write_record([it.to_string(), obj.to_string(), sb, sa, me, ai]).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
