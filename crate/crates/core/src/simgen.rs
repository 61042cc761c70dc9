//! Synthetic data: block-structured subgroup networks with partially shared
//! sparsity, Gaussian predictors, normal AFT outcomes and calibrated Gamma
//! censoring.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::em::start_rng;
use crate::error::{Error, Result};
use crate::model::{Dataset, Edge, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    PowerLaw,
    NearestNeighbor,
    ErdosRenyi,
}

impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power-law" => Ok(Topology::PowerLaw),
            "nearest-neighbor" => Ok(Topology::NearestNeighbor),
            "erdos-renyi" => Ok(Topology::ErdosRenyi),
            _ => Err(Error::InvalidDesign(format!(
                "unknown topology '{s}' (expected power-law, nearest-neighbor or erdos-renyi)"
            ))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::PowerLaw => "power-law",
            Topology::NearestNeighbor => "nearest-neighbor",
            Topology::ErdosRenyi => "erdos-renyi",
        })
    }
}

/// Number of shared subnetworks: 3, 5 or 7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    S1,
    S2,
    S3,
}

impl Setting {
    pub fn shared_subnets(self) -> usize {
        match self {
            Setting::S1 => 3,
            Setting::S2 => 5,
            Setting::S3 => 7,
        }
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" | "s1" => Ok(Setting::S1),
            "S2" | "s2" => Ok(Setting::S2),
            "S3" | "s3" => Ok(Setting::S3),
            _ => Err(Error::InvalidDesign(format!("unknown setting '{s}' (expected S1, S2 or S3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub k: usize,
    pub p: usize,
    pub sizes: Vec<usize>,
    pub topology: Topology,
    pub shared_subnets: usize,
    pub n_subnets: usize,
    /// Native-scale coefficient vector of each subgroup.
    pub betas: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub censoring_rate: f64,
    pub seed: u64,
    /// Preferential-attachment links per new node.
    pub attach_m: usize,
    /// Nearest neighbours linked per node.
    pub nn_m: usize,
    /// Erdos-Renyi edge probability.
    pub er_q: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    /// Added to each row's absolute off-diagonal sum to form the diagonal.
    pub diag_margin: f64,
    pub gamma_shape: f64,
    pub pilot_draws: usize,
}

/// Default coefficient vectors: `(2,2,2,2,2,0,...)`, its negation, and
/// `(0,0,1,1,1,1,1,0,...)`.
pub fn default_betas(k: usize, p: usize) -> Result<Vec<Vec<f64>>> {
    if k > 3 {
        return Err(Error::InvalidDesign(format!(
            "default coefficients exist for K <= 3, got K = {k}; supply betas explicitly"
        )));
    }
    let need = if k == 3 { 7 } else { 5 };
    if p < need {
        return Err(Error::InvalidDesign(format!("default coefficients need p >= {need}")));
    }
    let mut b1 = vec![0.0; p];
    b1[..5].fill(2.0);
    let b2: Vec<f64> = b1.iter().map(|v| -v).collect();
    let mut b3 = vec![0.0; p];
    b3[2..7].fill(1.0);
    Ok([b1, b2, b3].into_iter().take(k).collect())
}

impl SimDesign {
    /// Balanced design with 150 subjects per subgroup and the default
    /// coefficients.
    pub fn new(k: usize, p: usize, topology: Topology, setting: Setting, seed: u64) -> Result<Self> {
        let d = SimDesign {
            k,
            p,
            sizes: vec![150; k],
            topology,
            shared_subnets: setting.shared_subnets(),
            n_subnets: 10,
            betas: default_betas(k, p)?,
            noise_sd: 0.01,
            censoring_rate: 0.2,
            seed,
            attach_m: 1,
            nn_m: 2,
            er_q: 0.1,
            weight_low: 0.4,
            weight_high: 0.8,
            diag_margin: 0.1,
            gamma_shape: 2.0,
            pilot_draws: 100_000,
        };
        d.validate()?;
        Ok(d)
    }

    /// Imbalanced sizes: `(100, 200)` for two subgroups, `(100, 150, 200)` for three.
    pub fn imbalanced_sizes(k: usize) -> Option<Vec<usize>> {
        match k {
            2 => Some(vec![100, 200]),
            3 => Some(vec![100, 150, 200]),
            _ => None,
        }
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.n_subnets == 0 || !self.p.is_multiple_of(self.n_subnets) {
            return bad(format!("p = {} is not divisible by {} subnetworks", self.p, self.n_subnets));
        }
        if self.shared_subnets > self.n_subnets {
            return bad("more shared subnetworks than subnetworks".into());
        }
        if self.sizes.len() != self.k || self.sizes.contains(&0) {
            return bad(format!("need {} positive group sizes, got {:?}", self.k, self.sizes));
        }
        if self.betas.len() != self.k || self.betas.iter().any(|b| b.len() != self.p) {
            return bad(format!("need {} coefficient vectors of length {}", self.k, self.p));
        }
        if !(self.noise_sd > 0.0) {
            return bad("noise sd must be positive".into());
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad("censoring rate must lie in [0, 1)".into());
        }
        if !(self.weight_low > 0.0 && self.weight_high >= self.weight_low) {
            return bad("need 0 < weight_low <= weight_high".into());
        }
        if !(self.diag_margin > 0.0) {
            return bad("diagonal margin must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.er_q) {
            return bad("edge probability must lie in [0, 1]".into());
        }
        if !(self.gamma_shape > 0.0) || self.pilot_draws == 0 {
            return bad("need a positive Gamma shape and pilot size".into());
        }
        Ok(())
    }
}

/// Subgroup precision matrices with their exact upper-triangle supports.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub omega: Vec<DMatrix<f64>>,
    pub adjacency: Vec<Vec<Edge>>,
}

fn power_law_edges(m: usize, attach: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    if m < 2 {
        return edges;
    }
    let mut degree = vec![0usize; m];
    edges.push((0, 1));
    degree[0] = 1;
    degree[1] = 1;
    for v in 2..m {
        let links = attach.min(v);
        let mut chosen: Vec<usize> = Vec::with_capacity(links);
        while chosen.len() < links {
            let total: usize = (0..v).filter(|u| !chosen.contains(u)).map(|u| degree[u].max(1)).sum();
            let mut target = rng.random_range(0..total);
            for u in (0..v).filter(|u| !chosen.contains(u)) {
                let w = degree[u].max(1);
                if target < w {
                    chosen.push(u);
                    break;
                }
                target -= w;
            }
        }
        for u in chosen {
            edges.push((u, v));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    edges
}

fn nearest_neighbor_edges(m: usize, links: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let pts: Vec<(f64, f64)> = (0..m).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut adj = vec![vec![false; m]; m];
    for a in 0..m {
        let mut others: Vec<(f64, usize)> = (0..m)
            .filter(|&b| b != a)
            .map(|b| ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2), b))
            .collect();
        others.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for &(_, b) in others.iter().take(links) {
            adj[a.min(b)][a.max(b)] = true;
        }
    }
    let mut edges = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            if adj[a][b] {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn erdos_renyi_edges(m: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            if rng.random::<f64>() < q {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn block_edges(design: &SimDesign, m: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut e = match design.topology {
        Topology::PowerLaw => power_law_edges(m, design.attach_m, rng),
        Topology::NearestNeighbor => nearest_neighbor_edges(m, design.nn_m, rng),
        Topology::ErdosRenyi => erdos_renyi_edges(m, design.er_q, rng),
    };
    e.sort_unstable();
    e
}

fn signs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Builds the K block-diagonal precision matrices. The first `shared_subnets`
/// blocks have identical supports and signs in every subgroup; the others are
/// drawn independently per subgroup. Edge magnitudes are drawn per subgroup.
pub fn generate_networks(design: &SimDesign) -> Result<Networks> {
    design.validate()?;
    let mut rng = start_rng(design.seed, 0);
    let (k, p) = (design.k, design.p);
    let m = p / design.n_subnets;
    let mut weights = vec![DMatrix::<f64>::zeros(p, p); k];
    let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); k];

    let mut place = |kk: usize, offset: usize, edges: &[Edge], sg: &[f64], rng: &mut ChaCha8Rng| {
        for (e, &(a, b)) in edges.iter().enumerate() {
            let w = sg[e] * rng.random_range(design.weight_low..=design.weight_high);
            let (j, l) = (offset + a, offset + b);
            weights[kk][(j, l)] = w;
            weights[kk][(l, j)] = w;
            adjacency[kk].push((j, l));
        }
    };
    for b in 0..design.n_subnets {
        let offset = b * m;
        if b < design.shared_subnets {
            let edges = block_edges(design, m, &mut rng);
            let sg = signs(edges.len(), &mut rng);
            for kk in 0..k {
                place(kk, offset, &edges, &sg, &mut rng);
            }
        } else {
            for kk in 0..k {
                let edges = block_edges(design, m, &mut rng);
                let sg = signs(edges.len(), &mut rng);
                place(kk, offset, &edges, &sg, &mut rng);
            }
        }
    }

    let omega = weights
        .into_iter()
        .map(|mut w| {
            for j in 0..p {
                let s: f64 = w.row(j).iter().map(|v| v.abs()).sum();
                w[(j, j)] = s + design.diag_margin;
            }
            w
        })
        .collect();
    for a in adjacency.iter_mut() {
        a.sort_unstable();
    }
    Ok(Networks { omega, adjacency })
}

/// Ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Zero-based subgroup of each subject.
    pub labels: Vec<usize>,
    pub omega: Vec<DMatrix<f64>>,
    pub adjacency: Vec<Vec<Edge>>,
    /// Native-scale coefficients, K x p.
    pub beta: DMatrix<f64>,
    /// Noise precision `1 / noise_sd`.
    pub tau: f64,
    /// `None` when the target censoring rate is zero.
    pub censoring_scale: Option<f64>,
}

impl Truth {
    /// Parameters in the noise-scaled model parameterization (zero means,
    /// zero intercepts, mixture weights from the group sizes).
    pub fn model_params(&self) -> ModelParams {
        let k = self.omega.len();
        let p = self.beta.ncols();
        let n = self.labels.len() as f64;
        let mut pi = DVector::zeros(k);
        for &g in &self.labels {
            pi[g] += 1.0 / n;
        }
        ModelParams {
            beta0: DVector::zeros(k),
            beta: &self.beta * self.tau,
            tau: DVector::from_element(k, self.tau),
            mu: DMatrix::zeros(k, p),
            omega: self.omega.clone(),
            pi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub dataset: Dataset,
    pub truth: Truth,
}

fn marginal_sd(beta: &[f64], omega: &DMatrix<f64>, noise_sd: f64) -> Result<f64> {
    let chol = omega.clone().cholesky().ok_or(Error::InvalidDesign("precision matrix is not positive definite".into()))?;
    let b = DVector::from_column_slice(beta);
    let v = chol.solve(&b);
    Ok((b.dot(&v) + noise_sd * noise_sd).sqrt())
}

/// Log Gamma scale whose pilot censoring fraction matches the target.
fn calibrate_log_scale(design: &SimDesign, sds: &[f64]) -> Result<f64> {
    let mut rng = start_rng(design.seed, 2);
    let n = design.n() as f64;
    let gamma = Gamma::new(design.gamma_shape, 1.0).map_err(|e| Error::InvalidDesign(e.to_string()))?;
    // Censored iff z > log(scale) + log(G), i.e. z - log(G) > log(scale).
    let gaps: Vec<f64> = (0..design.pilot_draws)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * n;
            let mut acc = 0.0;
            let mut g = design.k - 1;
            for (kk, &s) in design.sizes.iter().enumerate() {
                acc += s as f64;
                if u < acc {
                    g = kk;
                    break;
                }
            }
            let z = sds[g] * rng.sample::<f64, _>(StandardNormal);
            z - gamma.sample(&mut rng).ln()
        })
        .collect();
    let fraction = |ls: f64| gaps.iter().filter(|&&v| v > ls).count() as f64 / gaps.len() as f64;
    let target = design.censoring_rate;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut widen = 0;
    while fraction(lo) < target || fraction(hi) > target {
        lo *= 2.0;
        hi *= 2.0;
        widen += 1;
        if widen > 60 {
            return Err(Error::CalibrationFailure(format!("cannot bracket censoring rate {target}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = fraction(mid);
        if (f - target).abs() <= 1e-3 {
            return Ok(mid);
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (fraction(mid) - target).abs() <= 0.01 {
        Ok(mid)
    } else {
        Err(Error::CalibrationFailure(format!("pilot fraction {} misses target {target}", fraction(mid))))
    }
}

/// Draws predictors, outcomes and censoring for every subject. Subjects are
/// listed group by group in design order.
pub fn generate_dataset(design: &SimDesign, networks: &Networks) -> Result<Simulated> {
    design.validate()?;
    let (k, p) = (design.k, design.p);
    if networks.omega.len() != k || networks.omega.iter().any(|o| o.shape() != (p, p)) {
        return Err(Error::DimensionMismatch("networks do not match the design".into()));
    }
    let sds = (0..k)
        .map(|kk| marginal_sd(&design.betas[kk], &networks.omega[kk], design.noise_sd))
        .collect::<Result<Vec<_>>>()?;
    let log_scale = if design.censoring_rate > 0.0 {
        Some(calibrate_log_scale(design, &sds)?)
    } else {
        None
    };

    let mut rng = start_rng(design.seed, 1);
    let gamma = Gamma::new(design.gamma_shape, 1.0).map_err(|e| Error::InvalidDesign(e.to_string()))?;
    let n = design.n();
    let mut x = DMatrix::zeros(n, p);
    let mut t = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for kk in 0..k {
        let upper = networks.omega[kk]
            .clone()
            .cholesky()
            .ok_or(Error::InvalidDesign("precision matrix is not positive definite".into()))?
            .l()
            .transpose();
        let beta = DVector::from_column_slice(&design.betas[kk]);
        for _ in 0..design.sizes[kk] {
            let e = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xi = upper
                .solve_upper_triangular(&e)
                .ok_or(Error::InvalidDesign("singular Cholesky factor".into()))?;
            let z = beta.dot(&xi) + design.noise_sd * rng.sample::<f64, _>(StandardNormal);
            match log_scale {
                Some(ls) => {
                    let c = ls + gamma.sample(&mut rng).ln();
                    t.push(z.min(c));
                    delta.push(u8::from(z <= c));
                }
                None => {
                    t.push(z);
                    delta.push(1);
                }
            }
            x.set_row(row, &xi.transpose());
            labels.push(kk);
            row += 1;
        }
    }
    let dataset = Dataset::new(t, delta, x)?;
    let beta = DMatrix::from_fn(k, p, |i, j| design.betas[i][j]);
    Ok(Simulated {
        dataset,
        truth: Truth {
            labels,
            omega: networks.omega.clone(),
            adjacency: networks.adjacency.clone(),
            beta,
            tau: 1.0 / design.noise_sd,
            censoring_scale: log_scale.map(f64::exp),
        },
    })
}

/// Networks and dataset in one call.
pub fn simulate(design: &SimDesign) -> Result<Simulated> {
    let networks = generate_networks(design)?;
    generate_dataset(design, &networks)
}
