#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbjgm::em::censored_moments;
use sbjgm::{Dataset, Hyperparams, ModelParams, Responsibilities};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `A A' + floor I` with standard-normal-ish entries in `A`.
pub fn random_spd(p: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * floor
}

pub fn random_dataset(n: usize, p: usize, censor_frac: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
    let delta: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() >= censor_frac)).collect();
    Dataset::new(t, delta, x).unwrap()
}

pub fn random_params(k: usize, p: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    ModelParams {
        beta0: DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0)),
        beta: DMatrix::from_fn(k, p, |_, _| rng.random_range(-0.5..0.5)),
        tau: DVector::from_fn(k, |_, _| rng.random_range(0.5..2.0)),
        mu: DMatrix::from_fn(k, p, |_, _| rng.random_range(-1.0..1.0)),
        omega: (0..k).map(|_| random_spd(p, 0.5, rng)).collect(),
        pi: DVector::from_iterator(k, raw.iter().map(|r| r / total)),
    }
}

pub fn hyper(n: usize, p: usize) -> Hyperparams {
    Hyperparams { u: 0.0, ..Hyperparams::default_for(n, p) }
}

/// Censored AFT instance with moments imputed at a reference fit, as the
/// E-step would produce them.
pub fn censored_instance(n: usize, p: usize, seed: u64) -> (Dataset, Responsibilities) {
    let mut rng = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.5..1.5));
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut t = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let eta: f64 = 0.3 + (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
        let z = eta + rng.random_range(-0.8..0.8);
        if rng.random::<f64>() < 0.3 {
            t.push(z - rng.random_range(0.0..1.0));
            delta.push(0);
        } else {
            t.push(z);
            delta.push(1);
        }
    }
    let d = Dataset::new(t, delta, x).unwrap();
    let mut zhat = DMatrix::zeros(n, 1);
    let mut z2hat = DMatrix::zeros(n, 1);
    for i in 0..n {
        if d.delta[i] == 1 {
            zhat[(i, 0)] = d.t[i];
            z2hat[(i, 0)] = d.t[i] * d.t[i];
        } else {
            let m: f64 = 0.3 + (0..p).map(|j| d.x[(i, j)] * beta[j]).sum::<f64>();
            let (a, b) = censored_moments(d.t[i], m, 2.0);
            zhat[(i, 0)] = a;
            z2hat[(i, 0)] = b;
        }
    }
    let rho = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.2..1.0));
    let r = Responsibilities { rho, q: vec![DMatrix::zeros(p, p)], zhat, z2hat };
    (d, r)
}
