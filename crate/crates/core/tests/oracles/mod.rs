//! Brute-force reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's solvers: every
//! quantity is computed from its definition with dense loops, grids or
//! derivative-free search.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Determinant by cofactor expansion along the first row.
pub fn det_cofactor(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    match n {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => {
            let mut total = 0.0;
            for c in 0..n {
                let minor = DMatrix::from_fn(n - 1, n - 1, |i, j| m[(i + 1, if j < c { j } else { j + 1 })]);
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                total += sign * m[(0, c)] * det_cofactor(&minor);
            }
            total
        }
    }
}

/// `log N(x; mu, omega^{-1})` from the determinant and an explicit double sum.
pub fn dense_gaussian_logpdf(x: &[f64], mu: &[f64], omega: &DMatrix<f64>) -> f64 {
    let p = x.len();
    let mut quad = 0.0;
    for j in 0..p {
        for l in 0..p {
            quad += (x[j] - mu[j]) * omega[(j, l)] * (x[l] - mu[l]);
        }
    }
    0.5 * det_cofactor(omega).ln() - 0.5 * p as f64 * LN_2PI - 0.5 * quad
}

/// Standard normal density.
pub fn phi(s: f64) -> f64 {
    (-0.5 * s * s - 0.5 * LN_2PI).exp()
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 20)
}

/// Integral over consecutive panels to relative tolerance `rel`; the panels
/// help the adaptive rule find narrow peaks.
fn panels(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, count: usize, rel: f64) -> f64 {
    let width = (hi - lo) / count as f64;
    let edge = |i: usize| lo + i as f64 * width;
    let rough: f64 = (0..count)
        .map(|i| {
            let (a, b) = (edge(i), edge(i + 1));
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)).abs()
        })
        .sum();
    let tol = rel * rough.max(f64::MIN_POSITIVE) / count as f64;
    (0..count).map(|i| adaptive_simpson(f, edge(i), edge(i + 1), tol)).sum()
}

/// First and second moments of `Z ~ N(m, 1/tau^2)` conditioned on `Z > lower`,
/// by quadrature in the standardized variable.
pub fn truncated_normal_moments_quadrature(m: f64, tau: f64, lower: f64) -> (f64, f64) {
    assert!(tau > 0.0);
    let a = tau * (lower - m);
    let (es, es2) = if a < 0.0 {
        // Most of the mass is kept: integrate the density directly.
        let lo = a.max(-40.0);
        let p0 = panels(&phi, lo, 40.0, 64, 1e-14);
        let p1 = panels(&|s| s * phi(s), lo, 40.0, 64, 1e-14);
        let p2 = panels(&|s| s * s * phi(s), lo, 40.0, 64, 1e-14);
        (p1 / p0, p2 / p0)
    } else {
        // Factor out phi(a) so the integrands stay of order one deep in the tail.
        let g = move |x: f64| (-(x * x) / 2.0 - a * x).exp();
        let hi = 40.0 / (1.0 + a);
        let i0 = panels(&g, 0.0, hi, 64, 1e-14);
        let i1 = panels(&|x| x * g(x), 0.0, hi, 64, 1e-14);
        let i2 = panels(&|x| x * x * g(x), 0.0, hi, 64, 1e-14);
        let r1 = i1 / i0;
        let r2 = i2 / i0;
        (a + r1, a * a + 2.0 * a * r1 + r2)
    };
    (m + es / tau, m * m + 2.0 * m * es / tau + es2 / (tau * tau))
}

/// `1 - Phi(a)` by quadrature of the density.
pub fn normal_sf_quadrature(a: f64) -> f64 {
    if a < 0.0 {
        0.5 + panels(&phi, a.max(-40.0), 0.0, 64, 1e-15)
    } else {
        let g = move |x: f64| (-(x * x) / 2.0 - a * x).exp();
        phi(a) * panels(&g, 0.0, 40.0 / (1.0 + a), 64, 1e-15)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridExhausted;

/// Single-group penalized Gaussian objective
/// `(n/2)[log det W - tr(S W)] - tau0 tr(W) - sum_{j<l} w_jl |W_jl|`, or `None`
/// outside the positive-definite cone.
pub fn ggm_objective(s: &DMatrix<f64>, n: f64, tau0: f64, weights: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<f64> {
    let p = s.nrows();
    for size in 1..=p {
        let lead = w.view((0, 0), (size, size)).into_owned();
        if !(det_cofactor(&lead) > 0.0) {
            return None;
        }
    }
    let mut tr = 0.0;
    for j in 0..p {
        for l in 0..p {
            tr += s[(j, l)] * w[(l, j)];
        }
    }
    let mut penalty = 0.0;
    for j in 0..p {
        penalty += tau0 * w[(j, j)];
        for l in (j + 1)..p {
            penalty += weights[(j, l)] * w[(j, l)].abs();
        }
    }
    let value = 0.5 * n * (det_cofactor(w).ln() - tr) - penalty;
    value.is_finite().then_some(value)
}

/// Grid search over the free entries of a 2x2 precision matrix with two
/// refinement passes, keeping only positive-definite points.
///
/// The search box for each diagonal entry is `(0, 2 d]` and for the
/// off-diagonal `[-2 d, 2 d]`, where `d` is the largest diagonal entry of the
/// explicit inverse of `s`.
pub fn brute_force_penalized_ggm(
    s: &DMatrix<f64>,
    n: f64,
    tau0: f64,
    weights: &DMatrix<f64>,
    points: usize,
) -> Result<DMatrix<f64>, GridExhausted> {
    assert_eq!(s.nrows(), 2, "oracle handles the 2x2 case");
    let points = points | 1;
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let d = (s[(1, 1)] / det).max(s[(0, 0)] / det);
    if !(d.is_finite() && d > 0.0) {
        return Err(GridExhausted);
    }
    let eval = |a: f64, b: f64, c: f64| {
        let w = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
        ggm_objective(s, n, tau0, weights, &w)
    };

    // Centre and half-width per coordinate (a, b, c).
    let mut centre = [d, 0.0, d];
    let mut half = [d, 2.0 * d, d];
    let mut best: Option<([f64; 3], f64)> = None;
    for _pass in 0..3 {
        let axis = |i: usize, t: usize| centre[i] - half[i] + 2.0 * half[i] * t as f64 / (points - 1) as f64;
        for ia in 0..points {
            let a = axis(0, ia);
            if a <= 0.0 {
                continue;
            }
            for ib in 0..points {
                let b = axis(1, ib);
                for ic in 0..points {
                    let c = axis(2, ic);
                    if c <= 0.0 {
                        continue;
                    }
                    if let Some(v) = eval(a, b, c) {
                        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                            best = Some(([a, b, c], v));
                        }
                    }
                }
            }
        }
        let Some((x, _)) = best else {
            return Err(GridExhausted);
        };
        half.iter_mut().for_each(|h| *h *= 4.0 / (points - 1) as f64);
        centre = x;
    }
    let (x, _) = best.ok_or(GridExhausted)?;
    Ok(DMatrix::from_row_slice(2, 2, &[x[0], x[1], x[1], x[2]]))
}

/// Nelder-Mead maximization of `f` from `x0`, restarted around the incumbent
/// until a restart no longer improves it.
pub fn nelder_mead_max(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut best_val = f(&best);
    let mut scale = step;
    for _restart in 0..200 {
        let (x, v) = nelder_mead_once(f, &best, scale, 20_000);
        let gain = v - best_val;
        if v > best_val {
            best = x;
            best_val = v;
        }
        if gain <= 1e-13 * best_val.abs().max(1.0) {
            if scale < 1e-9 {
                break;
            }
            scale *= 0.1;
        }
    }
    (best, best_val)
}

fn nelder_mead_once(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    // Work with g = -f so the textbook minimization steps apply.
    let g = |x: &[f64]| {
        let v = -f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut vals: Vec<f64> = simplex.iter().map(|x| g(x)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[dim] - vals[0]).abs() <= 1e-15 * vals[0].abs().max(1e-300) {
            break;
        }
        let centroid: Vec<f64> = (0..dim).map(|c| simplex[..dim].iter().map(|x| x[c]).sum::<f64>() / dim as f64).collect();
        let toward = |t: f64| -> Vec<f64> { (0..dim).map(|c| centroid[c] + t * (simplex[dim][c] - centroid[c])).collect() };
        let xr = toward(-1.0);
        let fr = g(&xr);
        if fr < vals[0] {
            let xe = toward(-2.0);
            let fe = g(&xe);
            if fe < fr {
                simplex[dim] = xe;
                vals[dim] = fe;
            } else {
                simplex[dim] = xr;
                vals[dim] = fr;
            }
        } else if fr < vals[dim - 1] {
            simplex[dim] = xr;
            vals[dim] = fr;
        } else {
            let (xc, fc) = if fr < vals[dim] {
                let xc = toward(-0.5);
                let fc = g(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = g(&xc);
                (xc, fc)
            };
            if fc < vals[dim].min(fr) {
                simplex[dim] = xc;
                vals[dim] = fc;
            } else {
                for i in 1..=dim {
                    for c in 0..dim {
                        simplex[i][c] = simplex[0][c] + 0.5 * (simplex[i][c] - simplex[0][c]);
                    }
                    vals[i] = g(&simplex[i]);
                }
            }
        }
    }
    let mut arg = 0;
    for i in 1..=dim {
        if vals[i] < vals[arg] {
            arg = i;
        }
    }
    (simplex[arg].clone(), -vals[arg])
}

/// Weighted penalized AFT objective of one subgroup written out term by term:
/// `sum_i w_i [log tau - 0.5 (tau^2 z2_i - 2 tau eta_i z_i + eta_i^2)] - lambda |beta|_1`.
pub fn regression_objective_oracle(
    x: &DMatrix<f64>,
    w: &[f64],
    z: &[f64],
    z2: &[f64],
    beta0: f64,
    beta: &[f64],
    tau: f64,
    lambda: f64,
) -> f64 {
    if !(tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let mut eta = beta0;
        for j in 0..beta.len() {
            eta += x[(i, j)] * beta[j];
        }
        total += w[i] * (tau.ln() - 0.5 * (tau * tau * z2[i] - 2.0 * tau * eta * z[i] + eta * eta));
    }
    total - lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Maximizes [`regression_objective_oracle`] over `(beta0, beta, log tau)` with
/// Nelder-Mead, followed by a coordinate polish that tries `beta_j = 0`.
#[allow(clippy::too_many_arguments)]
pub fn regression_oracle(
    x: &DMatrix<f64>,
    w: &[f64],
    z: &[f64],
    z2: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>, f64, f64) {
    let p = x.ncols();
    let obj = |v: &[f64]| regression_objective_oracle(x, w, z, z2, v[0], &v[1..=p], v[p + 1].exp(), lambda);
    let mut start = vec![0.0; p + 2];
    let wsum: f64 = w.iter().sum();
    let zbar: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let z2bar: f64 = w.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let sd = (z2bar - zbar * zbar).max(1e-6).sqrt();
    start[p + 1] = (1.0 / sd).ln();
    start[0] = zbar / sd;
    let (mut v, mut best) = nelder_mead_max(&obj, &start, 0.5);
    // Coefficients sitting on a kink: try the kink itself.
    for j in 1..=p {
        let mut trial = v.clone();
        trial[j] = 0.0;
        let (t, tv) = nelder_mead_max(&obj, &trial, 1e-3);
        if tv > best {
            v = t;
            best = tv;
        }
    }
    (v[0], v[1..=p].to_vec(), v[p + 1].exp(), best)
}

/// Misclassified fraction minimized over every relabeling of `est`, by
/// enumerating permutations with Heap's algorithm.
pub fn clustering_error_bruteforce(est: &[usize], truth: &[usize]) -> f64 {
    let k = est.iter().chain(truth).copied().max().map_or(1, |m| m + 1);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = usize::MAX;
    let mut c = vec![0usize; k];
    let count = |perm: &[usize]| est.iter().zip(truth).filter(|(e, t)| perm[**e] != **t).count();
    best = best.min(count(&perm));
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(count(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best as f64 / est.len() as f64
}

/// `sum_k ||a_k - b_k||_F^2` by an explicit triple loop.
pub fn frobenius_sum(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        for j in 0..x.nrows() {
            for l in 0..x.ncols() {
                total += (x[(j, l)] - y[(j, l)]).powi(2);
            }
        }
    }
    total
}

/// Grid minimizer over a 2-vector with four refinement passes.
pub fn grid_argmin_2d(f: &dyn Fn(f64, f64) -> f64, centre: [f64; 2], half: f64, points: usize) -> [f64; 2] {
    let points = points | 1;
    let mut c = centre;
    let mut h = half;
    let mut best = (c, f(c[0], c[1]));
    for _pass in 0..5 {
        for i in 0..points {
            for j in 0..points {
                let x = c[0] - h + 2.0 * h * i as f64 / (points - 1) as f64;
                let y = c[1] - h + 2.0 * h * j as f64 / (points - 1) as f64;
                let v = f(x, y);
                if v < best.1 {
                    best = ([x, y], v);
                }
            }
        }
        c = best.0;
        h *= 4.0 / (points - 1) as f64;
    }
    best.0
}

/// Column means, used where an oracle needs a plain average.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / x.nrows() as f64)
}
