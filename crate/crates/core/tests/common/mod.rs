//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the solvers under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point of the simplex (normalized exponentials).
pub fn random_pmf(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_bits(r: &mut ChaCha8Rng, d: usize) -> Vec<bool> {
    (0..d).map(|_| r.random::<bool>()).collect()
}

/// `(Q, r, lambda)` shaped like a user subproblem: `m` random indicators
/// with uniform probabilities.
pub fn random_q1(r: &mut ChaCha8Rng, d: usize, m: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let mut q = DMatrix::zeros(d, d);
    let mut rv = DVector::zeros(d);
    for _ in 0..m {
        let psi = DVector::from_iterator(d, random_bits(r, d).into_iter().map(|b| f64::from(u8::from(b))));
        let p: f64 = r.random();
        q += &psi * psi.transpose();
        rv += &psi * p;
    }
    let lambda = if r.random::<bool>() { 0.0 } else { r.random::<f64>() };
    (q, rv, lambda)
}

/// `(S, v, mu)` shaped like an item subproblem: `m` random PMFs with uniform
/// probabilities.
pub fn random_q2(r: &mut ChaCha8Rng, d: usize, m: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let mut s = DMatrix::zeros(d, d);
    let mut v = DVector::zeros(d);
    for _ in 0..m {
        let theta = DVector::from_vec(random_pmf(r, d));
        let p: f64 = r.random();
        s += &theta * theta.transpose();
        v += &theta * p;
    }
    let mu = if r.random::<bool>() { 0.0 } else { 0.2 * r.random::<f64>() };
    (s, v, mu)
}

/// `theta'(Q + lambda I)theta - 2 theta'r` by explicit loops.
pub fn q1_objective(q: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, theta: &[f64]) -> f64 {
    let d = theta.len();
    let mut f = 0.0;
    for a in 0..d {
        for b in 0..d {
            f += theta[a] * q[(a, b)] * theta[b];
        }
        f += lambda * theta[a] * theta[a] - 2.0 * theta[a] * r[a];
    }
    f
}

/// `psi'S psi - 2 (v - mu/2 1)'psi` by explicit loops.
pub fn q2_objective(s: &DMatrix<f64>, v: &DVector<f64>, mu: f64, psi: &[bool]) -> f64 {
    let d = psi.len();
    let x: Vec<f64> = psi.iter().map(|&b| f64::from(u8::from(b))).collect();
    let mut g = 0.0;
    for a in 0..d {
        for b in 0..d {
            g += x[a] * s[(a, b)] * x[b];
        }
        g -= 2.0 * (v[a] - mu / 2.0) * x[a];
    }
    g
}

/// Euclidean projection onto the unit simplex (sort-and-threshold).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Projected gradient descent with step `1 / L`, `L` the gradient Lipschitz
/// constant. Returns the best objective seen.
pub fn projected_gradient(q: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, iters: usize) -> (Vec<f64>, f64) {
    let d = r.len();
    let a = q + DMatrix::identity(d, d) * lambda;
    let l = 2.0 * SymmetricEigen::new(a.clone()).eigenvalues.amax().max(1e-12);
    let mut x = DVector::from_element(d, 1.0 / d as f64);
    let mut best = (x.as_slice().to_vec(), q1_objective(q, r, lambda, x.as_slice()));
    for _ in 0..iters {
        let g = (&a * &x - r) * 2.0;
        let y = &x - g / l;
        x = DVector::from_vec(project_simplex(y.as_slice()));
        let f = q1_objective(q, r, lambda, x.as_slice());
        if f < best.1 {
            best = (x.as_slice().to_vec(), f);
        }
    }
    best
}

/// Vertex of the simplex minimizing `c'x`, by evaluating every vertex;
/// first index on ties.
pub fn brute_force_vertex(c: &[f64]) -> usize {
    let d = c.len();
    let mut best = (0, f64::INFINITY);
    for j in 0..d {
        let value: f64 = (0..d).map(|k| c[k] * if k == j { 1.0 } else { 0.0 }).sum();
        if value < best.1 {
            best = (j, value);
        }
    }
    best.0
}

/// Minimum of the binary QP over all `2^d` indicators, plain counting order.
pub fn brute_force_binary(s: &DMatrix<f64>, v: &DVector<f64>, mu: f64) -> (Vec<bool>, f64) {
    let d = v.len();
    let mut best = (vec![false; d], f64::INFINITY);
    for mask in 0u64..(1u64 << d) {
        let psi: Vec<bool> = (0..d).map(|k| mask >> k & 1 == 1).collect();
        let g = q2_objective(s, v, mu, &psi);
        if g < best.1 {
            best = (psi, g);
        }
    }
    best
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[k] += h;
            lo[k] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// Closed-form minimizer of a quadratic on the segment `t e_1 + (1 - t) e_2`.
pub fn segment_minimum(q: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> f64 {
    let f = |t: f64| q1_objective(q, r, lambda, &[t, 1.0 - t]);
    // f(t) = a t^2 + b t + c on [0, 1].
    let (f0, fh, f1) = (f(0.0), f(0.5), f(1.0));
    let a = 2.0 * (f1 - 2.0 * fh + f0);
    let b = f1 - f0 - a;
    let mut candidates = vec![0.0, 1.0];
    if a > 0.0 {
        candidates.push((-b / (2.0 * a)).clamp(0.0, 1.0));
    }
    candidates.into_iter().map(f).fold(f64::INFINITY, f64::min)
}

/// Path of the workspace root.
pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
