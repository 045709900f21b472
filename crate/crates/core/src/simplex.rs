//! Frank-Wolfe solver for the PMF subproblem
//!
//! ```text
//! minimize  f(theta) = theta' (Q + lambda I) theta - 2 theta' r
//! over      the unit probability simplex
//! ```
//!
//! Each iteration solves a linear program over the simplex, whose minimizer
//! is the vertex at the smallest gradient coordinate, and moves toward it
//! with the open-loop step `2 / (k + 2)`. Because `f` is quadratic the
//! gradient is affine in `theta`, so it is updated in O(D) per iteration
//! instead of being recomputed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};
use crate::model::PmfVector;
use crate::util::{dot, max_asymmetry, symmetry_tolerance};

/// Exact gradient refresh period, bounding drift of the incremental update.
const REFRESH_EVERY: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQpProblem {
    q: DMatrix<f64>,
    r: DVector<f64>,
    lambda: f64,
}

impl SimplexQpProblem {
    pub fn new(q: DMatrix<f64>, r: DVector<f64>, lambda: f64) -> Result<Self> {
        if q.nrows() == 0 {
            return Err(KmError::EmptyVector);
        }
        if q.nrows() != q.ncols() {
            return Err(KmError::dim(q.nrows(), q.ncols()));
        }
        if r.len() != q.nrows() {
            return Err(KmError::dim(q.nrows(), r.len()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(KmError::InvalidProblem(format!(
                "regularizer must be finite and >= 0, got {lambda}"
            )));
        }
        if q.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(KmError::Numerical("non-finite entry in Q or r".into()));
        }
        let asym = max_asymmetry(&q);
        if asym > symmetry_tolerance(&q) {
            return Err(KmError::NotSymmetric(asym));
        }
        Ok(SimplexQpProblem { q, r, lambda })
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `f(theta)`, without the constant term.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        let quad = t.dot(&(&self.q * &t)) + self.lambda * t.norm_squared();
        quad - 2.0 * t.dot(&self.r)
    }

    fn gradient_raw(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        let g = (&self.q * &t + &t * self.lambda - &self.r) * 2.0;
        g.as_slice().to_vec()
    }

    fn check_dim(&self, theta: &PmfVector) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(KmError::dim(self.dim(), theta.dim()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FwConfig {
    /// Stop once an iterate moves by at most this much (Euclidean norm).
    pub epsilon: f64,
    /// Iteration cap per call.
    pub max_iters: usize,
    /// Stop once the duality gap at the current iterate is at most this.
    /// Zero disables the check.
    pub gap_tol: f64,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            epsilon: 1e-7,
            max_iters: 500,
            gap_tol: 1e-9,
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(KmError::InvalidConfig("fw.epsilon must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(KmError::InvalidConfig("fw.max_iters must be >= 1".into()));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(KmError::InvalidConfig("fw.gap_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Index of the simplex vertex minimizing `c' x`: the first index holding
/// the smallest entry.
pub fn lp_on_simplex(c: &[f64]) -> Result<usize> {
    if c.is_empty() {
        return Err(KmError::EmptyVector);
    }
    Ok(argmin(c))
}

fn argmin(c: &[f64]) -> usize {
    let (mut best, mut best_v) = (0, c[0]);
    for (j, &v) in c.iter().enumerate().skip(1) {
        if v < best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// `grad f(theta) = 2 (Q + lambda I) theta - 2 r`.
pub fn fw_gradient(p: &SimplexQpProblem, theta: &PmfVector) -> Result<Vec<f64>> {
    p.check_dim(theta)?;
    Ok(p.gradient_raw(theta.as_slice()))
}

/// Frank-Wolfe duality gap `grad' (theta - e_j*)`; an upper bound on
/// `f(theta) - f*`.
pub fn fw_gap(p: &SimplexQpProblem, theta: &PmfVector) -> Result<f64> {
    let g = fw_gradient(p, theta)?;
    let j = lp_on_simplex(&g)?;
    Ok(dot(&g, theta.as_slice()) - g[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwStop {
    Gap,
    Step,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct FwSolution {
    pub theta: PmfVector,
    pub objective: f64,
    /// Duality gap at the returned point.
    pub gap: f64,
    pub iterations: usize,
    pub stop: FwStop,
}

/// Runs Frank-Wolfe from `theta0` and returns the final point.
pub fn solve_simplex_qp(p: &SimplexQpProblem, theta0: &PmfVector, cfg: &FwConfig) -> Result<PmfVector> {
    Ok(solve_simplex_qp_detailed(p, theta0, cfg)?.theta)
}

/// Frank-Wolfe with iterate statistics.
///
/// The returned point never has a larger objective than `theta0`: when the
/// iteration cap is hit the best iterate seen is returned, and a final
/// iterate worse than `theta0` is replaced by `theta0`.
pub fn solve_simplex_qp_detailed(
    p: &SimplexQpProblem,
    theta0: &PmfVector,
    cfg: &FwConfig,
) -> Result<FwSolution> {
    cfg.validate()?;
    p.check_dim(theta0)?;
    PmfVector::new(theta0.as_slice().to_vec())?;

    let d = p.dim();
    let r = p.r.as_slice();
    // Row j holds column j of 2 (Q + lambda I) minus 2 r: the gradient at
    // vertex e_j.
    let mut vertex_grads = vec![0.0; d * d];
    for (j, row) in vertex_grads.chunks_exact_mut(d).enumerate() {
        for (k, g) in row.iter_mut().enumerate() {
            let a = p.q[(k, j)] + if k == j { p.lambda } else { 0.0 };
            *g = 2.0 * a - 2.0 * r[k];
        }
    }
    let eps_sq = cfg.epsilon * cfg.epsilon;

    let mut theta = theta0.as_slice().to_vec();
    let mut grad = p.gradient_raw(&theta);
    // theta . r, |theta|^2 and theta . grad, updated alongside theta.
    let mut tr = dot(&theta, r);
    let mut tsq = dot(&theta, &theta);
    let mut tg = dot(&theta, &grad);
    let mut best_f = f64::INFINITY;
    let mut best_theta = theta.clone();

    let mut k = 1usize;
    let stop;
    let mut candidate_is_current = true;
    loop {
        let j = argmin(&grad);
        // f = theta'(Q + lambda I)theta - 2 theta'r = tg / 2 - theta'r.
        let f = 0.5 * tg - tr;
        if f < best_f {
            best_f = f;
            best_theta.copy_from_slice(&theta);
        }
        let gap = tg - grad[j];
        if !gap.is_finite() {
            return Err(KmError::Numerical("Frank-Wolfe gap is not finite".into()));
        }
        if gap <= cfg.gap_tol {
            stop = FwStop::Gap;
            break;
        }
        if k > cfg.max_iters {
            stop = FwStop::MaxIters;
            candidate_is_current = false;
            break;
        }
        let alpha = 2.0 / (k as f64 + 2.0);
        let beta = 1.0 - alpha;
        // |e_j - theta|^2 = |theta|^2 - 2 theta_j + 1.
        let step_sq = alpha * alpha * (tsq - 2.0 * theta[j] + 1.0).max(0.0);

        // theta . v_j = g_j + 2 r_j - 2 theta . r for the vertex gradient v_j.
        let gj = grad[j];
        let vjj = vertex_grads[j * d + j];
        tg = beta * beta * tg + alpha * beta * (2.0 * gj + 2.0 * r[j] - 2.0 * tr) + alpha * alpha * vjj;
        tsq = beta * beta * tsq + 2.0 * alpha * beta * theta[j] + alpha * alpha;
        tr = beta * tr + alpha * r[j];
        for t in theta.iter_mut() {
            *t *= beta;
        }
        theta[j] += alpha;
        if k % REFRESH_EVERY == 0 {
            grad = p.gradient_raw(&theta);
            tr = dot(&theta, r);
            tsq = dot(&theta, &theta);
            tg = dot(&theta, &grad);
        } else {
            for (g, vg) in grad.iter_mut().zip(&vertex_grads[j * d..(j + 1) * d]) {
                *g = beta * *g + alpha * vg;
            }
        }
        if step_sq <= eps_sq {
            stop = FwStop::Step;
            break;
        }
        k += 1;
    }

    let mut out = if candidate_is_current { theta } else { best_theta };
    if p.objective(&out) > p.objective(theta0.as_slice()) {
        out = theta0.as_slice().to_vec();
    }
    let sum: f64 = out.iter().sum();
    for t in out.iter_mut() {
        *t = t.max(0.0) / sum;
    }
    let theta = PmfVector::from_vec_unchecked(out);
    let objective = p.objective(theta.as_slice());
    let gap = fw_gap(p, &theta)?;
    Ok(FwSolution {
        theta,
        objective,
        gap,
        iterations: k.min(cfg.max_iters),
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_problem(d: usize) -> SimplexQpProblem {
        SimplexQpProblem::new(DMatrix::identity(d, d), DVector::zeros(d), 0.0).unwrap()
    }

    #[test]
    fn lp_examples() {
        assert_eq!(lp_on_simplex(&[3.0, 1.0, 2.0]).unwrap(), 1);
        assert_eq!(lp_on_simplex(&[5.0, 5.0, 5.0]).unwrap(), 0);
        assert!(lp_on_simplex(&[]).is_err());
    }

    #[test]
    fn gradient_at_uniform() {
        let d = 4;
        let g = fw_gradient(&identity_problem(d), &PmfVector::uniform(d)).unwrap();
        for v in g {
            assert!((v - 2.0 / d as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_adds_two_lambda_theta() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 1.0]);
        let r = DVector::from_vec(vec![0.3, -0.1, 0.5]);
        let theta = PmfVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let g0 = fw_gradient(&SimplexQpProblem::new(q.clone(), r.clone(), 0.0).unwrap(), &theta).unwrap();
        let g1 = fw_gradient(&SimplexQpProblem::new(q, r, 0.7).unwrap(), &theta).unwrap();
        for k in 0..3 {
            assert!((g1[k] - g0[k] - 2.0 * 0.7 * theta.as_slice()[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_dimension_mismatch() {
        assert!(fw_gradient(&identity_problem(3), &PmfVector::uniform(2)).is_err());
    }

    #[test]
    fn gap_examples() {
        assert!(fw_gap(&identity_problem(3), &PmfVector::uniform(3)).unwrap().abs() < 1e-15);
        let gap = fw_gap(&identity_problem(2), &PmfVector::vertex(2, 0)).unwrap();
        assert!((gap - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_converges_to_uniform() {
        let cfg = FwConfig {
            max_iters: 10_000_000,
            gap_tol: 1e-6,
            ..FwConfig::default()
        };
        let sol = solve_simplex_qp_detailed(
            &identity_problem(5),
            &PmfVector::new(vec![0.9, 0.05, 0.05, 0.0, 0.0]).unwrap(),
            &cfg,
        )
        .unwrap();
        for &t in sol.theta.as_slice() {
            assert!((t - 0.2).abs() < 1e-6, "{t}");
        }
        assert!(sol.gap <= 1e-6);
        assert_eq!(sol.stop, FwStop::Gap);
    }

    #[test]
    fn diagonal_two_dimensional_optimum() {
        // f(t) = t^2 + 2 (1 - t)^2 is minimized at t = 2/3 with value 2/3.
        let p = SimplexQpProblem::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        let cfg = FwConfig {
            max_iters: 10_000,
            gap_tol: 0.0,
            epsilon: 1e-12,
        };
        let sol = solve_simplex_qp_detailed(&p, &PmfVector::vertex(2, 1), &cfg).unwrap();
        assert!((sol.objective - 2.0 / 3.0).abs() < 1e-5);
        assert!((sol.theta.as_slice()[0] - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        let p = identity_problem(3);
        let start = PmfVector::new(vec![0.34, 0.33, 0.33]).unwrap();
        let cfg = FwConfig {
            max_iters: 3,
            gap_tol: 0.0,
            ..FwConfig::default()
        };
        let sol = solve_simplex_qp_detailed(&p, &start, &cfg).unwrap();
        assert!(sol.objective <= p.objective(start.as_slice()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            SimplexQpProblem::new(asym, DVector::zeros(2), 0.0),
            Err(KmError::NotSymmetric(_))
        ));
        assert!(SimplexQpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2), -1.0).is_err());
        let bad_cfg = FwConfig {
            max_iters: 0,
            ..FwConfig::default()
        };
        assert!(solve_simplex_qp(&identity_problem(2), &PmfVector::uniform(2), &bad_cfg).is_err());
    }
}
