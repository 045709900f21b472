//! Low-rank solver for the unit-diagonal SDP
//!
//! ```text
//! minimize  tr(C X)   subject to  X >= 0,  X_kk = 1
//! ```
//!
//! `X` is parameterized as `V' V` with unit-norm columns `v_k`, which makes
//! the diagonal constraint a per-column sphere constraint. Each column then
//! has a closed-form minimizer with the others held fixed:
//! `v_k = -g_k / |g_k|`, `g_k = sum_{j != k} C_kj v_j`. Sweeping the columns
//! in order gives a monotone coordinate descent (the "mixing method").

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};
use crate::util::{max_asymmetry, rng, symmetry_tolerance};

/// Columns whose descent direction is shorter than this are left alone.
const DEGENERATE_NORM: f64 = 1e-12;

/// `V` with columns `v_k` on the unit sphere of R^rank.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFactor {
    v: DMatrix<f64>,
}

impl GramFactor {
    /// Normalizes every column of `v`. Fails on a zero column.
    pub fn new(mut v: DMatrix<f64>) -> Result<Self> {
        for mut col in v.column_iter_mut() {
            let n = col.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(KmError::Numerical("Gram factor column has zero norm".into()));
            }
            col /= n;
        }
        Ok(GramFactor { v })
    }

    /// Random columns, uniform on the sphere.
    pub fn random(rank: usize, size: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        loop {
            let v = DMatrix::from_fn(rank, size, |_, _| r.sample::<f64, _>(StandardNormal));
            if let Ok(f) = GramFactor::new(v) {
                return f;
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.v.nrows()
    }

    /// Number of variables (columns).
    pub fn size(&self) -> usize {
        self.v.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn column(&self, k: usize) -> DVector<f64> {
        self.v.column(k).into_owned()
    }

    /// `X = V' V`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.v.transpose() * &self.v
    }

    /// Largest deviation of a column norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.v
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpConfig {
    /// Factor rank; `None` picks `ceil(sqrt(2 n)) + 1` for n variables.
    pub rank: Option<usize>,
    /// Stop when a sweep lowers the objective by less than `tol * max(1, |obj|)`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig {
            rank: None,
            tol: 1e-7,
            max_sweeps: 2000,
        }
    }
}

impl SdpConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rank {
            if r < 2 {
                return Err(KmError::InvalidConfig("sdp.rank must be >= 2".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(KmError::InvalidConfig("sdp.tol must be > 0".into()));
        }
        if self.max_sweeps == 0 {
            return Err(KmError::InvalidConfig("sdp.max_sweeps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rank_for(&self, n: usize) -> usize {
        self.rank.unwrap_or_else(|| default_rank(n))
    }
}

/// Rank at which an optimal low-rank factor is guaranteed to exist, plus one.
pub fn default_rank(n: usize) -> usize {
    ((2.0 * n as f64).sqrt().ceil() as usize + 1).max(2)
}

/// `tr(C V'V)`.
pub fn sdp_objective(c: &DMatrix<f64>, v: &GramFactor) -> f64 {
    let x = v.gram();
    c.component_mul(&x).sum()
}

/// `g_k = sum_{j != k} C_kj v_j`.
fn descent_direction(c: &DMatrix<f64>, v: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let mut g = DVector::zeros(v.nrows());
    for j in 0..v.ncols() {
        if j != k && c[(k, j)] != 0.0 {
            g.axpy(c[(k, j)], &v.column(j), 1.0);
        }
    }
    g
}

/// Replaces column `k` by its exact minimizer on the sphere, leaving it
/// untouched when `g_k` vanishes. Returns the change in objective (<= 0).
pub fn row_update(v: &mut GramFactor, c: &DMatrix<f64>, k: usize) -> f64 {
    let g = descent_direction(c, &v.v, k);
    let norm = g.norm();
    if norm <= DEGENERATE_NORM {
        return 0.0;
    }
    let new = -g.clone() / norm;
    let old = v.v.column(k).into_owned();
    // Only the off-diagonal terms involving v_k change.
    let delta = 2.0 * (&new - &old).dot(&g);
    if delta < 0.0 {
        v.v.set_column(k, &new);
        delta
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub factor: GramFactor,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Minimizes `tr(C X)` over unit-diagonal PSD `X` via the low-rank factor.
pub fn solve_sdp(c: &DMatrix<f64>, cfg: &SdpConfig, seed: u64) -> Result<SdpSolution> {
    cfg.validate()?;
    let n = c.nrows();
    if n == 0 || c.ncols() != n {
        return Err(KmError::dim(n, c.ncols()));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(KmError::Numerical("non-finite cost matrix".into()));
    }
    let asym = max_asymmetry(c);
    if asym > symmetry_tolerance(c) {
        return Err(KmError::NotSymmetric(asym));
    }

    let mut factor = GramFactor::random(cfg.rank_for(n), n, seed);
    let mut objective = sdp_objective(c, &factor);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let before = objective;
        for k in 0..n {
            objective += row_update(&mut factor, c, k);
        }
        if before - objective < cfg.tol * before.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    // Recompute to shed accumulated round-off from the incremental deltas.
    let objective = sdp_objective(c, &factor);
    Ok(SdpSolution {
        factor,
        objective,
        sweeps,
        converged,
    })
}
