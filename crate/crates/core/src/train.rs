//! Block-coordinate training of a Kolmogorov model.
//!
//! Each step first refines every item indicator against the current PMFs
//! (guarded binary-QP update), then every user PMF against the new
//! indicators (warm-started Frank-Wolfe). Both half-steps only ever accept
//! non-increasing subproblem values, so the training objective is monotone.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{refine_indicator, BinaryQpProblem, Q2Mode, SdrConfig};
use crate::error::{KmError, Result};
use crate::model::{IndicatorVector, ItemId, KolmogorovModel, ObservationSet, PmfVector, UserId};
use crate::sdp::SdpConfig;
use crate::simplex::{solve_simplex_qp_detailed, FwConfig, SimplexQpProblem};
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub bcd_iters: usize,
    pub fw: FwConfig,
    pub sdr: SdrConfig,
    pub sdp: SdpConfig,
    /// l2 penalty on every PMF.
    pub lambda: f64,
    /// l1 penalty on every indicator.
    pub mu: f64,
    pub seed: u64,
    pub q2_mode: Q2Mode,
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 8,
            bcd_iters: 5,
            fw: FwConfig::default(),
            sdr: SdrConfig::default(),
            sdp: SdpConfig::default(),
            lambda: 0.0,
            mu: 0.0,
            seed: 0,
            q2_mode: Q2Mode::Sdr,
            restarts: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(KmError::InvalidConfig("dim must be >= 1".into()));
        }
        if self.restarts == 0 {
            return Err(KmError::InvalidConfig("restarts must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(KmError::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(KmError::InvalidConfig("mu must be finite and >= 0".into()));
        }
        if self.q2_mode == Q2Mode::Exhaustive && self.dim > crate::binary::MAX_EXHAUSTIVE_DIM {
            return Err(KmError::DimensionTooLarge {
                dim: self.dim,
                max: crate::binary::MAX_EXHAUSTIVE_DIM,
            });
        }
        self.fw.validate()?;
        self.sdr.validate()?;
        self.sdp.validate()
    }
}

/// Per-iteration record of one training run. Entry 0 is the initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub seed: u64,
    /// Regularized objective; equals the squared error when lambda = mu = 0.
    pub objective_per_iter: Vec<f64>,
    pub rmse_per_iter: Vec<f64>,
    pub wall_time_per_iter: Vec<f64>,
    /// Items whose solver candidate was rejected by the guard.
    pub psi_rejected_per_iter: Vec<usize>,
    /// Largest Frank-Wolfe gap over users after the PMF half-step.
    pub max_fw_gap_per_iter: Vec<f64>,
    pub final_rmse: f64,
}

impl TrainTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objective_per_iter.last().expect("trace has an initial entry")
    }

    /// Writes `iter,objective,rmse,seconds`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "objective", "rmse", "seconds"])?;
        for (n, ((obj, rmse), secs)) in self
            .objective_per_iter
            .iter()
            .zip(&self.rmse_per_iter)
            .zip(&self.wall_time_per_iter)
            .enumerate()
        {
            out.write_record([
                n.to_string(),
                format!("{obj:.12e}"),
                format!("{rmse:.12e}"),
                format!("{secs:.6}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub objective: f64,
    pub squared_error: f64,
    pub psi_changed: usize,
    pub psi_rejected: usize,
    pub max_fw_gap: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub restart: usize,
    pub seed: u64,
    pub final_objective: f64,
    pub final_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KolmogorovModel,
    pub trace: TrainTrace,
    /// Every restart, in order; `best` indexes the returned one.
    pub runs: Vec<RunSummary>,
    pub best: usize,
}

fn user_pos(obs: &ObservationSet, user: UserId) -> Result<usize> {
    obs.user_position(user).ok_or(KmError::NoObservations { kind: "user", id: user })
}

fn item_pos(obs: &ObservationSet, item: ItemId) -> Result<usize> {
    obs.item_position(item).ok_or(KmError::NoObservations { kind: "item", id: item })
}

/// `Q_u = sum psi_i psi_i'`, `r_u = sum p_ui psi_i` over the items the user
/// rated. `psi` is indexed by the observation set's item positions.
pub fn assemble_q1(obs: &ObservationSet, psi: &[IndicatorVector], user: UserId, lambda: f64) -> Result<SimplexQpProblem> {
    let pos = user_pos(obs, user)?;
    q1_at(obs, psi, pos, lambda)
}

pub(crate) fn q1_at(obs: &ObservationSet, psi: &[IndicatorVector], pos: usize, lambda: f64) -> Result<SimplexQpProblem> {
    let dim = psi.first().map(IndicatorVector::dim).ok_or(KmError::EmptyVector)?;
    let mut q = DMatrix::zeros(dim, dim);
    let mut r = DVector::zeros(dim);
    let mut support = Vec::with_capacity(dim);
    for &(i, p) in obs.user_ratings(pos) {
        let s = &psi[i];
        if s.dim() != dim {
            return Err(KmError::dim(dim, s.dim()));
        }
        support.clear();
        support.extend((0..dim).filter(|&k| s.is_set(k)));
        for &a in &support {
            r[a] += p;
            for &b in &support {
                q[(a, b)] += 1.0;
            }
        }
    }
    SimplexQpProblem::new(q, r, lambda)
}

/// `S_i = sum theta_u theta_u'`, `v_i = sum p_ui theta_u` over the users who
/// rated the item. `theta` is indexed by the observation set's user positions.
pub fn assemble_q2(obs: &ObservationSet, theta: &[PmfVector], item: ItemId, mu: f64) -> Result<BinaryQpProblem> {
    let pos = item_pos(obs, item)?;
    q2_at(obs, theta, pos, mu)
}

pub(crate) fn q2_at(obs: &ObservationSet, theta: &[PmfVector], pos: usize, mu: f64) -> Result<BinaryQpProblem> {
    let dim = theta.first().map(PmfVector::dim).ok_or(KmError::EmptyVector)?;
    let mut s = DMatrix::zeros(dim, dim);
    let mut v = DVector::zeros(dim);
    for &(u, p) in obs.item_ratings(pos) {
        let t = theta[u].as_slice();
        if t.len() != dim {
            return Err(KmError::dim(dim, t.len()));
        }
        for a in 0..dim {
            v[a] += p * t[a];
            for b in 0..dim {
                s[(a, b)] += t[a] * t[b];
            }
        }
    }
    BinaryQpProblem::new(s, v, mu)
}

/// Random PMFs (normalized exponential draws) for every user and all-ones
/// placeholder indicators for every item.
pub fn init_model(obs: &ObservationSet, cfg: &TrainConfig) -> Result<KolmogorovModel> {
    if cfg.dim == 0 {
        return Err(KmError::InvalidConfig("dim must be >= 1".into()));
    }
    let mut r = rng(cfg.seed);
    let theta = obs
        .users()
        .iter()
        .map(|_| {
            let w: Vec<f64> = (0..cfg.dim).map(|_| r.sample::<f64, _>(Exp1)).collect();
            let total: f64 = w.iter().sum();
            PmfVector::from_vec_unchecked(w.into_iter().map(|x| x / total).collect())
        })
        .collect();
    let psi = vec![IndicatorVector::ones(cfg.dim); obs.items().len()];
    Ok(KolmogorovModel::from_dense(cfg.dim, obs.users(), theta, obs.items(), psi))
}

/// Squared error plus `lambda sum |theta_u|^2 + mu sum 1'psi_i`.
pub fn regularized_objective(model: &KolmogorovModel, obs: &ObservationSet, lambda: f64, mu: f64) -> Result<f64> {
    let mut total = model.objective(obs)?;
    if lambda > 0.0 {
        for &u in model.users() {
            total += lambda * model.theta(u)?.iter().map(|t| t * t).sum::<f64>();
        }
    }
    if mu > 0.0 {
        for &i in model.items() {
            total += mu * model.psi(i)?.iter().sum::<f64>();
        }
    }
    Ok(total)
}

fn check_alignment(model: &KolmogorovModel, obs: &ObservationSet) -> Result<()> {
    if model.users() != obs.users() || model.items() != obs.items() {
        return Err(KmError::InvalidModel(
            "model users/items do not match the observation set".into(),
        ));
    }
    Ok(())
}

/// One block-coordinate step: all indicators, then all PMFs.
pub fn ikm_step(
    model: &KolmogorovModel,
    obs: &ObservationSet,
    cfg: &TrainConfig,
    n: usize,
) -> Result<(KolmogorovModel, StepStats)> {
    check_alignment(model, obs)?;
    let start = Instant::now();
    let dim = model.dim();
    let n_users = obs.users().len();
    let n_items = obs.items().len();

    let theta: Vec<PmfVector> = (0..n_users).map(|k| model.theta_at(k)).collect();
    let psi_prev: Vec<IndicatorVector> = (0..n_items).map(|k| model.psi_at(k)).collect();

    let refinements: Vec<_> = (0..n_items)
        .into_par_iter()
        .map(|i| {
            let problem = q2_at(obs, &theta, i, cfg.mu)?;
            let sdr = SdrConfig {
                m_rnd: cfg.sdr.m_rnd,
                seed: item_seed(cfg.seed, obs.items()[i], n),
            };
            refine_indicator(&problem, &psi_prev[i], &sdr, &cfg.sdp, cfg.q2_mode)
        })
        .collect::<Result<_>>()?;
    let psi_changed = refinements
        .iter()
        .zip(&psi_prev)
        .filter(|(r, p)| &r.psi != *p)
        .count();
    let psi_rejected = refinements.iter().filter(|r| !r.accepted).count();
    let psi: Vec<IndicatorVector> = refinements.into_iter().map(|r| r.psi).collect();

    let solutions: Vec<_> = (0..n_users)
        .into_par_iter()
        .map(|u| {
            let problem = q1_at(obs, &psi, u, cfg.lambda)?;
            solve_simplex_qp_detailed(&problem, &theta[u], &cfg.fw)
        })
        .collect::<Result<_>>()?;
    let max_fw_gap = solutions.iter().map(|s| s.gap).fold(0.0, f64::max);
    let theta: Vec<PmfVector> = solutions.into_iter().map(|s| s.theta).collect();

    let next = KolmogorovModel::from_dense(dim, obs.users(), theta, obs.items(), psi);
    let squared_error = next.objective(obs)?;
    let objective = regularized_objective(&next, obs, cfg.lambda, cfg.mu)?;
    if !objective.is_finite() {
        return Err(KmError::Numerical("training objective is not finite".into()));
    }
    Ok((
        next,
        StepStats {
            objective,
            squared_error,
            psi_changed,
            psi_rejected,
            max_fw_gap,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

fn rmse_of(squared_error: f64, n: usize) -> f64 {
    (squared_error / n as f64).sqrt()
}

/// A single seeded run of `cfg.bcd_iters` steps.
pub fn train_single(obs: &ObservationSet, cfg: &TrainConfig) -> Result<(KolmogorovModel, TrainTrace)> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(KmError::EmptyObservations);
    }
    let mut model = init_model(obs, cfg)?;
    let mut trace = TrainTrace {
        seed: cfg.seed,
        objective_per_iter: vec![regularized_objective(&model, obs, cfg.lambda, cfg.mu)?],
        rmse_per_iter: vec![rmse_of(model.objective(obs)?, obs.len())],
        wall_time_per_iter: vec![0.0],
        psi_rejected_per_iter: vec![0],
        max_fw_gap_per_iter: vec![f64::NAN],
        final_rmse: 0.0,
    };
    for n in 1..=cfg.bcd_iters {
        let (next, stats) = ikm_step(&model, obs, cfg, n)?;
        log::debug!(
            "seed {} iter {n}: objective {:.6e}, {} psi changed, {} rejected, {:.2}s",
            cfg.seed,
            stats.objective,
            stats.psi_changed,
            stats.psi_rejected,
            stats.seconds
        );
        trace.objective_per_iter.push(stats.objective);
        trace.rmse_per_iter.push(rmse_of(stats.squared_error, obs.len()));
        trace.wall_time_per_iter.push(stats.seconds);
        trace.psi_rejected_per_iter.push(stats.psi_rejected);
        trace.max_fw_gap_per_iter.push(stats.max_fw_gap);
        model = next;
    }
    trace.final_rmse = *trace.rmse_per_iter.last().expect("non-empty");
    Ok((model, trace))
}

/// Runs `cfg.restarts` independently seeded runs and keeps the one with the
/// lowest final objective (earliest restart on ties).
pub fn train(obs: &ObservationSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(KmError::EmptyObservations);
    }
    let mut best: Option<(KolmogorovModel, TrainTrace)> = None;
    let mut runs = Vec::with_capacity(cfg.restarts);
    let mut best_idx = 0;
    for restart in 0..cfg.restarts {
        let run_cfg = TrainConfig {
            seed: restart_seed(cfg.seed, restart),
            ..*cfg
        };
        let (model, trace) = train_single(obs, &run_cfg)?;
        runs.push(RunSummary {
            restart,
            seed: run_cfg.seed,
            final_objective: trace.final_objective(),
            final_rmse: trace.final_rmse,
        });
        let better = best
            .as_ref()
            .is_none_or(|(_, t)| trace.final_objective() < t.final_objective());
        if better {
            best_idx = restart;
            best = Some((model, trace));
        }
    }
    let (model, trace) = best.expect("at least one restart");
    Ok(TrainOutcome {
        model,
        trace,
        runs,
        best: best_idx,
    })
}

/// Rounding seed of `item` in step `n`.
pub fn item_seed(seed: u64, item: ItemId, n: usize) -> u64 {
    derive_seed(seed, &[item, n as u64])
}

/// Seed of restart `k`.
pub fn restart_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[0x7e57, k as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_model, toy_observations, Observation};

    fn obs_from(rows: &[(u64, u64, f64)]) -> ObservationSet {
        ObservationSet::new(
            rows.iter()
                .map(|&(user, item, p)| Observation { user, item, p })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn q1_single_observation() {
        let obs = obs_from(&[(1, 1, 0.4)]);
        let psi = vec![IndicatorVector::from_bits(vec![true, false, false])];
        let p = assemble_q1(&obs, &psi, 1, 0.0).unwrap();
        let mut q = DMatrix::zeros(3, 3);
        q[(0, 0)] = 1.0;
        assert_eq!(p.q(), &q);
        assert_eq!(p.r().as_slice(), &[0.4, 0.0, 0.0]);
    }

    #[test]
    fn q1_all_zero_indicators() {
        let obs = obs_from(&[(1, 1, 0.4), (1, 2, 0.9)]);
        let psi = vec![IndicatorVector::zeros(3); 2];
        let p = assemble_q1(&obs, &psi, 1, 0.0).unwrap();
        assert!(p.q().iter().all(|&x| x == 0.0));
        assert!(p.r().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn q1_toy_user_has_zero_residual_at_known_theta() {
        let obs = toy_observations();
        let m = toy_model();
        let psi: Vec<_> = (0..2).map(|k| m.psi_at(k)).collect();
        let p = assemble_q1(&obs, &psi, 1, 0.0).unwrap();
        let f = p.objective(m.theta(1).unwrap());
        assert!((f + (0.3f64.powi(2) + 0.5f64.powi(2))).abs() < 1e-14);
    }

    #[test]
    fn q_assembly_unknown_ids() {
        let obs = toy_observations();
        let psi = vec![IndicatorVector::ones(3); 2];
        assert!(matches!(
            assemble_q1(&obs, &psi, 42, 0.0),
            Err(KmError::NoObservations { kind: "user", id: 42 })
        ));
        let theta = vec![PmfVector::uniform(3); 2];
        assert!(assemble_q2(&obs, &theta, 42, 0.0).is_err());
    }

    #[test]
    fn q2_single_observation_uniform_theta() {
        let obs = obs_from(&[(3, 8, 0.6)]);
        let d = 4;
        let p = assemble_q2(&obs, &[PmfVector::uniform(d)], 8, 0.0).unwrap();
        for a in 0..d {
            assert!((p.v()[a] - 0.6 / d as f64).abs() < 1e-15);
            for b in 0..d {
                assert!((p.s()[(a, b)] - 1.0 / (d * d) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let obs = toy_observations();
        let cfg = TrainConfig {
            dim: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = init_model(&obs, &cfg).unwrap();
        let b = init_model(&obs, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_empty());
        let c = init_model(&obs, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.theta(1).unwrap(), c.theta(1).unwrap());
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let obs = toy_observations();
        let cfg = TrainConfig {
            dim: 3,
            bcd_iters: 0,
            restarts: 1,
            ..TrainConfig::default()
        };
        let out = train(&obs, &cfg).unwrap();
        assert_eq!(out.trace.objective_per_iter.len(), 1);
        let init = init_model(&obs, &TrainConfig { seed: restart_seed(cfg.seed, 0), ..cfg }).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.trace.final_objective(), init.objective(&obs).unwrap());
    }

    #[test]
    fn empty_observations_rejected() {
        let obs = ObservationSet::default();
        assert!(matches!(
            train(&obs, &TrainConfig::default()),
            Err(KmError::EmptyObservations)
        ));
    }

    #[test]
    fn step_rejects_misaligned_model() {
        let obs = toy_observations();
        let other = obs_from(&[(5, 5, 0.5)]);
        let m = init_model(&other, &TrainConfig::default()).unwrap();
        assert!(ikm_step(&m, &obs, &TrainConfig::default(), 1).is_err());
    }
}
