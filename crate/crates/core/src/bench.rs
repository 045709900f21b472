//! SDR-versus-exhaustive agreement on synthetic dense data.
//!
//! A fully observed `users x items` matrix of i.i.d. uniform probabilities is
//! trained with the SDR indicator solver. At every step, before the update,
//! each item's binary QP is also solved exhaustively; the rounded SDR
//! candidate counts as a mismatch when its value exceeds the exhaustive
//! optimum by more than a relative `1e-9`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binary::{sdr_candidate, solve_binary_exhaustive, g_value, Q2Mode, SdrConfig, MAX_EXHAUSTIVE_DIM};
use crate::error::{KmError, Result};
use crate::model::{Observation, ObservationSet, PmfVector};
use crate::train::{ikm_step, init_model, item_seed, q2_at, TrainConfig};
use crate::util::{derive_seed, rng};

const VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub users: usize,
    pub items: usize,
    /// Independent datasets per dimension.
    pub trials: usize,
    pub bcd_iters: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            users: 20,
            items: 40,
            trials: 10,
            bcd_iters: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dim: usize,
    pub instances: usize,
    pub mismatches: usize,
    pub rate: f64,
}

/// Dense `users x items` observations with `p ~ Uniform[0, 1]`.
pub fn synthetic_uniform(users: usize, items: usize, seed: u64) -> Result<ObservationSet> {
    let mut r = rng(seed);
    let mut recs = Vec::with_capacity(users * items);
    for u in 0..users as u64 {
        for i in 0..items as u64 {
            recs.push(Observation {
                user: u + 1,
                item: i + 1,
                p: r.random::<f64>(),
            });
        }
    }
    ObservationSet::new(recs)
}

/// Mismatch rate of `mode` against the exhaustive solver at dimension
/// `base.dim`. With `Q2Mode::Exhaustive` the candidate is the exhaustive
/// solution itself.
pub fn bench_dim(base: &TrainConfig, bench: &BenchConfig, mode: Q2Mode) -> Result<BenchRow> {
    if base.dim > MAX_EXHAUSTIVE_DIM {
        return Err(KmError::DimensionTooLarge {
            dim: base.dim,
            max: MAX_EXHAUSTIVE_DIM,
        });
    }
    if bench.users == 0 || bench.items == 0 || bench.trials == 0 {
        return Err(KmError::InvalidConfig("bench sizes must be >= 1".into()));
    }
    let mut instances = 0;
    let mut mismatches = 0;
    for trial in 0..bench.trials as u64 {
        let data_seed = derive_seed(bench.seed, &[base.dim as u64, trial, 0xda7a]);
        let obs = synthetic_uniform(bench.users, bench.items, data_seed)?;
        let cfg = TrainConfig {
            seed: derive_seed(bench.seed, &[base.dim as u64, trial, 0x7a1e]),
            q2_mode: Q2Mode::Sdr,
            ..*base
        };
        cfg.validate()?;
        let mut model = init_model(&obs, &cfg)?;
        for n in 1..=bench.bcd_iters {
            let theta: Vec<PmfVector> = (0..obs.users().len()).map(|k| model.theta_at(k)).collect();
            for (pos, &item) in obs.items().iter().enumerate() {
                let p = q2_at(&obs, &theta, pos, cfg.mu)?;
                let (_, best) = solve_binary_exhaustive(&p)?;
                let value = match mode {
                    Q2Mode::Exhaustive => best,
                    Q2Mode::Sdr => {
                        let sdr = SdrConfig {
                            m_rnd: cfg.sdr.m_rnd,
                            seed: item_seed(cfg.seed, item, n),
                        };
                        g_value(&p, &sdr_candidate(&p, &sdr, &cfg.sdp)?)?
                    }
                };
                instances += 1;
                if value > best + VALUE_TOL * best.abs().max(1.0) {
                    mismatches += 1;
                }
            }
            model = ikm_step(&model, &obs, &cfg, n)?.0;
        }
    }
    Ok(BenchRow {
        dim: base.dim,
        instances,
        mismatches,
        rate: mismatches as f64 / instances as f64,
    })
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
