//! Rating files, train/test splits, error metrics and the (lambda, mu) grid.
//!
//! Ratings are whitespace-separated `user item rating [timestamp]` lines.
//! Each rating `R` on a `1..=r_max` scale becomes the empirical probability
//! `p = R / r_max`.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};
use crate::model::{ItemId, KolmogorovModel, Observation, ObservationSet, PmfVector, UserId};
use crate::train::{train, TrainConfig};
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: UserId,
    pub item: ItemId,
    pub rating: i64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub r_max: u32,
    /// Share of records kept for training.
    pub split_fraction: f64,
    pub split_seed: u64,
    /// Rating-scale normalizer `1 / (r_max - r_min)`, only reported.
    pub eta: f64,
    /// Share of the training records kept when holding out a validation set.
    pub validation_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            r_max: 5,
            split_fraction: 0.8,
            split_seed: 0,
            eta: 0.25,
            validation_fraction: 0.9,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 {
            return Err(KmError::InvalidConfig("r_max must be >= 1".into()));
        }
        for (name, f) in [
            ("split_fraction", self.split_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(KmError::InvalidConfig(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, name: &str, line: usize) -> Result<T> {
    let s = field.ok_or_else(|| KmError::Parse {
        line,
        message: format!("missing {name}"),
    })?;
    s.parse().map_err(|_| KmError::Parse {
        line,
        message: format!("invalid {name} {s:?}"),
    })
}

/// Parses rating lines. Blank lines and `#` comments are skipped; line
/// numbers in errors are 1-based.
pub fn parse_ratings<R: BufRead>(reader: R, r_max: u32) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let user = parse_field(fields.next(), "user id", line_no)?;
        let item = parse_field(fields.next(), "item id", line_no)?;
        let rating: i64 = parse_field(fields.next(), "rating", line_no)?;
        let timestamp = match fields.next() {
            Some(t) => Some(parse_field(Some(t), "timestamp", line_no)?),
            None => None,
        };
        if fields.next().is_some() {
            return Err(KmError::Parse {
                line: line_no,
                message: "expected at most 4 fields".into(),
            });
        }
        if rating < 1 || rating > i64::from(r_max) {
            return Err(KmError::RatingOutOfRange {
                line: line_no,
                rating,
                r_max,
            });
        }
        out.push(RatingRecord {
            user,
            item,
            rating,
            timestamp,
        });
    }
    Ok(out)
}

/// `p = R / r_max` for every record.
pub fn to_observations(records: &[RatingRecord], r_max: u32) -> Result<ObservationSet> {
    ObservationSet::new(
        records
            .iter()
            .map(|r| Observation {
                user: r.user,
                item: r.item,
                p: r.rating as f64 / f64::from(r_max),
            })
            .collect(),
    )
}

pub fn load_ratings<R: BufRead>(reader: R, r_max: u32) -> Result<ObservationSet> {
    to_observations(&parse_ratings(reader, r_max)?, r_max)
}

pub fn load_ratings_file(path: &Path, r_max: u32) -> Result<ObservationSet> {
    load_ratings(BufReader::new(std::fs::File::open(path)?), r_max)
}

/// Writes tab-separated lines readable by [`parse_ratings`].
pub fn write_ratings<W: Write>(records: &[RatingRecord], mut w: W) -> Result<()> {
    for r in records {
        match r.timestamp {
            Some(t) => writeln!(w, "{}\t{}\t{}\t{}", r.user, r.item, r.rating, t)?,
            None => writeln!(w, "{}\t{}\t{}", r.user, r.item, r.rating)?,
        }
    }
    Ok(())
}

/// Seeded global shuffle; the first `round(fraction * n)` records train.
pub fn split(obs: &ObservationSet, fraction: f64, seed: u64) -> Result<(ObservationSet, ObservationSet)> {
    let n = obs.len();
    if n < 2 {
        return Err(KmError::DegenerateSplit(format!("need at least 2 records, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(KmError::DegenerateSplit(format!("fraction {fraction} outside (0, 1)")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(KmError::DegenerateSplit(format!(
            "fraction {fraction} of {n} records leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    let pick = |idx: &[usize]| -> Result<ObservationSet> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        ObservationSet::new(idx.into_iter().map(|k| obs.records()[k]).collect())
    };
    Ok((pick(&order[..n_train])?, pick(&order[n_train..])?))
}

/// Prediction error summary. Unknown users fall back to a uniform PMF and
/// unknown items to an all-ones indicator; those records are counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub rmse: f64,
    pub nrmse: f64,
    pub cold_records: usize,
    pub cold_users: usize,
    pub cold_items: usize,
}

/// `theta_u . psi_i`, using the cold-start defaults for unknown ids.
/// The flag is set when either default was used.
pub fn predict_or_default(model: &KolmogorovModel, user: UserId, item: ItemId) -> (f64, bool) {
    let d = model.dim();
    let uniform;
    let (theta, cold_u) = match model.theta(user) {
        Ok(t) => (t, false),
        Err(_) => {
            uniform = PmfVector::uniform(d);
            (uniform.as_slice(), true)
        }
    };
    match model.psi(item) {
        Ok(psi) => (crate::util::dot(theta, psi), cold_u),
        // All-ones indicator: the whole sample space.
        Err(_) => (theta.iter().sum(), true),
    }
}

pub fn evaluate(model: &KolmogorovModel, obs: &ObservationSet) -> Result<Evaluation> {
    if obs.is_empty() {
        return Err(KmError::EmptyObservations);
    }
    let mut sq = 0.0;
    let mut cold_records = 0;
    for r in obs.records() {
        let (pred, cold) = predict_or_default(model, r.user, r.item);
        sq += (r.p - pred) * (r.p - pred);
        cold_records += usize::from(cold);
    }
    let cold_users = obs.users().iter().filter(|&&u| model.user_position(u).is_none()).count();
    let cold_items = obs.items().iter().filter(|&&i| model.item_position(i).is_none()).count();
    let rmse = (sq / obs.len() as f64).sqrt();
    Ok(Evaluation {
        n: obs.len(),
        rmse,
        nrmse: rmse,
        cold_records,
        cold_users,
        cold_items,
    })
}

pub fn rmse(model: &KolmogorovModel, obs: &ObservationSet) -> Result<f64> {
    Ok(evaluate(model, obs)?.rmse)
}

/// RMSE on probability-scaled data. Since `p = R / r_max` already, this is
/// [`rmse`]; `r_max` only has to be valid.
pub fn nrmse(model: &KolmogorovModel, obs: &ObservationSet, r_max: u32) -> Result<f64> {
    if r_max == 0 {
        return Err(KmError::InvalidConfig("r_max must be >= 1".into()));
    }
    rmse(model, obs)
}

/// Per-entity error summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub id: u64,
    pub n: usize,
    pub rmse: f64,
    pub mean_residual: f64,
}

/// Residuals grouped by user (`by_user = true`) or by item.
pub fn residual_summaries(model: &KolmogorovModel, obs: &ObservationSet, by_user: bool) -> Vec<ResidualSummary> {
    let ids = if by_user { obs.users() } else { obs.items() };
    ids.iter()
        .enumerate()
        .map(|(pos, &id)| {
            let rows = if by_user { obs.user_ratings(pos) } else { obs.item_ratings(pos) };
            let (mut sq, mut sum) = (0.0, 0.0);
            for &(other, p) in rows {
                let (u, i) = if by_user { (id, obs.items()[other]) } else { (obs.users()[other], id) };
                let res = p - predict_or_default(model, u, i).0;
                sq += res * res;
                sum += res;
            }
            let n = rows.len();
            ResidualSummary {
                id,
                n,
                rmse: (sq / n as f64).sqrt(),
                mean_residual: sum / n as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub mu: f64,
    pub validation_nrmse: f64,
    pub train_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_lambda: f64,
    pub best_mu: f64,
    pub best_nrmse: f64,
    pub validation_seed: u64,
    pub table: Vec<GridRow>,
}

impl GridResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.table {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Seed of the validation hold-out inside a grid search.
pub fn validation_seed(split_seed: u64) -> u64 {
    derive_seed(split_seed, &[0x7a11])
}

/// Trains on a seeded `validation_fraction` share of `obs` for every
/// `(lambda, mu)` pair and scores the rest. Returns the best pair; ties go
/// to the lexicographically smallest pair.
pub fn grid_search(
    obs: &ObservationSet,
    lambda_grid: &[f64],
    mu_grid: &[f64],
    base: &TrainConfig,
    eval: &EvalConfig,
) -> Result<GridResult> {
    if lambda_grid.is_empty() || mu_grid.is_empty() {
        return Err(KmError::InvalidConfig("grid search needs non-empty lambda and mu grids".into()));
    }
    eval.validate()?;
    let seed = validation_seed(eval.split_seed);
    let (fit, hold) = split(obs, eval.validation_fraction, seed)?;

    let mut points: Vec<(f64, f64)> = lambda_grid
        .iter()
        .flat_map(|&l| mu_grid.iter().map(move |&m| (l, m)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut seen = HashSet::new();
    points.retain(|&(l, m)| seen.insert((l.to_bits(), m.to_bits())));

    let mut table = Vec::with_capacity(points.len());
    for (lambda, mu) in points {
        let cfg = TrainConfig { lambda, mu, ..*base };
        let outcome = train(&fit, &cfg)?;
        let score = rmse(&outcome.model, &hold)?;
        log::info!("grid lambda={lambda} mu={mu}: validation nrmse {score:.6}");
        table.push(GridRow {
            lambda,
            mu,
            validation_nrmse: score,
            train_objective: outcome.trace.final_objective(),
        });
    }
    let best = table
        .iter()
        .fold(None::<&GridRow>, |best, row| match best {
            Some(b) if !(row.validation_nrmse < b.validation_nrmse) && !b.validation_nrmse.is_nan() => Some(b),
            _ => Some(row),
        })
        .expect("non-empty grid");
    Ok(GridResult {
        best_lambda: best.lambda,
        best_mu: best.mu,
        best_nrmse: best.validation_nrmse,
        validation_seed: seed,
        table,
    })
}
