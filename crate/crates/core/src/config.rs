//! Run configuration: a TOML file with one section per component, plus
//! `section.key=value` overrides applied before validation.
//!
//! ```toml
//! [train]
//! dim = 8
//! bcd_iters = 5
//! q2_mode = "sdr"
//!
//! [fw]
//! max_iters = 500
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::binary::{Q2Mode, SdrConfig};
use crate::data::EvalConfig;
use crate::error::{KmError, Result};
use crate::rules::DEFAULT_MIN_BETA;
use crate::sdp::SdpConfig;
use crate::simplex::FwConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub dim: usize,
    pub bcd_iters: usize,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
    pub q2_mode: Q2Mode,
    pub restarts: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            dim: t.dim,
            bcd_iters: t.bcd_iters,
            lambda: t.lambda,
            mu: t.mu,
            seed: t.seed,
            q2_mode: t.q2_mode,
            restarts: t.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdrSection {
    /// Gaussian rounding draws per item.
    pub m_rnd: usize,
}

impl Default for SdrSection {
    fn default() -> Self {
        SdrSection {
            m_rnd: SdrConfig::default().m_rnd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulesSection {
    pub min_beta: f64,
}

impl Default for RulesSection {
    fn default() -> Self {
        RulesSection {
            min_beta: DEFAULT_MIN_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            lambdas: vec![0.0, 0.1, 1.0],
            mus: vec![0.0, 0.1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub dims: Vec<usize>,
    pub users: usize,
    pub items: usize,
    pub trials: usize,
    pub bcd_iters: usize,
    pub seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            dims: vec![4, 8, 10],
            users: b.users,
            items: b.items,
            trials: b.trials,
            bcd_iters: b.bcd_iters,
            seed: b.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub fw: FwConfig,
    pub sdr: SdrSection,
    pub sdp: SdpConfig,
    pub eval: EvalConfig,
    pub rules: RulesSection,
    pub grid: GridSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `section.key=value` overrides in order, then
    /// deserializes and validates. Override values are read as TOML scalars
    /// or arrays; anything else is taken as a string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| KmError::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| KmError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KmError::InvalidConfig(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.train.dim,
            bcd_iters: self.train.bcd_iters,
            fw: self.fw,
            sdr: SdrConfig {
                m_rnd: self.sdr.m_rnd,
                seed: self.train.seed,
            },
            sdp: self.sdp,
            lambda: self.train.lambda,
            mu: self.train.mu,
            seed: self.train.seed,
            q2_mode: self.train.q2_mode,
            restarts: self.train.restarts,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            users: self.bench.users,
            items: self.bench.items,
            trials: self.bench.trials,
            bcd_iters: self.bench.bcd_iters,
            seed: self.bench.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.eval.validate()?;
        if self.rules.min_beta.is_nan() {
            return Err(KmError::InvalidConfig("rules.min_beta must not be NaN".into()));
        }
        if self.grid.lambdas.iter().chain(&self.grid.mus).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(KmError::InvalidConfig("grid values must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Sets `section.key` in `table` from a `section.key=value` string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| KmError::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| KmError::InvalidConfig(format!("override key {path:?} is not section.key")))?;
    let value = parse_value(raw.trim());
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| KmError::InvalidConfig(format!("{section} is not a section")))?;
    sub.insert(key.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let text = "[train]\ndim = 3\nq2_mode = \"exhaustive\"\n[fw]\nmax_iters = 10\n";
        let cfg = RunConfig::from_toml_with_overrides(
            text,
            &["train.dim=4".into(), "train.q2_mode=sdr".into(), "grid.mus=[0.5]".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.dim, 4);
        assert_eq!(cfg.train.q2_mode, Q2Mode::Sdr);
        assert_eq!(cfg.fw.max_iters, 10);
        assert_eq!(cfg.grid.mus, vec![0.5]);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml_str("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[nope]\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\ndim = 0\n").is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["dim=3".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["train.dim".into()]).is_err());
        assert!(RunConfig::from_toml_str("[eval]\nsplit_fraction = 1.5\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.train.dim = 6;
        cfg.sdp.rank = Some(4);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
