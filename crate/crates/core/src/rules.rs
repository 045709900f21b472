//! Deterministic association rules read off learned indicators.
//!
//! `a_ij = 1` when the support of `psi_j` is contained in that of `psi_i`.
//! Each such pair yields the rule pair "likes i => likes j" and
//! "dislikes j => dislikes i". Items with an all-ones indicator include
//! every other item and form the maximally influential set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};
use crate::model::{IndicatorVector, ItemId, KolmogorovModel};

pub const DEFAULT_MIN_BETA: f64 = 0.5;

/// True iff `psi_j <= psi_i` element-wise.
pub fn support_included(psi_j: &IndicatorVector, psi_i: &IndicatorVector) -> Result<bool> {
    if psi_j.dim() != psi_i.dim() {
        return Err(KmError::dim(psi_i.dim(), psi_j.dim()));
    }
    Ok(psi_j.bits().iter().zip(psi_i.bits()).all(|(&j, &i)| !j || i))
}

/// Dense binary matrix over item positions, zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    a: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.a[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    /// Position pairs `(i, j)` with `a_ij = 1`, row-major.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    pub fn nnz(&self) -> usize {
        self.a.iter().filter(|&&x| x).count()
    }
}

/// Pairwise inclusion test over all items. Rows are computed in parallel.
pub fn build_adjacency(psis: &[IndicatorVector]) -> Result<AdjacencyMatrix> {
    let n = psis.len();
    if let Some(first) = psis.first() {
        if let Some(bad) = psis.iter().find(|p| p.dim() != first.dim()) {
            return Err(KmError::dim(first.dim(), bad.dim()));
        }
    }
    let rows: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| i != j && psis[j].bits().iter().zip(psis[i].bits()).all(|(&b, &a)| !b || a))
                .collect()
        })
        .collect();
    Ok(AdjacencyMatrix {
        n,
        a: rows.into_iter().flatten().collect(),
    })
}

/// `beta_i = (1/n) sum_{j != i} a_ij`.
pub fn influence_scores(a: &AdjacencyMatrix) -> Vec<f64> {
    let n = a.len() as f64;
    (0..a.len())
        .map(|i| a.row(i).iter().filter(|&&x| x).count() as f64 / n)
        .collect()
}

/// Positions of the all-ones indicators.
pub fn maximal_set(psis: &[IndicatorVector]) -> Vec<usize> {
    psis.iter()
        .enumerate()
        .filter(|(_, p)| p.is_all_ones())
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Likes,
    Dislikes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(rename = "if")]
    pub antecedent: ItemId,
    #[serde(rename = "then")]
    pub consequent: ItemId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    /// Item-id pairs `[i, j]` with `a_ij = 1`.
    pub adjacency_nnz: Vec<[ItemId; 2]>,
    pub beta: BTreeMap<ItemId, f64>,
    pub maximal_set: Vec<ItemId>,
    pub rules: Vec<Rule>,
}

impl RuleReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json_string()?.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Builds the adjacency, scores, maximal set and the rule pairs of every
/// row with `beta_i >= min_beta` or `i` in the maximal set.
pub fn mine_rules(model: &KolmogorovModel, min_beta: f64) -> Result<RuleReport> {
    if min_beta.is_nan() {
        return Err(KmError::InvalidConfig("min_beta must not be NaN".into()));
    }
    let items = model.items();
    let psis: Vec<IndicatorVector> = (0..items.len()).map(|k| model.psi_at(k)).collect();
    let a = build_adjacency(&psis)?;
    let beta = influence_scores(&a);
    let maximal = maximal_set(&psis);

    let mut listed = vec![false; items.len()];
    for (i, &b) in beta.iter().enumerate() {
        listed[i] = b >= min_beta;
    }
    for &i in &maximal {
        listed[i] = true;
    }

    let mut rules = Vec::new();
    for (i, j) in a.nonzeros().filter(|&(i, _)| listed[i]) {
        rules.push(Rule {
            antecedent: items[i],
            consequent: items[j],
            direction: Direction::Likes,
        });
        rules.push(Rule {
            antecedent: items[j],
            consequent: items[i],
            direction: Direction::Dislikes,
        });
    }

    Ok(RuleReport {
        adjacency_nnz: a.nonzeros().map(|(i, j)| [items[i], items[j]]).collect(),
        beta: items.iter().copied().zip(beta).collect(),
        maximal_set: maximal.into_iter().map(|k| items[k]).collect(),
        rules,
    })
}
