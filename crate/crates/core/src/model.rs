//! Domain types of a Kolmogorov model.
//!
//! A model assigns every user a probability mass function `theta_u` over `D`
//! elementary events and every item a binary indicator `psi_i` marking which
//! events make up the outcome "1". The probability that user `u` produces
//! outcome 1 on item `i` is the inner product `theta_u . psi_i`; outcome 2 is
//! carried by the complement indicator and is never stored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};

pub type UserId = u64;
pub type ItemId = u64;

/// Allowed drift of a PMF's entry sum away from 1.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Entries below `-NEGATIVITY_TOL` are rejected.
pub const NEGATIVITY_TOL: f64 = 1e-12;

fn pmf_problem(entries: &[f64]) -> Option<String> {
    if entries.is_empty() {
        return Some("no entries".into());
    }
    if let Some((k, v)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Some(format!("entry {k} is not finite ({v})"));
    }
    if let Some((k, v)) = entries.iter().enumerate().find(|(_, &v)| v < -NEGATIVITY_TOL) {
        return Some(format!("entry {k} is negative ({v})"));
    }
    let sum: f64 = entries.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
        return Some(format!("entries sum to {sum}"));
    }
    None
}

/// A point on the unit probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfVector(Vec<f64>);

impl PmfVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        match pmf_problem(&entries) {
            Some(msg) => Err(KmError::InvalidPmf(msg)),
            None => Ok(PmfVector(entries)),
        }
    }

    pub fn uniform(dim: usize) -> Self {
        assert!(dim > 0, "PMF dimension must be positive");
        PmfVector(vec![1.0 / dim as f64; dim])
    }

    /// The simplex vertex `e_j`.
    pub fn vertex(dim: usize, j: usize) -> Self {
        assert!(j < dim, "vertex index out of range");
        let mut v = vec![0.0; dim];
        v[j] = 1.0;
        PmfVector(v)
    }

    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        PmfVector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Probability of the event marked by `psi`.
    pub fn measure(&self, psi: &IndicatorVector) -> f64 {
        self.0
            .iter()
            .zip(psi.values())
            .map(|(t, s)| t * s)
            .sum()
    }
}

/// A {0,1}-valued vector over the elementary events.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndicatorVector(Vec<bool>);

impl IndicatorVector {
    /// Accepts entries that are exactly 0.0 or 1.0.
    pub fn new(entries: &[f64]) -> Result<Self> {
        if entries.is_empty() {
            return Err(KmError::EmptyVector);
        }
        entries
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(KmError::InvalidIndicator(format!("entry {k} is {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(IndicatorVector)
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        IndicatorVector(bits)
    }

    pub fn ones(dim: usize) -> Self {
        IndicatorVector(vec![true; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        IndicatorVector(vec![false; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn is_set(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn complement(&self) -> Self {
        IndicatorVector(self.0.iter().map(|&b| !b).collect())
    }
}

/// Element-wise `1 - psi`: the indicator of outcome 2.
pub fn complement_indicator(psi: &IndicatorVector) -> IndicatorVector {
    psi.complement()
}

/// One empirical probability `p` for the pair (user, item).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub user: UserId,
    pub item: ItemId,
    pub p: f64,
}

/// The training set: sparse empirical probabilities with dense per-user and
/// per-item adjacency lists. Dense indices follow ascending external id.
#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    records: Vec<Observation>,
    users: Vec<UserId>,
    items: Vec<ItemId>,
    user_index: HashMap<UserId, usize>,
    item_index: HashMap<ItemId, usize>,
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
}

impl ObservationSet {
    pub fn new(records: Vec<Observation>) -> Result<Self> {
        for r in &records {
            if !(0.0..=1.0).contains(&r.p) {
                return Err(KmError::InvalidProbability {
                    user: r.user,
                    item: r.item,
                    p: r.p,
                });
            }
        }
        let mut users: Vec<UserId> = records.iter().map(|r| r.user).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<ItemId> = records.iter().map(|r| r.item).collect();
        items.sort_unstable();
        items.dedup();
        let user_index: HashMap<_, _> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
        let item_index: HashMap<_, _> = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();

        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_item = vec![Vec::new(); items.len()];
        for r in &records {
            let u = user_index[&r.user];
            let i = item_index[&r.item];
            by_user[u].push((i, r.p));
            by_item[i].push((u, r.p));
        }
        for (u, list) in by_user.iter_mut().enumerate() {
            list.sort_by_key(|&(i, _)| i);
            if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(KmError::DuplicatePair {
                    user: users[u],
                    item: items[w[0].0],
                });
            }
        }
        for list in &mut by_item {
            list.sort_by_key(|&(u, _)| u);
        }
        Ok(ObservationSet {
            records,
            users,
            items,
            user_index,
            item_index,
            by_user,
            by_item,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    /// Distinct users, ascending.
    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    /// Distinct items, ascending.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn user_position(&self, user: UserId) -> Option<usize> {
        self.user_index.get(&user).copied()
    }

    pub fn item_position(&self, item: ItemId) -> Option<usize> {
        self.item_index.get(&item).copied()
    }

    /// `(item position, p)` pairs observed for the user at `pos`.
    pub fn user_ratings(&self, pos: usize) -> &[(usize, f64)] {
        &self.by_user[pos]
    }

    /// `(user position, p)` pairs observed for the item at `pos`.
    pub fn item_ratings(&self, pos: usize) -> &[(usize, f64)] {
        &self.by_item[pos]
    }
}

/// A single invariant violation reported by [`KolmogorovModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ThetaDimension { user: UserId, found: usize },
    PsiDimension { item: ItemId, found: usize },
    NonFinite { user: UserId, index: usize, value: f64 },
    Negative { user: UserId, index: usize, value: f64 },
    SimplexSum { user: UserId, sum: f64 },
    NonBinary { item: ItemId, index: usize, value: f64 },
    EventLabels { found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ThetaDimension { user, found } => {
                write!(f, "theta[{user}] has dimension {found}")
            }
            Violation::PsiDimension { item, found } => {
                write!(f, "psi[{item}] has dimension {found}")
            }
            Violation::NonFinite { user, index, value } => {
                write!(f, "theta[{user}][{index}] = {value} is not finite")
            }
            Violation::Negative { user, index, value } => {
                write!(f, "theta[{user}][{index}] = {value} is negative")
            }
            Violation::SimplexSum { user, sum } => {
                write!(f, "theta[{user}] sums to {sum}, not 1")
            }
            Violation::NonBinary { item, index, value } => {
                write!(f, "psi[{item}][{index}] = {value} is not 0 or 1")
            }
            Violation::EventLabels { found } => {
                write!(f, "{found} event labels do not match the model dimension")
            }
        }
    }
}

/// A learned (or hand-built) Kolmogorov model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovModel {
    dim: usize,
    users: Vec<UserId>,
    theta: Vec<Vec<f64>>,
    items: Vec<ItemId>,
    psi: Vec<Vec<f64>>,
    event_labels: Option<Vec<String>>,
    user_index: HashMap<UserId, usize>,
    item_index: HashMap<ItemId, usize>,
}

impl KolmogorovModel {
    /// Builds a model and rejects it if any invariant fails.
    pub fn new(
        dim: usize,
        theta: Vec<(UserId, PmfVector)>,
        psi: Vec<(ItemId, IndicatorVector)>,
        event_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let model = Self::from_raw_parts(
            dim,
            theta.into_iter().map(|(u, t)| (u, t.into_vec())).collect(),
            psi.into_iter().map(|(i, p)| (i, p.to_f64())).collect(),
            event_labels,
        )?;
        model.ensure_valid()?;
        Ok(model)
    }

    /// Builds a model without checking the simplex/binarity invariants; use
    /// [`validate`](Self::validate) to inspect the result. Duplicate ids and a
    /// zero dimension are still rejected.
    pub fn from_raw_parts(
        dim: usize,
        theta: Vec<(UserId, Vec<f64>)>,
        psi: Vec<(ItemId, Vec<f64>)>,
        event_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KmError::InvalidModel("dimension must be positive".into()));
        }
        let (users, theta): (Vec<_>, Vec<_>) = theta.into_iter().unzip();
        let (items, psi): (Vec<_>, Vec<_>) = psi.into_iter().unzip();
        let user_index = index_of(&users, "user")?;
        let item_index = index_of(&items, "item")?;
        Ok(KolmogorovModel {
            dim,
            users,
            theta,
            items,
            psi,
            event_labels,
            user_index,
            item_index,
        })
    }

    /// Dense constructor used by the trainer; positions follow `users`/`items`.
    pub(crate) fn from_dense(
        dim: usize,
        users: &[UserId],
        theta: Vec<PmfVector>,
        items: &[ItemId],
        psi: Vec<IndicatorVector>,
    ) -> Self {
        debug_assert_eq!(users.len(), theta.len());
        debug_assert_eq!(items.len(), psi.len());
        KolmogorovModel {
            dim,
            users: users.to_vec(),
            theta: theta.into_iter().map(PmfVector::into_vec).collect(),
            items: items.to_vec(),
            psi: psi.iter().map(IndicatorVector::to_f64).collect(),
            event_labels: None,
            user_index: users.iter().enumerate().map(|(k, &u)| (u, k)).collect(),
            item_index: items.iter().enumerate().map(|(k, &i)| (i, k)).collect(),
        }
    }

    pub fn with_event_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim {
            return Err(KmError::dim(self.dim, labels.len()));
        }
        self.event_labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn event_labels(&self) -> Option<&[String]> {
        self.event_labels.as_deref()
    }

    pub fn user_position(&self, user: UserId) -> Option<usize> {
        self.user_index.get(&user).copied()
    }

    pub fn item_position(&self, item: ItemId) -> Option<usize> {
        self.item_index.get(&item).copied()
    }

    pub fn theta(&self, user: UserId) -> Result<&[f64]> {
        self.user_position(user)
            .map(|k| self.theta[k].as_slice())
            .ok_or(KmError::UnknownUser(user))
    }

    pub fn psi(&self, item: ItemId) -> Result<&[f64]> {
        self.item_position(item)
            .map(|k| self.psi[k].as_slice())
            .ok_or(KmError::UnknownItem(item))
    }

    /// Theta at dense position `k`, as a PMF. Assumes a valid model.
    pub fn theta_at(&self, k: usize) -> PmfVector {
        PmfVector::from_vec_unchecked(self.theta[k].clone())
    }

    /// Psi at dense position `k`. Entries other than exactly 1.0 read as 0.
    pub fn psi_at(&self, k: usize) -> IndicatorVector {
        IndicatorVector::from_bits(self.psi[k].iter().map(|&v| v == 1.0).collect())
    }

    /// `P[X_{u,i} = 1] = theta_u . psi_i`.
    pub fn predict(&self, user: UserId, item: ItemId) -> Result<f64> {
        let t = self.theta(user)?;
        let s = self.psi(item)?;
        Ok(crate::util::dot(t, s))
    }

    /// `P[X_{u,i} = 2]`, through the complement indicator.
    pub fn predict_complement(&self, user: UserId, item: ItemId) -> Result<f64> {
        let t = self.theta(user)?;
        let s = self.psi(item)?;
        Ok(t.iter().zip(s).map(|(t, s)| t * (1.0 - s)).sum())
    }

    /// Squared-error objective over `obs`.
    pub fn objective(&self, obs: &ObservationSet) -> Result<f64> {
        obs.records().iter().try_fold(0.0, |acc, r| {
            let e = self.predict(r.user, r.item)? - r.p;
            Ok(acc + e * e)
        })
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (&user, t) in self.users.iter().zip(&self.theta) {
            if t.len() != self.dim {
                out.push(Violation::ThetaDimension {
                    user,
                    found: t.len(),
                });
                continue;
            }
            let mut finite = true;
            for (index, &value) in t.iter().enumerate() {
                if !value.is_finite() {
                    finite = false;
                    out.push(Violation::NonFinite { user, index, value });
                } else if value < -NEGATIVITY_TOL {
                    out.push(Violation::Negative { user, index, value });
                }
            }
            let sum: f64 = t.iter().sum();
            if finite && (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                out.push(Violation::SimplexSum { user, sum });
            }
        }
        for (&item, s) in self.items.iter().zip(&self.psi) {
            if s.len() != self.dim {
                out.push(Violation::PsiDimension {
                    item,
                    found: s.len(),
                });
                continue;
            }
            for (index, &value) in s.iter().enumerate() {
                if value != 0.0 && value != 1.0 {
                    out.push(Violation::NonBinary { item, index, value });
                }
            }
        }
        if let Some(labels) = &self.event_labels {
            if labels.len() != self.dim {
                out.push(Violation::EventLabels {
                    found: labels.len(),
                });
            }
        }
        out
    }

    fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(KmError::InvalidModel(msg.join("; ")))
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = ModelDocumentOut {
            dim: self.dim,
            event_labels: self.event_labels.clone().unwrap_or_default(),
            theta: self
                .users
                .iter()
                .zip(&self.theta)
                .map(|(&u, t)| (u, t.clone()))
                .collect(),
            psi: self
                .items
                .iter()
                .zip(&self.psi)
                .map(|(&i, s)| (i, s.iter().map(|&v| u8::from(v == 1.0)).collect()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json_string()?.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Parses the JSON document without enforcing invariants.
    pub fn from_json_str_unchecked(s: &str) -> Result<Self> {
        let doc: ModelDocumentIn = serde_json::from_str(s)?;
        let labels = if doc.event_labels.is_empty() {
            None
        } else {
            Some(doc.event_labels)
        };
        Self::from_raw_parts(
            doc.dim,
            doc.theta.into_iter().collect(),
            doc.psi.into_iter().collect(),
            labels,
        )
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model = Self::from_json_str_unchecked(s)?;
        model.ensure_valid()?;
        Ok(model)
    }

    pub fn read_json<R: Read>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }
}

fn index_of(ids: &[u64], kind: &'static str) -> Result<HashMap<u64, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (k, &id) in ids.iter().enumerate() {
        if map.insert(id, k).is_some() {
            return Err(KmError::InvalidModel(format!("duplicate {kind} id {id}")));
        }
    }
    Ok(map)
}

#[derive(Serialize)]
struct ModelDocumentOut {
    #[serde(rename = "D")]
    dim: usize,
    event_labels: Vec<String>,
    theta: BTreeMap<UserId, Vec<f64>>,
    psi: BTreeMap<ItemId, Vec<u8>>,
}

#[derive(Deserialize)]
struct ModelDocumentIn {
    #[serde(rename = "D")]
    dim: usize,
    #[serde(default)]
    event_labels: Vec<String>,
    theta: BTreeMap<UserId, Vec<f64>>,
    psi: BTreeMap<ItemId, Vec<f64>>,
}

/// The 2-user, 2-item, D=3 model on a 10-star scale used throughout the tests
/// and docs: p = [[0.3, 0.5], [0.1, 0.2]] is reproduced exactly.
pub fn toy_model() -> KolmogorovModel {
    KolmogorovModel::new(
        3,
        vec![
            (1, PmfVector::new(vec![0.2, 0.3, 0.5]).unwrap()),
            (2, PmfVector::new(vec![0.1, 0.1, 0.8]).unwrap()),
        ],
        vec![
            (1, IndicatorVector::new(&[0.0, 1.0, 0.0]).unwrap()),
            (2, IndicatorVector::new(&[1.0, 1.0, 0.0]).unwrap()),
        ],
        Some(vec!["Action".into(), "SciFi".into(), "Drama".into()]),
    )
    .expect("toy model is valid")
}

/// The observations the toy model reproduces.
pub fn toy_observations() -> ObservationSet {
    ObservationSet::new(vec![
        Observation { user: 1, item: 1, p: 0.3 },
        Observation { user: 1, item: 2, p: 0.5 },
        Observation { user: 2, item: 1, p: 0.1 },
        Observation { user: 2, item: 2, p: 0.2 },
    ])
    .expect("toy observations are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toy_predictions() {
        let m = toy_model();
        assert!((m.predict(1, 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((m.predict(1, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.predict(2, 1).unwrap() - 0.1).abs() < 1e-15);
        assert!((m.predict(2, 2).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn predict_unknown_ids() {
        let m = toy_model();
        assert!(matches!(m.predict(9, 1), Err(KmError::UnknownUser(9))));
        assert!(matches!(m.predict(1, 9), Err(KmError::UnknownItem(9))));
    }

    #[test]
    fn predict_extreme_indicators() {
        let theta = PmfVector::new(vec![0.25, 0.6, 0.15]).unwrap();
        assert_eq!(theta.measure(&IndicatorVector::zeros(3)), 0.0);
        assert!((theta.measure(&IndicatorVector::ones(3)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn complement_examples() {
        let psi = IndicatorVector::new(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            complement_indicator(&psi),
            IndicatorVector::new(&[1.0, 0.0, 1.0]).unwrap()
        );
        assert_eq!(
            complement_indicator(&IndicatorVector::zeros(4)),
            IndicatorVector::ones(4)
        );
        assert_eq!(complement_indicator(&complement_indicator(&psi)), psi);
    }

    #[test]
    fn objective_examples() {
        let m = toy_model();
        assert!(m.objective(&toy_observations()).unwrap() < 1e-30);
        assert_eq!(m.objective(&ObservationSet::default()).unwrap(), 0.0);

        let single = KolmogorovModel::new(
            2,
            vec![(1, PmfVector::new(vec![0.3, 0.7]).unwrap())],
            vec![(1, IndicatorVector::new(&[1.0, 0.0]).unwrap())],
            None,
        )
        .unwrap();
        let obs = ObservationSet::new(vec![Observation { user: 1, item: 1, p: 0.5 }]).unwrap();
        assert!((single.objective(&obs).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn objective_unknown_ids() {
        let obs = ObservationSet::new(vec![Observation { user: 5, item: 1, p: 0.5 }]).unwrap();
        assert!(toy_model().objective(&obs).is_err());
    }

    #[test]
    fn validate_reports_violations() {
        assert!(toy_model().validate().is_empty());

        let bad_sum =
            KolmogorovModel::from_raw_parts(2, vec![(1, vec![0.5, 0.6])], vec![], None).unwrap();
        assert!(matches!(
            bad_sum.validate().as_slice(),
            [Violation::SimplexSum { user: 1, .. }]
        ));

        let bad_psi =
            KolmogorovModel::from_raw_parts(2, vec![], vec![(3, vec![0.5, 1.0])], None).unwrap();
        assert!(matches!(
            bad_psi.validate().as_slice(),
            [Violation::NonBinary { item: 3, index: 0, .. }]
        ));

        let negative =
            KolmogorovModel::from_raw_parts(2, vec![(1, vec![-0.1, 1.1])], vec![], None).unwrap();
        assert!(negative
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::Negative { index: 0, .. })));
    }

    #[test]
    fn pmf_tolerances() {
        assert!(PmfVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
        assert!(PmfVector::new(vec![0.5, 0.5 + 2e-9]).is_err());
        assert!(PmfVector::new(vec![-5e-13, 1.0]).is_ok());
        assert!(PmfVector::new(vec![-2e-12, 1.0 + 2e-12]).is_err());
        assert!(PmfVector::new(vec![]).is_err());
        assert!(IndicatorVector::new(&[1.0, 1e-300]).is_err());
    }

    #[test]
    fn observation_set_rejects_duplicates_and_bad_p() {
        let dup = ObservationSet::new(vec![
            Observation { user: 1, item: 2, p: 0.1 },
            Observation { user: 1, item: 2, p: 0.2 },
        ]);
        assert!(matches!(dup, Err(KmError::DuplicatePair { user: 1, item: 2 })));
        let bad = ObservationSet::new(vec![Observation { user: 1, item: 2, p: 1.5 }]);
        assert!(matches!(bad, Err(KmError::InvalidProbability { .. })));
        let nan = ObservationSet::new(vec![Observation { user: 1, item: 2, p: f64::NAN }]);
        assert!(nan.is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = toy_model();
        let s = m.to_json_string().unwrap();
        assert!(s.contains("\"D\": 3"));
        let back = KolmogorovModel::from_json_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_invalid_model() {
        let s = r#"{"D":2,"event_labels":[],"theta":{"1":[0.5,0.6]},"psi":{"1":[0,1]}}"#;
        assert!(KolmogorovModel::from_json_str(s).is_err());
        let raw = KolmogorovModel::from_json_str_unchecked(s).unwrap();
        assert_eq!(raw.validate().len(), 1);
    }

    fn simplex_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, d).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn prediction_in_unit_interval_and_complements(
            theta in simplex_point(6),
            bits in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let t = PmfVector::from_vec_unchecked(theta);
            let psi = IndicatorVector::from_bits(bits);
            let p = t.measure(&psi);
            let q = t.measure(&complement_indicator(&psi));
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p));
            prop_assert!((p + q - 1.0).abs() < 1e-12);
        }

        #[test]
        fn objective_invariant_under_event_relabeling(
            thetas in proptest::collection::vec(simplex_point(4), 3),
            psis in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 4), 3),
            ps in proptest::collection::vec(0.0f64..=1.0, 9),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let build = |perm: &[usize]| {
                KolmogorovModel::from_raw_parts(
                    4,
                    thetas.iter().enumerate().map(|(u, t)| (u as u64, perm.iter().map(|&k| t[k]).collect())).collect(),
                    psis.iter().enumerate().map(|(i, s)| (i as u64, perm.iter().map(|&k| if s[k] {1.0} else {0.0}).collect())).collect(),
                    None,
                ).unwrap()
            };
            let mut records = Vec::new();
            for u in 0..3u64 {
                for i in 0..3u64 {
                    records.push(Observation { user: u, item: i, p: ps[(u * 3 + i) as usize] });
                }
            }
            let obs = ObservationSet::new(records).unwrap();
            let a = build(&[0, 1, 2, 3]).objective(&obs).unwrap();
            let b = build(&perm).objective(&obs).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
