//! The indicator subproblem: a binary quadratic program
//!
//! ```text
//! minimize  g(psi) = psi' S psi - 2 (v - mu/2 1)' psi   over psi in {0,1}^D
//! ```
//!
//! solved approximately by lifting to a +/-1 quadratic form, relaxing to a
//! unit-diagonal SDP and rounding Gaussian samples through the SDP factor,
//! or exactly by enumeration when D is small.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KmError, Result};
use crate::model::IndicatorVector;
use crate::sdp::{solve_sdp, GramFactor, SdpConfig};
use crate::util::{derive_seed, max_asymmetry, rng, symmetry_tolerance};

/// Largest D accepted by the exhaustive solver.
pub const MAX_EXHAUSTIVE_DIM: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryQpProblem {
    s: DMatrix<f64>,
    v: DVector<f64>,
    mu: f64,
}

impl BinaryQpProblem {
    pub fn new(s: DMatrix<f64>, v: DVector<f64>, mu: f64) -> Result<Self> {
        if s.nrows() == 0 {
            return Err(KmError::EmptyVector);
        }
        if s.nrows() != s.ncols() {
            return Err(KmError::dim(s.nrows(), s.ncols()));
        }
        if v.len() != s.nrows() {
            return Err(KmError::dim(s.nrows(), v.len()));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(KmError::InvalidProblem(format!(
                "regularizer must be finite and >= 0, got {mu}"
            )));
        }
        if s.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(KmError::Numerical("non-finite entry in S or v".into()));
        }
        let asym = max_asymmetry(&s);
        if asym > symmetry_tolerance(&s) {
            return Err(KmError::NotSymmetric(asym));
        }
        Ok(BinaryQpProblem { s, v, mu })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `v - (mu/2) 1`: the linear term with the l1 penalty folded in.
    pub fn effective_linear(&self) -> DVector<f64> {
        self.v.map(|x| x - 0.5 * self.mu)
    }

    fn value_unchecked(&self, bits: &[bool]) -> f64 {
        let veff = self.effective_linear();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (a, &ba) in bits.iter().enumerate() {
            if !ba {
                continue;
            }
            lin += veff[a];
            for (b, &bb) in bits.iter().enumerate() {
                if bb {
                    quad += self.s[(a, b)];
                }
            }
        }
        quad - 2.0 * lin
    }
}

/// `g(psi)`, dropping the constant that does not depend on `psi`.
pub fn g_value(p: &BinaryQpProblem, psi: &IndicatorVector) -> Result<f64> {
    if psi.dim() != p.dim() {
        return Err(KmError::dim(p.dim(), psi.dim()));
    }
    Ok(p.value_unchecked(psi.bits()))
}

/// The +/-1 form of a binary QP: `g(psi) = x' S~ x + offset` for
/// `x = [2 psi - 1; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedProblem {
    pub s_tilde: DMatrix<f64>,
    pub offset: f64,
}

impl HomogenizedProblem {
    pub fn size(&self) -> usize {
        self.s_tilde.nrows()
    }

    /// `x' S~ x`.
    pub fn lifted_value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(&self.s_tilde * &x))
    }
}

pub fn homogenize(p: &BinaryQpProblem) -> HomogenizedProblem {
    let d = p.dim();
    let veff = p.effective_linear();
    let ones = DVector::from_element(d, 1.0);
    let t_tilde = &veff - (&p.s * &ones) * 0.5;
    let mut s_tilde = DMatrix::zeros(d + 1, d + 1);
    s_tilde.view_mut((0, 0), (d, d)).copy_from(&(&p.s * 0.25));
    for k in 0..d {
        s_tilde[(k, d)] = -0.5 * t_tilde[k];
        s_tilde[(d, k)] = -0.5 * t_tilde[k];
    }
    let offset = 0.25 * p.s.sum() - veff.sum();
    HomogenizedProblem { s_tilde, offset }
}

/// `x = [2 psi - 1; 1]`.
pub fn lift(psi: &IndicatorVector) -> Vec<f64> {
    psi.bits()
        .iter()
        .map(|&b| if b { 1.0 } else { -1.0 })
        .chain(std::iter::once(1.0))
        .collect()
}

/// Maps a +/-1 vector of length D+1 back to an indicator, using the last
/// coordinate as the sign reference: `z = x[..D] * x[D]`, `psi = (z + 1) / 2`.
pub fn dehomogenize(x: &[f64]) -> IndicatorVector {
    let (z, w) = x.split_at(x.len() - 1);
    let w = if w[0] < 0.0 { -1.0 } else { 1.0 };
    IndicatorVector::from_bits(z.iter().map(|&zk| sign(zk) * w > 0.0).collect())
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Global minimizer of `g` by Gray-code enumeration of {0,1}^D. Ties go to
/// the lexicographically smallest indicator.
pub fn solve_binary_exhaustive(p: &BinaryQpProblem) -> Result<(IndicatorVector, f64)> {
    let d = p.dim();
    if d > MAX_EXHAUSTIVE_DIM {
        return Err(KmError::DimensionTooLarge {
            dim: d,
            max: MAX_EXHAUSTIVE_DIM,
        });
    }
    let veff = p.effective_linear();
    let scale = p.s.amax().max(veff.amax()).max(1.0) * (d as f64);
    let tie = 1e-12 * scale;

    let mut bits = vec![false; d];
    // s_psi[a] = (S psi)_a, maintained across single-bit flips.
    let mut s_psi = vec![0.0; d];
    let mut value = 0.0;
    let mut best_bits = bits.clone();
    let mut best_value = 0.0;

    for step in 1u64..(1u64 << d) {
        let k = step.trailing_zeros() as usize;
        let delta_sign = if bits[k] { -1.0 } else { 1.0 };
        // g(psi +/- e_k) - g(psi) = +/- 2 (S psi)_k + S_kk -/+ 2 v_k, with
        // S psi taken before the flip.
        value += delta_sign * 2.0 * (s_psi[k] - veff[k]) + p.s[(k, k)];
        bits[k] = !bits[k];
        for (a, sp) in s_psi.iter_mut().enumerate() {
            *sp += delta_sign * p.s[(a, k)];
        }
        if value < best_value - tie || (value <= best_value + tie && bits < best_bits) {
            best_value = value;
            best_bits.clone_from(&bits);
        }
    }

    let value = p.value_unchecked(&best_bits);
    Ok((IndicatorVector::from_bits(best_bits), value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdrConfig {
    /// Number of Gaussian rounding samples.
    pub m_rnd: usize,
    pub seed: u64,
}

impl Default for SdrConfig {
    fn default() -> Self {
        SdrConfig { m_rnd: 50, seed: 0 }
    }
}

impl SdrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_rnd == 0 {
            return Err(KmError::InvalidConfig("sdr.m_rnd must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws `m_rnd` Gaussian directions `u`, forms `sign(V' u)` (with
/// `sign(0) = +1`), keeps the sample with the smallest `x' S~ x`, and maps
/// it back to an indicator.
pub fn randomized_rounding(v: &GramFactor, h: &HomogenizedProblem, cfg: &SdrConfig) -> IndicatorVector {
    let mut r = rng(cfg.seed);
    let vm = v.matrix();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.m_rnd.max(1) {
        let u = DVector::from_fn(v.rank(), |_, _| r.sample::<f64, _>(StandardNormal));
        let x: Vec<f64> = vm.tr_mul(&u).iter().map(|&y| sign(y)).collect();
        let val = h.lifted_value(&x);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, x));
        }
    }
    let (_, x) = best.expect("at least one sample");
    dehomogenize(&x)
}

/// Full relaxation pipeline: homogenize, solve the SDP, round.
pub fn sdr_candidate(p: &BinaryQpProblem, sdr: &SdrConfig, sdp: &SdpConfig) -> Result<IndicatorVector> {
    sdr.validate()?;
    let h = homogenize(p);
    let sol = solve_sdp(&h.s_tilde, sdp, derive_seed(sdr.seed, &[0x5d9]))?;
    Ok(randomized_rounding(&sol.factor, &h, sdr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Q2Mode {
    #[default]
    Sdr,
    Exhaustive,
}

impl std::str::FromStr for Q2Mode {
    type Err = KmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdr" => Ok(Q2Mode::Sdr),
            "exhaustive" => Ok(Q2Mode::Exhaustive),
            other => Err(KmError::InvalidConfig(format!(
                "unknown q2 mode '{other}' (expected sdr or exhaustive)"
            ))),
        }
    }
}

impl std::fmt::Display for Q2Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Q2Mode::Sdr => "sdr",
            Q2Mode::Exhaustive => "exhaustive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub psi: IndicatorVector,
    pub value: f64,
    /// The solver's candidate before the acceptance check.
    pub candidate_value: f64,
    /// False when the candidate was worse and `psi_prev` was kept.
    pub accepted: bool,
}

/// One guarded indicator update: the candidate replaces `psi_prev` only if
/// it does not increase `g`.
pub fn refine_indicator(
    p: &BinaryQpProblem,
    psi_prev: &IndicatorVector,
    sdr: &SdrConfig,
    sdp: &SdpConfig,
    mode: Q2Mode,
) -> Result<Refinement> {
    let prev_value = g_value(p, psi_prev)?;
    let (candidate, candidate_value) = match mode {
        Q2Mode::Exhaustive => solve_binary_exhaustive(p)?,
        Q2Mode::Sdr => {
            let c = sdr_candidate(p, sdr, sdp)?;
            let v = p.value_unchecked(c.bits());
            (c, v)
        }
    };
    if candidate_value <= prev_value {
        Ok(Refinement {
            psi: candidate,
            value: candidate_value,
            candidate_value,
            accepted: true,
        })
    } else {
        Ok(Refinement {
            psi: psi_prev.clone(),
            value: prev_value,
            candidate_value,
            accepted: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(s: DMatrix<f64>, v: Vec<f64>, mu: f64) -> BinaryQpProblem {
        BinaryQpProblem::new(s, DVector::from_vec(v), mu).unwrap()
    }

    #[test]
    fn g_value_examples() {
        let d = 5;
        let p = problem(DMatrix::identity(d, d), vec![1.0; d], 0.0);
        assert_eq!(g_value(&p, &IndicatorVector::ones(d)).unwrap(), -(d as f64));
        assert_eq!(g_value(&p, &IndicatorVector::zeros(d)).unwrap(), 0.0);
        let pm = problem(DMatrix::identity(d, d), vec![1.0; d], 0.3);
        let psi = IndicatorVector::from_bits(vec![true, false, true, true, false]);
        let diff = g_value(&pm, &psi).unwrap() - g_value(&p, &psi).unwrap();
        assert!((diff - 0.9).abs() < 1e-15);
        assert!(g_value(&p, &IndicatorVector::ones(3)).is_err());
    }

    #[test]
    fn homogenization_small_example() {
        let p = problem(DMatrix::identity(2, 2), vec![0.0, 0.0], 0.0);
        let h = homogenize(&p);
        let psi = IndicatorVector::from_bits(vec![true, false]);
        assert_eq!(g_value(&p, &psi).unwrap(), 1.0);
        assert!((h.lifted_value(&lift(&psi)) - 0.5).abs() < 1e-15);
        assert!((h.offset - 0.5).abs() < 1e-15);
        assert_eq!(h.s_tilde[(2, 2)], 0.0);
    }

    #[test]
    fn homogenization_of_zero_problem() {
        let p = problem(DMatrix::zeros(3, 3), vec![0.0; 3], 0.0);
        let h = homogenize(&p);
        assert!(h.s_tilde.iter().all(|&x| x == 0.0));
        assert_eq!(h.offset, 0.0);
    }

    #[test]
    fn dehomogenize_is_sign_symmetric() {
        let psi = IndicatorVector::from_bits(vec![true, false, false, true]);
        let x = lift(&psi);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(dehomogenize(&x), psi);
        assert_eq!(dehomogenize(&neg), psi);
    }

    #[test]
    fn exhaustive_examples() {
        let d = 6;
        let (psi, val) = solve_binary_exhaustive(&problem(DMatrix::identity(d, d), vec![1.0; d], 0.0)).unwrap();
        assert_eq!(psi, IndicatorVector::ones(d));
        assert!((val + d as f64).abs() < 1e-12);
        let (psi, val) = solve_binary_exhaustive(&problem(DMatrix::identity(d, d), vec![0.0; d], 0.0)).unwrap();
        assert_eq!(psi, IndicatorVector::zeros(d));
        assert_eq!(val, 0.0);
        let big = problem(DMatrix::zeros(25, 25), vec![0.0; 25], 0.0);
        assert!(matches!(
            solve_binary_exhaustive(&big),
            Err(KmError::DimensionTooLarge { dim: 25, .. })
        ));
    }

    #[test]
    fn exhaustive_breaks_ties_lexicographically() {
        // g = 0 for every psi.
        let (psi, _) = solve_binary_exhaustive(&problem(DMatrix::zeros(3, 3), vec![0.0; 3], 0.0)).unwrap();
        assert_eq!(psi, IndicatorVector::zeros(3));
        // g = -(psi_0 + psi_1) + 2 psi_0 psi_1: minimizers [1,0] and [0,1].
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (psi, val) = solve_binary_exhaustive(&problem(s, vec![0.5, 0.5], 0.0)).unwrap();
        assert_eq!(psi, IndicatorVector::from_bits(vec![false, true]));
        assert!((val + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_factor_rounds_to_its_indicator() {
        let psi = IndicatorVector::from_bits(vec![false, true, true, false, true]);
        let x = lift(&psi);
        let mut v = DMatrix::zeros(3, x.len());
        for (k, &xk) in x.iter().enumerate() {
            v[(0, k)] = xk;
        }
        let factor = GramFactor::new(v).unwrap();
        let h = homogenize(&problem(DMatrix::identity(5, 5), vec![0.3; 5], 0.0));
        for seed in 0..20 {
            let cfg = SdrConfig { m_rnd: 1, seed };
            assert_eq!(randomized_rounding(&factor, &h, &cfg), psi);
        }
    }

    #[test]
    fn guarded_refine_keeps_optimal_previous() {
        let d = 4;
        let p = problem(DMatrix::identity(d, d), vec![1.0; d], 0.0);
        let best = IndicatorVector::ones(d);
        for mode in [Q2Mode::Sdr, Q2Mode::Exhaustive] {
            let r = refine_indicator(&p, &best, &SdrConfig::default(), &SdpConfig::default(), mode).unwrap();
            assert_eq!(r.psi, best);
            assert!((r.value + d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn q2_mode_parses() {
        assert_eq!("sdr".parse::<Q2Mode>().unwrap(), Q2Mode::Sdr);
        assert_eq!("exhaustive".parse::<Q2Mode>().unwrap(), Q2Mode::Exhaustive);
        assert!("lp".parse::<Q2Mode>().is_err());
    }
}
