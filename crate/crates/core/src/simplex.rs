//! Mappings from score vectors onto the probability simplex.
//!
//! Three transforms share one family: softmax (`alpha = 1`), sparsemax
//! (`alpha = 2`, the Euclidean projection onto the simplex) and general
//! `alpha`-entmax, the maximizer of `p·s + H_alpha(p)` where `H_alpha` is the
//! Tsallis entropy. For `alpha > 1` the output can contain exact zeros, and the
//! set of positive entries is the *support*.
//!
//! Every transform honours a validity mask: masked positions behave as if
//! their score were `-inf` and always receive probability zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection results below this are clamped to zero so supports are exact.
const ENTMAX_ZERO_CLAMP: f64 = 1e-12;
const ENTMAX_TOL: f64 = 1e-12;
const ENTMAX_MAX_ITERS: usize = 100;

/// Scores plus a mask of valid positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScoreVector {
    /// All positions valid.
    pub fn new(scores: Vec<f64>) -> Self {
        let mask = vec![true; scores.len()];
        ScoreVector { scores, mask }
    }

    pub fn masked(scores: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if scores.len() != mask.len() {
            return Err(Error::Shape {
                op: "score mask",
                lhs: vec![scores.len()],
                rhs: vec![mask.len()],
            });
        }
        Ok(ScoreVector { scores, mask })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn is_valid(&self, i: usize) -> bool {
        self.mask[i] && self.scores[i] != f64::NEG_INFINITY
    }

    fn valid_indices(&self) -> Result<Vec<usize>> {
        if let Some(i) = self
            .scores
            .iter()
            .enumerate()
            .find(|&(i, s)| self.mask[i] && s.is_nan())
        {
            return Err(Error::Domain(format!("NaN score at position {}", i.0)));
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.is_valid(i)).collect();
        if idx.is_empty() {
            return Err(Error::EmptyInput("every score position is masked"));
        }
        Ok(idx)
    }
}

/// A point on the probability simplex with its support set.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    support: Vec<usize>,
}

impl Distribution {
    /// Wraps probabilities, deriving the support as the strictly positive entries.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Domain(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self::from_probs_unchecked(probs))
    }

    fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        let support = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect();
        Distribution { probs, support }
    }

    /// One-hot on position `i` of an `n`-simplex.
    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self::from_probs_unchecked(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Which simplex mapping an attention head uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Softmax,
    Sparsemax,
    Entmax { alpha: f64 },
}

impl Transform {
    /// The 1.5-entmax head.
    pub const ENTMAX15: Transform = Transform::Entmax { alpha: 1.5 };

    pub fn alpha(&self) -> f64 {
        match *self {
            Transform::Softmax => 1.0,
            Transform::Sparsemax => 2.0,
            Transform::Entmax { alpha } => alpha,
        }
    }

    /// Whether the transform can produce exact zeros.
    pub fn is_sparse(&self) -> bool {
        self.alpha() > 1.0
    }

    pub fn apply(&self, s: &ScoreVector) -> Result<Distribution> {
        match *self {
            Transform::Softmax => softmax(s),
            Transform::Sparsemax => sparsemax(s),
            Transform::Entmax { alpha } => entmax(s, alpha),
        }
    }

    /// Jacobian-vector product at the output `p`. Every Jacobian here is
    /// symmetric, so this is also the vector-Jacobian product.
    pub fn jvp(&self, p: &Distribution, v: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Transform::Softmax => Ok(softmax_jvp(p, v)),
            Transform::Sparsemax => sparsemax_jvp(p, v),
            Transform::Entmax { alpha: 1.0 } => Ok(softmax_jvp(p, v)),
            Transform::Entmax { alpha } => entmax_jvp(p, v, alpha),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Transform::Softmax => "softmax".into(),
            Transform::Sparsemax => "sparsemax".into(),
            Transform::Entmax { alpha } => format!("{alpha}-entmax"),
        }
    }

    /// Parses `softmax`, `sparsemax`, `entmax` (1.5) or `entmax:<alpha>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Transform::Softmax),
            "sparsemax" => Ok(Transform::Sparsemax),
            "entmax" | "entmax15" | "1.5-entmax" => Ok(Transform::ENTMAX15),
            other => {
                let alpha = other
                    .strip_prefix("entmax:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown transform {other:?}")))?;
                if alpha < 1.0 {
                    return Err(Error::Domain(format!(
                        "entmax alpha must be >= 1, got {alpha}"
                    )));
                }
                Ok(Transform::Entmax { alpha })
            }
        }
    }
}

fn scatter(n: usize, idx: &[usize], vals: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&i, &v) in idx.iter().zip(vals) {
        out[i] = v;
    }
    out
}

pub fn softmax(s: &ScoreVector) -> Result<Distribution> {
    let idx = s.valid_indices()?;
    let max = idx
        .iter()
        .map(|&i| s.scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = idx.iter().map(|&i| (s.scores[i] - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let vals: Vec<f64> = exps.iter().map(|e| e / z).collect();
    Ok(Distribution::from_probs_unchecked(scatter(
        s.len(),
        &idx,
        &vals,
    )))
}

/// Sort-based exact Euclidean projection onto the simplex.
pub fn sparsemax(s: &ScoreVector) -> Result<Distribution> {
    let idx = s.valid_indices()?;
    if idx.len() == 1 {
        return Ok(Distribution::one_hot(s.len(), idx[0]));
    }
    let z: Vec<f64> = idx.iter().map(|&i| s.scores[i]).collect();
    let tau = sparsemax_threshold(&z);
    let vals: Vec<f64> = z.iter().map(|&v| (v - tau).max(0.0)).collect();
    Ok(Distribution::from_probs_unchecked(scatter(
        s.len(),
        &idx,
        &vals,
    )))
}

fn sparsemax_threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut k_star = 1;
    let mut sum_star = sorted[0];
    for (k0, &zk) in sorted.iter().enumerate() {
        cumsum += zk;
        let k = (k0 + 1) as f64;
        if 1.0 + k * zk > cumsum {
            k_star = k0 + 1;
            sum_star = cumsum;
        }
    }
    (sum_star - 1.0) / k_star as f64
}

/// `alpha`-entmax. `alpha = 1` and `alpha = 2` dispatch to the closed forms;
/// any other `alpha > 1` solves for the threshold by bisection.
pub fn entmax(s: &ScoreVector, alpha: f64) -> Result<Distribution> {
    if !(alpha >= 1.0) {
        return Err(Error::Domain(format!(
            "entmax alpha must be >= 1, got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return softmax(s);
    }
    if alpha == 2.0 {
        return sparsemax(s);
    }
    entmax_bisect(s, alpha)
}

/// `alpha`-entmax by bisection on the threshold, for any `alpha > 1`
/// (including 2, where [`sparsemax`] is the closed form).
pub fn entmax_bisect(s: &ScoreVector, alpha: f64) -> Result<Distribution> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!(
            "bisection entmax needs alpha > 1, got {alpha}"
        )));
    }
    let idx = s.valid_indices()?;
    let am1 = alpha - 1.0;
    let inv = 1.0 / am1;
    let x: Vec<f64> = idx.iter().map(|&i| am1 * s.scores[i]).collect();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let eval = |tau: f64| -> (Vec<f64>, f64) {
        let p: Vec<f64> = x.iter().map(|&xi| (xi - tau).max(0.0).powf(inv)).collect();
        let total = p.iter().sum();
        (p, total)
    };
    let (mut lo, mut hi) = (min - 1.0, max);
    let mut p = Vec::new();
    for _ in 0..ENTMAX_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let (cand, total) = eval(mid);
        p = cand;
        if (total - 1.0).abs() <= ENTMAX_TOL {
            break;
        }
        if total > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for v in p.iter_mut() {
        if *v < ENTMAX_ZERO_CLAMP {
            *v = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFinite {
            what: "entmax normalizer".into(),
            step: 0,
        });
    }
    for v in p.iter_mut() {
        *v /= total;
    }
    Ok(Distribution::from_probs_unchecked(scatter(
        s.len(),
        &idx,
        &p,
    )))
}

/// Tsallis entropy `H_alpha(p)`; Shannon (natural log) at `alpha = 1`.
pub fn tsallis_entropy(p: &Distribution, alpha: f64) -> f64 {
    if alpha == 1.0 {
        -p.probs
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| q * q.ln())
            .sum::<f64>()
    } else {
        p.probs.iter().map(|&q| q - q.powf(alpha)).sum::<f64>() / (alpha * (alpha - 1.0))
    }
}

pub fn softmax_jvp(p: &Distribution, v: &[f64]) -> Vec<f64> {
    let pv: f64 = p.probs.iter().zip(v).map(|(a, b)| a * b).sum();
    p.probs
        .iter()
        .zip(v)
        .map(|(pi, vi)| pi * (vi - pv))
        .collect()
}

/// `J v` for sparsemax: centre `v` over the support, zero elsewhere.
pub fn sparsemax_jvp(p: &Distribution, v: &[f64]) -> Result<Vec<f64>> {
    check_jvp(p, v)?;
    let mean = p.support.iter().map(|&i| v[i]).sum::<f64>() / p.support.len() as f64;
    let mut out = vec![0.0; p.len()];
    for &i in &p.support {
        out[i] = v[i] - mean;
    }
    Ok(out)
}

/// `J v` for `alpha`-entmax with `g = p^(2 - alpha)` on the support.
pub fn entmax_jvp(p: &Distribution, v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!(
            "entmax_jvp needs alpha > 1, got {alpha}"
        )));
    }
    check_jvp(p, v)?;
    let mut g = vec![0.0; p.len()];
    for &i in &p.support {
        g[i] = p.probs[i].powf(2.0 - alpha);
    }
    let gsum: f64 = g.iter().sum();
    let gv: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    let q = gv / gsum;
    Ok(g.iter().zip(v).map(|(gi, vi)| gi * vi - q * gi).collect())
}

fn check_jvp(p: &Distribution, v: &[f64]) -> Result<()> {
    if p.support.is_empty() {
        return Err(Error::Contract("distribution has empty support".into()));
    }
    if v.len() != p.len() {
        return Err(Error::Shape {
            op: "jvp",
            lhs: vec![p.len()],
            rhs: vec![v.len()],
        });
    }
    Ok(())
}
