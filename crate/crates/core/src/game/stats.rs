use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One round of the game: what the classifier decided, what the layperson
/// recovered from the message, and the gold label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationRecord {
    pub example_id: String,
    pub y: usize,
    pub y_hat: usize,
    pub y_tilde: usize,
    pub message: Vec<usize>,
    pub message_size: usize,
}

impl CommunicationRecord {
    pub fn new(
        example_id: impl Into<String>,
        y: usize,
        y_hat: usize,
        y_tilde: usize,
        message: &BTreeSet<usize>,
    ) -> Self {
        CommunicationRecord {
            example_id: example_id.into(),
            y,
            y_hat,
            y_tilde,
            message: message.iter().copied().collect(),
            message_size: message.len(),
        }
    }
}

/// Communication success rate: fraction of records with `ỹ = ŷ`.
pub fn csr(records: &[CommunicationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("CSR of an empty record list"));
    }
    Ok(records.iter().filter(|r| r.y_tilde == r.y_hat).count() as f64 / records.len() as f64)
}

/// Layperson accuracy: fraction of records with `ỹ = y`.
pub fn acc(records: &[CommunicationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty record list"));
    }
    Ok(records.iter().filter(|r| r.y_tilde == r.y).count() as f64 / records.len() as f64)
}

/// Shannon entropy of the pooled word-selection frequencies, in `base`.
pub fn explanation_entropy<'a, I>(messages: I, base: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a BTreeSet<usize>>,
{
    if !(base > 0.0) || base == 1.0 {
        return Err(Error::Domain(format!(
            "entropy base must be positive and not 1, got {base}"
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for m in messages {
        for &w in m {
            *counts.entry(w).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("entropy of empty messages"));
    }
    let ln_base = base.ln();
    let h: f64 = counts
        .values()
        .map(|&c| {
            let f = c as f64 / total as f64;
            -f * f.ln() / ln_base
        })
        .sum();
    Ok(h.max(0.0))
}

/// Jaccard similarity; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean per-example Jaccard overlap of two explainers' messages, aligned by
/// example id.
pub fn word_overlap(
    a: &[(String, BTreeSet<usize>)],
    b: &[(String, BTreeSet<usize>)],
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "{} messages vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric("overlap of no messages"));
    }
    let mut sum = 0.0;
    for ((ida, ma), (idb, mb)) in a.iter().zip(b) {
        if ida != idb {
            return Err(Error::Alignment(format!("example {ida} paired with {idb}")));
        }
        sum += jaccard(ma, mb);
    }
    Ok(sum / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Observed agreement.
    pub p_o: f64,
    /// Chance agreement from the marginals.
    pub p_e: f64,
    /// Cohen's kappa.
    pub kappa: f64,
    /// Set when `p_e = 1`, where kappa is 1 by convention.
    pub degenerate: bool,
}

/// Observed agreement and Cohen's kappa between two annotators.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<Agreement> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "{} labels vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric("agreement of no labels"));
    }
    let n = a.len();
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let mut ma: HashMap<usize, usize> = HashMap::new();
    let mut mb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let chance: u128 = ma
        .iter()
        .map(|(label, &ca)| ca as u128 * mb.get(label).copied().unwrap_or(0) as u128)
        .sum();
    let n2 = (n as u128) * (n as u128);
    let p_o = agree as f64 / n as f64;
    if chance == n2 {
        return Ok(Agreement {
            p_o,
            p_e: 1.0,
            kappa: 1.0,
            degenerate: true,
        });
    }
    let p_e = chance as f64 / n2 as f64;
    Ok(Agreement {
        p_o,
        p_e,
        kappa: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}
