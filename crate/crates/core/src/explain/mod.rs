//! Explainers: turn a classifier decision into a bag-of-words message.

mod joint;
mod methods;

pub use joint::{explain_joint, train_joint, JointConfig, JointExplainer, JointItem, JointOutcome};
pub use methods::{
    explain_erasure, explain_human_highlights, explain_random, explain_selective,
    explain_topk_attention, explain_topk_gradient,
};

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{AttentionClassifier, Classifier};
use crate::text::{Example, Vocabulary};

/// Tokens selected from one input, with the positions they came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub tokens: BTreeSet<usize>,
    /// Selected positions in ascending order.
    pub positions: Vec<usize>,
    pub k_requested: Option<usize>,
    /// NLI hypothesis, passed through whole.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<Vec<usize>>,
}

impl Message {
    pub fn from_positions(
        ex: &Example,
        mut positions: Vec<usize>,
        k_requested: Option<usize>,
    ) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if let Some(&bad) = positions.iter().find(|&&p| p >= ex.tokens.len()) {
            return Err(Error::Data(format!(
                "position {bad} outside example {} of length {}",
                ex.id,
                ex.tokens.len()
            )));
        }
        Ok(Message {
            tokens: positions.iter().map(|&p| ex.tokens[p]).collect(),
            positions,
            k_requested,
            hypothesis: ex.hypothesis.clone(),
        })
    }

    /// Number of distinct tokens.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bag(&self) -> Vec<usize> {
        self.tokens.iter().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Random,
    Erasure,
    TopkGradient,
    TopkAttention,
    SelectiveAttention,
    Joint,
    HumanHighlights,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 7] = [
        ExplainerKind::Random,
        ExplainerKind::Erasure,
        ExplainerKind::TopkGradient,
        ExplainerKind::TopkAttention,
        ExplainerKind::SelectiveAttention,
        ExplainerKind::Joint,
        ExplainerKind::HumanHighlights,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::Random => "random",
            ExplainerKind::Erasure => "erasure",
            ExplainerKind::TopkGradient => "topk_gradient",
            ExplainerKind::TopkAttention => "topk_attention",
            ExplainerKind::SelectiveAttention => "selective_attention",
            ExplainerKind::Joint => "joint",
            ExplainerKind::HumanHighlights => "human_highlights",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown explainer {s:?}")))
    }

    fn needs_k(self) -> bool {
        matches!(
            self,
            ExplainerKind::Random
                | ExplainerKind::Erasure
                | ExplainerKind::TopkGradient
                | ExplainerKind::TopkAttention
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub kind: ExplainerKind,
    pub k: Option<usize>,
    pub seed: u64,
}

impl ExplainerConfig {
    pub fn new(kind: ExplainerKind, k: Option<usize>) -> Self {
        ExplainerConfig { kind, k, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.k) {
            (kind, None) if kind.needs_k() => {
                Err(Error::Config(format!("explainer {} needs k", kind.name())))
            }
            (ExplainerKind::SelectiveAttention, Some(_)) => Err(Error::Config(
                "selective attention takes no k: its message size is the attention support".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Stable display id, e.g. `topk_attention@5`.
    pub fn id(&self) -> String {
        match self.k {
            Some(k) => format!("{}@{k}", self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

/// A configured explainer bound to the models it needs.
pub struct Explainer<'a> {
    config: ExplainerConfig,
    classifier: Option<&'a AttentionClassifier>,
    joint: Option<&'a JointExplainer>,
}

impl<'a> Explainer<'a> {
    pub fn new(
        config: ExplainerConfig,
        classifier: Option<&'a AttentionClassifier>,
        joint: Option<&'a JointExplainer>,
    ) -> Result<Self> {
        config.validate()?;
        match config.kind {
            ExplainerKind::Erasure
            | ExplainerKind::TopkGradient
            | ExplainerKind::TopkAttention
            | ExplainerKind::SelectiveAttention
            | ExplainerKind::Joint
                if classifier.is_none() =>
            {
                return Err(Error::Config(format!(
                    "explainer {} needs a classifier",
                    config.kind.name()
                )))
            }
            ExplainerKind::SelectiveAttention
                if !classifier.expect("checked").transform().is_sparse() =>
            {
                return Err(Error::Config(
                    "selective attention needs a sparse (entmax or sparsemax) classifier head"
                        .into(),
                ))
            }
            ExplainerKind::Joint if joint.is_none() => {
                return Err(Error::Config(
                    "joint explainer needs a trained explainer checkpoint".into(),
                ))
            }
            _ => {}
        }
        Ok(Explainer {
            config,
            classifier,
            joint,
        })
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn explain(&self, ex: &Example) -> Result<Message> {
        let k = self.config.k;
        match self.config.kind {
            ExplainerKind::Random => explain_random(ex, k.expect("validated"), self.config.seed),
            ExplainerKind::Erasure => explain_erasure(self.clf(), ex, k.expect("validated")),
            ExplainerKind::TopkGradient => {
                explain_topk_gradient(self.clf(), ex, k.expect("validated"))
            }
            ExplainerKind::TopkAttention => {
                explain_topk_attention(self.clf(), ex, k.expect("validated"))
            }
            ExplainerKind::SelectiveAttention => explain_selective(self.clf(), ex),
            ExplainerKind::Joint => {
                let joint = self.joint.expect("checked");
                let y_hat = self.clf().classify(ex)?.label;
                explain_joint(joint, ex, y_hat, k.unwrap_or(joint.config().default_k))
            }
            ExplainerKind::HumanHighlights => explain_human_highlights(ex),
        }
    }

    fn clf(&self) -> &AttentionClassifier {
        self.classifier.expect("checked at construction")
    }
}

/// Indices of the `k` largest scores among `eligible` positions; ties go to
/// the earlier position. Returned in ranking order.
pub fn top_k(scores: &[f64], k: usize, eligible: Option<&[bool]>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| eligible.is_none_or(|e| e[i]))
        .collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// One line of an explanation dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub example_id: String,
    pub explainer: String,
    pub k: Option<usize>,
    pub message_tokens: Vec<String>,
    pub message_ids: Vec<usize>,
    pub y_hat: usize,
    pub y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_ids: Option<Vec<usize>>,
    /// Layperson prediction, filled in by evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_tilde: Option<usize>,
}

impl ExplanationRecord {
    pub fn new(
        ex: &Example,
        explainer: &str,
        msg: &Message,
        y_hat: usize,
        vocab: &Vocabulary,
    ) -> Self {
        let ids = msg.bag();
        ExplanationRecord {
            example_id: ex.id.clone(),
            explainer: explainer.to_string(),
            k: msg.k_requested,
            message_tokens: vocab.decode(&ids),
            message_ids: ids,
            y_hat,
            y: ex.label,
            hypothesis: msg.hypothesis.as_ref().map(|h| vocab.decode(h)),
            hypothesis_ids: msg.hypothesis.clone(),
            y_tilde: None,
        }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[ExplanationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<ExplanationRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("explanation dump line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Runs `explainer` over `data`, pairing each message with the classifier
/// decision it explains.
pub fn explain_split(
    explainer: &Explainer<'_>,
    classifier: &dyn Classifier,
    data: &[Example],
    vocab: &Vocabulary,
) -> Result<Vec<(Message, ExplanationRecord)>> {
    let id = explainer.config().id();
    data.iter()
        .map(|ex| {
            let y_hat = classifier.predict(ex)?.label;
            let msg = explainer.explain(ex)?;
            let rec = ExplanationRecord::new(ex, &id, &msg, y_hat, vocab);
            Ok((msg, rec))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_by_position() {
        assert_eq!(top_k(&[0.1, 0.5, 0.5, 0.2], 2, None), vec![1, 2]);
        assert_eq!(top_k(&[0.0; 4], 3, None), vec![0, 1, 2]);
        assert_eq!(top_k(&[0.9, 0.5], 5, Some(&[false, true])), vec![1]);
    }

    #[test]
    fn config_k_rules() {
        assert!(ExplainerConfig::new(ExplainerKind::TopkAttention, None)
            .validate()
            .is_err());
        assert!(
            ExplainerConfig::new(ExplainerKind::SelectiveAttention, Some(3))
                .validate()
                .is_err()
        );
        assert!(
            ExplainerConfig::new(ExplainerKind::SelectiveAttention, None)
                .validate()
                .is_ok()
        );
        assert!(ExplainerConfig::new(ExplainerKind::HumanHighlights, None)
            .validate()
            .is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExplainerKind::ALL {
            assert_eq!(ExplainerKind::parse(k.name()).unwrap(), k);
        }
    }

    #[test]
    fn message_dedups_tokens() {
        let ex = Example::text("e", vec![5, 7, 5, 9], 0);
        let m = Message::from_positions(&ex, vec![2, 0, 1], Some(3)).unwrap();
        assert_eq!(m.bag(), vec![5, 7]);
        assert_eq!(m.positions, vec![0, 1, 2]);
        assert!(Message::from_positions(&ex, vec![4], None).is_err());
    }
}
