use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{Explainer, ExplainerConfig, Message};
use crate::game::stats::{acc, csr, explanation_entropy, CommunicationRecord};
use crate::models::{
    fit, AttentionClassifier, BowLayperson, FitOutcome, LaypersonConfig, LaypersonExample,
    TrainConfig,
};
use crate::text::{Corpus, Example};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub train: TrainConfig,
    /// Hypothesis reader sizes of NLI laypeople.
    pub layperson_embed_dim: usize,
    pub layperson_hidden: usize,
    pub seed: u64,
    pub entropy_base: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            train: TrainConfig::communication(),
            layperson_embed_dim: 64,
            layperson_hidden: 64,
            seed: 0,
            entropy_base: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub explainer: String,
    pub classifier: String,
    /// Requested message size; `None` for emergent sizes and full input.
    pub k: Option<usize>,
    pub mean_k: f64,
    pub csr: f64,
    pub acc_l: f64,
    /// Counts indexed `[ŷ][ỹ]`.
    pub confusion: Vec<Vec<usize>>,
    /// Bits (by default) of the pooled word-selection distribution; `None`
    /// when every message was empty.
    pub entropy: Option<f64>,
    pub n: usize,
    pub layperson_dev_csr: Option<f64>,
}

impl RunReport {
    pub fn from_records(
        explainer: &str,
        classifier: &str,
        k: Option<usize>,
        n_classes: usize,
        records: &[CommunicationRecord],
        messages: &[BTreeSet<usize>],
        entropy_base: f64,
    ) -> Result<Self> {
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for r in records {
            if r.y_hat >= n_classes || r.y_tilde >= n_classes {
                return Err(Error::Data(format!(
                    "label outside {n_classes} classes in {}",
                    r.example_id
                )));
            }
            confusion[r.y_hat][r.y_tilde] += 1;
        }
        let entropy = match explanation_entropy(messages, entropy_base) {
            Ok(h) => Some(h),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(RunReport {
            explainer: explainer.to_string(),
            classifier: classifier.to_string(),
            k,
            mean_k: records.iter().map(|r| r.message_size as f64).sum::<f64>()
                / records.len().max(1) as f64,
            csr: csr(records)?,
            acc_l: acc(records)?,
            confusion,
            entropy,
            n: records.len(),
            layperson_dev_csr: None,
        })
    }
}

/// Aligned plain-text table: explainer, k, CSR and ACC_L in percent.
pub fn format_table(reports: &[RunReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.explainer.len())
        .max()
        .unwrap_or(0)
        .max("Explainer".len());
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}",
        "Explainer", "k", "CSR", "ACC_L"
    )
    .unwrap();
    for r in reports {
        writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}",
            r.explainer,
            r.mean_k,
            100.0 * r.csr,
            100.0 * r.acc_l
        )
        .unwrap();
    }
    out
}

/// `k,csr,acc_l` rows; the full-length point is written as `full`.
pub fn curve_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("k,csr,acc_l\n");
    for r in reports {
        let k = r.k.map_or_else(|| "full".to_string(), |k| k.to_string());
        writeln!(out, "{k},{},{}", r.csr, r.acc_l).unwrap();
    }
    out
}

/// Messages and classifier decisions for one split.
pub struct ExplainedSplit {
    pub examples: Vec<Example>,
    pub messages: Vec<Message>,
    pub y_hat: Vec<usize>,
}

impl ExplainedSplit {
    pub fn build(
        explainer: &Explainer<'_>,
        classifier: &AttentionClassifier,
        data: &[Example],
    ) -> Result<Self> {
        let mut messages = Vec::with_capacity(data.len());
        let mut y_hat = Vec::with_capacity(data.len());
        for ex in data {
            y_hat.push(classifier.classify(ex)?.label);
            messages.push(explainer.explain(ex)?);
        }
        Ok(ExplainedSplit {
            examples: data.to_vec(),
            messages,
            y_hat,
        })
    }

    pub fn layperson_items(&self) -> Vec<LaypersonExample> {
        self.messages
            .iter()
            .zip(&self.y_hat)
            .map(|(m, &y)| LaypersonExample {
                bag: m.bag(),
                hypothesis: m.hypothesis.clone(),
                target: y,
            })
            .collect()
    }
}

/// Trains a fresh layperson on messages, keeping the epoch with the best
/// dev CSR.
pub fn train_layperson(
    lcfg: LaypersonConfig,
    train: &[LaypersonExample],
    dev: &[LaypersonExample],
    cfg: &TrainConfig,
) -> Result<(BowLayperson, FitOutcome)> {
    let mut l = BowLayperson::new(lcfg)?;
    let view = l.clone();
    let out = fit(
        &mut l.params,
        train,
        cfg,
        |g, b, ex, _| view.loss(g, b, ex),
        |p| {
            let mut v = view.clone();
            v.params = p.clone();
            v.agreement(dev)
        },
    )?;
    Ok((l, out))
}

/// Runs one (explainer, k) cell: explain every split, train a fresh
/// layperson on train messages, and score it on the test split.
pub fn play(
    classifier: &AttentionClassifier,
    classifier_id: &str,
    explainer: &Explainer<'_>,
    corpus: &Corpus,
    cfg: &GameConfig,
) -> Result<(RunReport, Vec<CommunicationRecord>)> {
    let train = ExplainedSplit::build(explainer, classifier, &corpus.train)?;
    let dev = ExplainedSplit::build(explainer, classifier, &corpus.dev)?;
    let test = ExplainedSplit::build(explainer, classifier, &corpus.test)?;
    let lcfg = LaypersonConfig {
        task: corpus.task,
        vocab_size: corpus.vocab.len(),
        n_classes: corpus.n_classes(),
        embed_dim: cfg.layperson_embed_dim,
        hidden: cfg.layperson_hidden,
        seed: cfg.seed,
    };
    let (layperson, outcome) = train_layperson(
        lcfg,
        &train.layperson_items(),
        &dev.layperson_items(),
        &cfg.train,
    )?;
    let records = score(&layperson, &test)?;
    let sets: Vec<BTreeSet<usize>> = test.messages.iter().map(|m| m.tokens.clone()).collect();
    let mut report = RunReport::from_records(
        &explainer.config().id(),
        classifier_id,
        explainer.config().k,
        corpus.n_classes(),
        &records,
        &sets,
        cfg.entropy_base,
    )?;
    report.layperson_dev_csr = outcome.best_dev;
    Ok((report, records))
}

/// Layperson predictions on an explained split.
pub fn score(layperson: &BowLayperson, split: &ExplainedSplit) -> Result<Vec<CommunicationRecord>> {
    split
        .examples
        .iter()
        .zip(&split.messages)
        .zip(&split.y_hat)
        .map(|((ex, m), &y_hat)| {
            let y_tilde = layperson.predict(&m.bag(), m.hypothesis.as_deref())?;
            Ok(CommunicationRecord::new(
                ex.id.clone(),
                ex.label,
                y_hat,
                y_tilde,
                &m.tokens,
            ))
        })
        .collect()
}

/// A point of a message-size sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPoint {
    K(usize),
    /// The whole input.
    Full,
}

impl SweepPoint {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SweepPoint::Full),
            k => k.parse().map(SweepPoint::K).map_err(|_| {
                Error::Config(format!(
                    "sweep point must be an integer or 'full', got {k:?}"
                ))
            }),
        }
    }
}

/// CSR as a function of message size for one explainer family, with a fresh
/// layperson per point.
pub fn k_sweep(
    classifier: &AttentionClassifier,
    classifier_id: &str,
    base: &ExplainerConfig,
    points: &[SweepPoint],
    corpus: &Corpus,
    cfg: &GameConfig,
) -> Result<Vec<RunReport>> {
    if points.is_empty() {
        return Err(Error::Config("sweep needs at least one point".into()));
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sweep points must be strictly ascending".into(),
        ));
    }
    let longest = [&corpus.train, &corpus.dev, &corpus.test]
        .iter()
        .flat_map(|s| s.iter().map(|e| e.tokens.len()))
        .max()
        .unwrap_or(0);
    points
        .iter()
        .map(|&p| {
            let (k, label) = match p {
                SweepPoint::K(k) => (k, k.to_string()),
                SweepPoint::Full => (longest, "full".to_string()),
            };
            let ecfg = ExplainerConfig {
                k: Some(k),
                ..base.clone()
            };
            let cell = || -> Result<RunReport> {
                let explainer = Explainer::new(ecfg.clone(), Some(classifier), None)?;
                let (mut r, _) = play(classifier, classifier_id, &explainer, corpus, cfg)?;
                if p == SweepPoint::Full {
                    r.k = None;
                    r.explainer = format!("{}@full", base.kind.name());
                }
                Ok(r)
            };
            cell().map_err(|e| Error::Cell {
                cell: format!("k={label}"),
                source: Box::new(e),
            })
        })
        .collect()
}
