//! Human forward-simulation sessions: shuffled word clouds, answers with an
//! unsure flag, and the human CSR/accuracy report.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ExplanationRecord;
use crate::game::{agreement, Agreement};
use crate::text::Task;

pub const DEFAULT_SESSION_ITEMS: usize = 200;

/// One item with its hidden reference labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub id: String,
    pub tokens: Vec<String>,
    pub hypothesis: Option<String>,
    pub y_hat: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub label: usize,
    pub unsure: bool,
    pub ts: u64,
}

/// An append-only answer-log line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerLogEntry {
    pub session: String,
    pub item: String,
    pub label: String,
    pub unsure: bool,
    pub ts: u64,
}

/// What an annotator's client may see.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicItem {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub task: Task,
    pub labels: Vec<String>,
    pub items: Vec<PublicItem>,
    pub answered: Vec<String>,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: String,
    pub explainer: String,
    pub n: usize,
    /// Human CSR over all items, unsure answers included.
    pub csr_h: f64,
    /// Human CSR over items not marked unsure; `None` if all were unsure.
    pub csr_h_excluding_unsure: Option<f64>,
    pub acc_h: f64,
    /// Fraction of answers marked unsure.
    pub unsure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub id: String,
    pub task: Task,
    pub explainer: String,
    pub labels: Vec<String>,
    pub seed: u64,
    pub items: Vec<AnnotationItem>,
    #[serde(default)]
    pub answers: BTreeMap<String, Answer>,
}

impl AnnotationSession {
    /// Draws up to `n_items` records, shuffles their order and the tokens of
    /// each message, all from `seed`.
    pub fn from_records(
        id: impl Into<String>,
        task: Task,
        labels: Vec<String>,
        records: &[ExplanationRecord],
        n_items: usize,
        seed: u64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput(
                "annotation session needs explanation records",
            ));
        }
        let explainer = records[0].explainer.clone();
        if let Some(r) = records.iter().find(|r| r.explainer != explainer) {
            return Err(Error::Data(format!(
                "session mixes explainers {explainer} and {}",
                r.explainer
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<&ExplanationRecord> = records.iter().collect();
        picked.shuffle(&mut rng);
        picked.truncate(n_items);
        let mut items = Vec::with_capacity(picked.len());
        for r in picked {
            if r.y_hat >= labels.len() || r.y >= labels.len() {
                return Err(Error::Data(format!(
                    "record {} has a label outside {:?}",
                    r.example_id, labels
                )));
            }
            let mut tokens = r.message_tokens.clone();
            tokens.shuffle(&mut rng);
            items.push(AnnotationItem {
                id: r.example_id.clone(),
                tokens,
                hypothesis: r.hypothesis.as_ref().map(|h| h.join(" ")),
                y_hat: r.y_hat,
                y: r.y,
            });
        }
        Ok(AnnotationSession {
            id: id.into(),
            task,
            explainer,
            labels,
            seed,
            items,
            answers: BTreeMap::new(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.answers.len() == self.items.len()
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            task: self.task,
            labels: self.labels.clone(),
            items: self
                .items
                .iter()
                .map(|it| PublicItem {
                    id: it.id.clone(),
                    tokens: it.tokens.clone(),
                    hypothesis: it.hypothesis.clone(),
                })
                .collect(),
            answered: self.answers.keys().cloned().collect(),
            complete: self.is_complete(),
        }
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| {
            Error::Data(format!(
                "unknown label {label:?}; expected one of {:?}",
                self.labels
            ))
        })
    }

    /// Records one answer. Each item is answered once; a complete session
    /// accepts nothing further.
    pub fn answer(
        &mut self,
        item: &str,
        label: &str,
        unsure: bool,
        ts: u64,
    ) -> Result<AnswerLogEntry> {
        if self.is_complete() {
            return Err(Error::Conflict(format!("session {} is closed", self.id)));
        }
        if !self.items.iter().any(|it| it.id == item) {
            return Err(Error::NotFound(format!(
                "item {item} in session {}",
                self.id
            )));
        }
        if self.answers.contains_key(item) {
            return Err(Error::Conflict(format!("item {item} already answered")));
        }
        let idx = self.label_index(label)?;
        self.answers.insert(
            item.to_string(),
            Answer {
                label: idx,
                unsure,
                ts,
            },
        );
        Ok(AnswerLogEntry {
            session: self.id.clone(),
            item: item.to_string(),
            label: label.to_string(),
            unsure,
            ts,
        })
    }

    /// Re-applies a logged answer stream.
    pub fn replay(&mut self, entries: &[AnswerLogEntry]) -> Result<()> {
        for e in entries {
            if e.session != self.id {
                return Err(Error::Data(format!(
                    "log entry for session {} in {}",
                    e.session, self.id
                )));
            }
            self.answer(&e.item, &e.label, e.unsure, e.ts)?;
        }
        Ok(())
    }

    pub fn report(&self) -> Result<SessionReport> {
        if !self.is_complete() {
            return Err(Error::Conflict(format!(
                "session {} has {} of {} items answered",
                self.id,
                self.answers.len(),
                self.items.len()
            )));
        }
        if self.items.is_empty() {
            return Err(Error::UndefinedMetric("report of an empty session"));
        }
        let n = self.items.len();
        let (mut agree, mut correct, mut unsure, mut sure, mut sure_agree) = (0, 0, 0, 0, 0);
        for it in &self.items {
            let a = &self.answers[&it.id];
            agree += usize::from(a.label == it.y_hat);
            correct += usize::from(a.label == it.y);
            if a.unsure {
                unsure += 1;
            } else {
                sure += 1;
                sure_agree += usize::from(a.label == it.y_hat);
            }
        }
        Ok(SessionReport {
            session: self.id.clone(),
            explainer: self.explainer.clone(),
            n,
            csr_h: agree as f64 / n as f64,
            csr_h_excluding_unsure: (sure > 0).then(|| sure_agree as f64 / sure as f64),
            acc_h: correct as f64 / n as f64,
            unsure: unsure as f64 / n as f64,
        })
    }

    /// Label sequence in item order, for agreement between annotators.
    pub fn answer_labels(&self) -> Result<Vec<(String, usize)>> {
        if !self.is_complete() {
            return Err(Error::Conflict(format!(
                "session {} is not complete",
                self.id
            )));
        }
        Ok(self
            .items
            .iter()
            .map(|it| (it.id.clone(), self.answers[&it.id].label))
            .collect())
    }
}

/// Cohen's kappa between two completed sessions over the same items.
pub fn session_agreement(a: &AnnotationSession, b: &AnnotationSession) -> Result<Agreement> {
    let mut la = a.answer_labels()?;
    let mut lb = b.answer_labels()?;
    la.sort();
    lb.sort();
    if la.len() != lb.len() || la.iter().zip(&lb).any(|(x, y)| x.0 != y.0) {
        return Err(Error::Alignment(format!(
            "sessions {} and {} cover different items",
            a.id, b.id
        )));
    }
    let xa: Vec<usize> = la.iter().map(|x| x.1).collect();
    let xb: Vec<usize> = lb.iter().map(|x| x.1).collect();
    agreement(&xa, &xb)
}

/// Directory of sessions: `{id}.session.json` holds the items (written once),
/// `{id}.answers.jsonl` the append-only answer log.
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SessionStore { dir })
    }

    fn spec_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.session.json"))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.answers.jsonl"))
    }

    /// Writes a new session; existing ids are a conflict.
    pub fn create(&self, session: &AnnotationSession) -> Result<()> {
        if !valid_id(&session.id) {
            return Err(Error::Data(format!(
                "session id {:?} must be alphanumeric, '-' or '_'",
                session.id
            )));
        }
        let path = self.spec_path(&session.id);
        if path.exists() {
            return Err(Error::Conflict(format!(
                "session {} already exists",
                session.id
            )));
        }
        let mut blank = session.clone();
        blank.answers.clear();
        let mut f = File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, &blank)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Loads a session and replays its answer log.
    pub fn load(&self, id: &str) -> Result<AnnotationSession> {
        if !valid_id(id) {
            return Err(Error::NotFound(format!("session {id}")));
        }
        let path = self.spec_path(id);
        if !path.exists() {
            return Err(Error::NotFound(format!("session {id}")));
        }
        let mut s: AnnotationSession = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        s.answers.clear();
        let log = self.log_path(id);
        if log.exists() {
            s.replay(&read_log(&log)?)?;
        }
        Ok(s)
    }

    pub fn ids(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".session.json") {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Appends and syncs one answer-log line.
    pub fn append(&self, entry: &AnswerLogEntry) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path(&entry.session))?;
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn read_log(path: &Path) -> Result<Vec<AnswerLogEntry>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
