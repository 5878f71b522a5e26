use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Vocabulary;

/// Lowercases and splits on whitespace; every non-alphanumeric character
/// becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Single-document classification.
    TextClf,
    /// Premise/hypothesis pairs.
    Nli,
}

/// One encoded example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    /// Document tokens, or the premise for NLI.
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<Vec<usize>>,
    pub label: usize,
    /// Human-highlighted premise positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlights: Option<Vec<usize>>,
}

impl Example {
    pub fn text(id: impl Into<String>, tokens: Vec<usize>, label: usize) -> Self {
        Example {
            id: id.into(),
            tokens,
            hypothesis: None,
            label,
            highlights: None,
        }
    }

    pub fn pair(
        id: impl Into<String>,
        premise: Vec<usize>,
        hypothesis: Vec<usize>,
        label: usize,
    ) -> Self {
        Example {
            id: id.into(),
            tokens: premise,
            hypothesis: Some(hypothesis),
            label,
            highlights: None,
        }
    }
}

/// Raw example before vocabulary encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub id: String,
    pub tokens: Vec<String>,
    pub hypothesis: Option<Vec<String>>,
    pub label: usize,
    pub highlights: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `label<TAB>text` per line.
    TsvLabelText,
    /// Line-delimited JSON with `gold_label`, `sentence1`, `sentence2`.
    SnliJsonl,
    /// SNLI records plus `premise_highlights`: token indices into the premise.
    EsnliWithHighlights,
}

impl CorpusFormat {
    pub fn task(self) -> Task {
        match self {
            CorpusFormat::TsvLabelText => Task::TextClf,
            _ => Task::Nli,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tsv" | "tsv-label-text" => Ok(CorpusFormat::TsvLabelText),
            "snli" | "snli-jsonl" => Ok(CorpusFormat::SnliJsonl),
            "esnli" | "esnli-with-highlights" => Ok(CorpusFormat::EsnliWithHighlights),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }

    pub fn default_labels(self) -> Vec<String> {
        match self {
            CorpusFormat::TsvLabelText => vec!["neg".into(), "pos".into()],
            _ => vec![
                "entailment".into(),
                "neutral".into(),
                "contradiction".into(),
            ],
        }
    }
}

/// A fully encoded dataset.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub task: Task,
    pub labels: Vec<String>,
    pub vocab: Vocabulary,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn split(&self, name: &str) -> Result<&[Example]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Where and how to read a corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub format: CorpusFormat,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Label names; a label may also be given as its integer index.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Keep only these labels, renumbered in this order (e.g. binarizing a
    /// multi-class news corpus).
    #[serde(default)]
    pub keep_labels: Option<Vec<String>>,
    /// Fraction of train held out as dev when no dev file is given.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

fn default_dev_fraction() -> f64 {
    0.1
}

fn default_min_freq() -> usize {
    1
}

impl CorpusSpec {
    pub fn new(format: CorpusFormat, train: impl Into<PathBuf>) -> Self {
        CorpusSpec {
            format,
            train: train.into(),
            dev: None,
            test: None,
            labels: None,
            keep_labels: None,
            dev_fraction: default_dev_fraction(),
            seed: 0,
            min_freq: 1,
        }
    }
}

struct LabelMap<'a> {
    names: &'a [String],
    keep: Option<&'a [String]>,
}

impl LabelMap<'_> {
    /// `Ok(None)` when the label is filtered out.
    fn resolve(&self, raw: &str, path: &Path, line: usize) -> Result<Option<usize>> {
        let raw = raw.trim();
        let idx = match self.names.iter().position(|n| n == raw) {
            Some(i) => i,
            None => match raw.parse::<usize>() {
                Ok(i) if i < self.names.len() => i,
                _ => {
                    return Err(Error::Label {
                        path: path.to_path_buf(),
                        line,
                        label: raw.to_string(),
                    })
                }
            },
        };
        match self.keep {
            None => Ok(Some(idx)),
            Some(keep) => Ok(keep.iter().position(|k| *k == self.names[idx])),
        }
    }
}

/// Reads one split file into raw examples.
pub fn read_split(
    path: &Path,
    format: CorpusFormat,
    labels: &[String],
    keep: Option<&[String]>,
) -> Result<Vec<RawExample>> {
    let text = std::fs::read_to_string(path)?;
    let map = LabelMap {
        names: labels,
        keep,
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("ex")
        .to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw = match format {
            CorpusFormat::TsvLabelText => parse_tsv(line, path, lineno, &map, &stem)?,
            _ => parse_snli(
                line,
                path,
                lineno,
                &map,
                &stem,
                format == CorpusFormat::EsnliWithHighlights,
            )?,
        };
        if let Some(r) = raw {
            out.push(r);
        }
    }
    Ok(out)
}

fn parse_tsv(
    line: &str,
    path: &Path,
    lineno: usize,
    map: &LabelMap<'_>,
    stem: &str,
) -> Result<Option<RawExample>> {
    let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg: "expected label<TAB>text".into(),
    })?;
    let Some(label) = map.resolve(label, path, lineno)? else {
        return Ok(None);
    };
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: "empty text".into(),
        });
    }
    Ok(Some(RawExample {
        id: format!("{stem}-{lineno}"),
        tokens,
        hypothesis: None,
        label,
        highlights: None,
    }))
}

#[derive(Deserialize)]
struct SnliRecord {
    gold_label: String,
    sentence1: String,
    sentence2: String,
    #[serde(default, rename = "pairID")]
    pair_id: Option<String>,
    #[serde(default)]
    premise_highlights: Option<Vec<usize>>,
}

fn parse_snli(
    line: &str,
    path: &Path,
    lineno: usize,
    map: &LabelMap<'_>,
    stem: &str,
    with_highlights: bool,
) -> Result<Option<RawExample>> {
    let perr = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let rec: SnliRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
    // "-" marks pairs without annotator consensus.
    if rec.gold_label == "-" {
        return Ok(None);
    }
    let Some(label) = map.resolve(&rec.gold_label, path, lineno)? else {
        return Ok(None);
    };
    let premise = tokenize(&rec.sentence1);
    let hypothesis = tokenize(&rec.sentence2);
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(perr("empty premise or hypothesis".into()));
    }
    let highlights = if with_highlights {
        if let Some(h) = &rec.premise_highlights {
            if let Some(bad) = h.iter().find(|&&i| i >= premise.len()) {
                return Err(perr(format!(
                    "highlight index {bad} outside premise of length {}",
                    premise.len()
                )));
            }
        }
        rec.premise_highlights
    } else {
        None
    };
    Ok(Some(RawExample {
        id: rec.pair_id.unwrap_or_else(|| format!("{stem}-{lineno}")),
        tokens: premise,
        hypothesis: Some(hypothesis),
        label,
        highlights,
    }))
}

pub fn encode(raw: &[RawExample], vocab: &Vocabulary) -> Vec<Example> {
    raw.iter()
        .map(|r| Example {
            id: r.id.clone(),
            tokens: vocab.encode(&r.tokens),
            hypothesis: r.hypothesis.as_ref().map(|h| vocab.encode(h)),
            label: r.label,
            highlights: r.highlights.clone(),
        })
        .collect()
}

/// Loads all splits; the vocabulary comes from the train split alone.
pub fn load_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let labels = spec
        .labels
        .clone()
        .unwrap_or_else(|| spec.format.default_labels());
    let keep = spec.keep_labels.as_deref();
    if let Some(k) = keep {
        if let Some(bad) = k.iter().find(|l| !labels.contains(l)) {
            return Err(Error::Config(format!(
                "keep label {bad:?} is not a known label"
            )));
        }
    }
    let mut train = read_split(&spec.train, spec.format, &labels, keep)?;
    let dev = match &spec.dev {
        Some(p) => read_split(p, spec.format, &labels, keep)?,
        None => {
            if !(0.0..1.0).contains(&spec.dev_fraction) {
                return Err(Error::Config(format!(
                    "dev fraction {} outside [0, 1)",
                    spec.dev_fraction
                )));
            }
            let n_dev = (train.len() as f64 * spec.dev_fraction).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            train.shuffle(&mut rng);
            train.split_off(train.len() - n_dev)
        }
    };
    let test = match &spec.test {
        Some(p) => read_split(p, spec.format, &labels, keep)?,
        None => Vec::new(),
    };
    let seqs = train
        .iter()
        .flat_map(|r| std::iter::once(r.tokens.as_slice()).chain(r.hypothesis.as_deref()));
    let vocab = Vocabulary::build(seqs, spec.min_freq);
    let final_labels = keep.map(|k| k.to_vec()).unwrap_or(labels);
    Ok(Corpus {
        task: spec.format.task(),
        labels: final_labels,
        train: encode(&train, &vocab),
        dev: encode(&dev, &vocab),
        test: encode(&test, &vocab),
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(tokenize("Good movie!"), vec!["good", "movie", "!"]);
        assert_eq!(
            tokenize("don't  STOP,now"),
            vec!["don", "'", "t", "stop", ",", "now"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn single_tsv_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.tsv", "pos\tgood movie\n");
        let mut spec = CorpusSpec::new(CorpusFormat::TsvLabelText, &p);
        spec.dev_fraction = 0.0;
        let c = load_corpus(&spec).unwrap();
        assert_eq!(c.train.len(), 1);
        assert_eq!(c.train[0].tokens.len(), 2);
        assert_eq!(c.train[0].label, 1);
    }

    #[test]
    fn empty_file_gives_specials_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "train.tsv", "");
        let c = load_corpus(&CorpusSpec::new(CorpusFormat::TsvLabelText, &p)).unwrap();
        assert!(c.train.is_empty() && c.dev.is_empty());
        assert_eq!(c.vocab.len(), 2);
    }

    #[test]
    fn malformed_and_unknown_label_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "pos\tok\nno tab here\n");
        match load_corpus(&CorpusSpec::new(CorpusFormat::TsvLabelText, &p)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "b.tsv", "pos\tok\nmeh\tfine\n");
        match load_corpus(&CorpusSpec::new(CorpusFormat::TsvLabelText, &p)) {
            Err(Error::Label { line, label, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(label, "meh");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn test_tokens_outside_train_vocab_are_unk() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(
            dir.path(),
            "train.tsv",
            "pos\tgreat film\nneg\tawful film\n",
        );
        let te = write(dir.path(), "test.tsv", "pos\tsuperb film\n");
        let mut spec = CorpusSpec::new(CorpusFormat::TsvLabelText, &tr);
        spec.test = Some(te);
        spec.dev_fraction = 0.0;
        let c = load_corpus(&spec).unwrap();
        assert_eq!(c.test[0].tokens[0], crate::text::UNK_ID);
        assert_eq!(c.vocab.get("superb"), None);
    }

    #[test]
    fn label_filter_binarizes() {
        let dir = tempfile::tempdir().unwrap();
        let tr = write(
            dir.path(),
            "train.tsv",
            "world\ta\nsports\tb\nbusiness\tc\nscitech\td\n",
        );
        let mut spec = CorpusSpec::new(CorpusFormat::TsvLabelText, &tr);
        spec.labels = Some(vec![
            "world".into(),
            "sports".into(),
            "business".into(),
            "scitech".into(),
        ]);
        spec.keep_labels = Some(vec!["world".into(), "business".into()]);
        spec.dev_fraction = 0.0;
        let c = load_corpus(&spec).unwrap();
        assert_eq!(c.labels, vec!["world", "business"]);
        let labels: Vec<usize> = c.train.iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn snli_and_esnli_records() {
        let dir = tempfile::tempdir().unwrap();
        let body = concat!(
            r#"{"gold_label":"entailment","sentence1":"A man sleeps.","sentence2":"A person rests.","pairID":"p1","premise_highlights":[1,2]}"#,
            "\n",
            r#"{"gold_label":"-","sentence1":"x","sentence2":"y"}"#,
            "\n",
            r#"{"gold_label":"neutral","sentence1":"A dog runs.","sentence2":"It is fast."}"#,
            "\n"
        );
        let p = write(dir.path(), "esnli.jsonl", body);
        let raw = read_split(
            &p,
            CorpusFormat::EsnliWithHighlights,
            &CorpusFormat::SnliJsonl.default_labels(),
            None,
        )
        .unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[0].id, "p1");
        assert_eq!(raw[0].tokens, vec!["a", "man", "sleeps", "."]);
        assert_eq!(raw[0].highlights, Some(vec![1, 2]));
        assert_eq!(raw[1].highlights, None);
        let raw = read_split(
            &p,
            CorpusFormat::SnliJsonl,
            &CorpusFormat::SnliJsonl.default_labels(),
            None,
        )
        .unwrap();
        assert_eq!(raw[0].highlights, None);

        let bad = write(
            dir.path(),
            "bad.jsonl",
            r#"{"gold_label":"entailment","sentence1":"a b","sentence2":"c","premise_highlights":[5]}"#,
        );
        assert!(matches!(
            read_split(
                &bad,
                CorpusFormat::EsnliWithHighlights,
                &CorpusFormat::SnliJsonl.default_labels(),
                None
            ),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
