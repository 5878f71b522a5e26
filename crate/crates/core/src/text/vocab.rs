use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::stopwords;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token ↔ id mapping with `<pad> = 0`, `<unk> = 1` and a stopword flag per id.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    stopword: Vec<bool>,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    fingerprint: String,
}

impl Vocabulary {
    /// Builds from regular tokens in the given order; specials are prepended
    /// and repeated tokens are ignored after their first occurrence.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        let mut seen: HashSet<String> = all.iter().cloned().collect();
        for t in tokens {
            let t = t.into();
            if seen.insert(t.clone()) {
                all.push(t);
            }
        }
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let stops = stopwords::english();
        let stopword = tokens.iter().map(|t| stops.contains(t.as_str())).collect();
        let mut h = Sha256::new();
        for t in &tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        let fingerprint = hex::encode(h.finalize());
        Vocabulary {
            tokens,
            index,
            stopword,
            fingerprint,
        }
    }

    /// Frequency-ordered vocabulary (descending count, ties lexicographic).
    pub fn build<'a, I>(sequences: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut items: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD && t != UNK)
            .collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(items.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Number of non-special tokens.
    pub fn regular_len(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn is_stopword(&self, id: usize) -> bool {
        self.stopword.get(id).copied().unwrap_or(false)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// Stopword flags aligned with ids.
    pub fn stopword_mask(&self) -> &[bool] {
        &self.stopword
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            fingerprint: self.fingerprint.clone(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.tokens.len() < 2 || file.tokens[PAD_ID] != PAD || file.tokens[UNK_ID] != UNK {
            return Err(Error::Format(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let v = Self::from_full_list(file.tokens);
        if v.fingerprint != file.fingerprint {
            return Err(Error::Fingerprint {
                expected: file.fingerprint,
                found: v.fingerprint,
            });
        }
        Ok(v)
    }
}

/// Stopword flags for every id of `vocab`.
pub fn stopword_mask(vocab: &Vocabulary) -> Vec<bool> {
    vocab.stopword_mask().to_vec()
}
