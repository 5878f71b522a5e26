use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{stopwords, Corpus, Example, Task, Vocabulary};

/// Planted-keyword classification corpus.
///
/// Each example is `noise_len` noise tokens drawn uniformly from the
/// non-keyword vocabulary, plus one to three keywords of its class inserted
/// at random positions. Labels cycle through classes, so splits are balanced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Regular (non-special) vocabulary size: keywords plus noise words.
    pub vocab_size: usize,
    pub n_classes: usize,
    pub keywords_per_class: usize,
    pub noise_len: usize,
    /// How many bundled stopwords are part of the noise vocabulary.
    pub stopword_noise: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_train: 2000,
            n_dev: 500,
            n_test: 500,
            vocab_size: 500,
            n_classes: 2,
            keywords_per_class: 10,
            noise_len: 20,
            stopword_noise: 20,
            seed: 13,
        }
    }
}

pub fn keyword(class: usize, j: usize) -> String {
    format!("c{class}kw{j}")
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let n_kw = self.keywords_per_class * self.n_classes;
        if self.n_classes < 2 {
            return Err(Error::Config(
                "synthetic corpus needs at least 2 classes".into(),
            ));
        }
        if self.keywords_per_class == 0 || n_kw >= self.vocab_size {
            return Err(Error::Config(format!(
                "keywords_per_class * n_classes = {n_kw} must be positive and below vocab_size {}",
                self.vocab_size
            )));
        }
        if self.stopword_noise > self.vocab_size - n_kw
            || self.stopword_noise > stopwords::english().len()
        {
            return Err(Error::Config(
                "stopword_noise exceeds the noise vocabulary".into(),
            ));
        }
        Ok(())
    }

    /// Keywords first (class-major), then stopword noise, then filler words.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut words = Vec::with_capacity(self.vocab_size);
        for c in 0..self.n_classes {
            for j in 0..self.keywords_per_class {
                words.push(keyword(c, j));
            }
        }
        let mut stops: Vec<&str> = stopwords::ENGLISH_LIST
            .lines()
            .filter(|l| !l.is_empty())
            .collect();
        stops.truncate(self.stopword_noise);
        words.extend(stops.iter().map(|s| s.to_string()));
        let mut filler = 0;
        while words.len() < self.vocab_size {
            words.push(format!("w{filler:04}"));
            filler += 1;
        }
        Vocabulary::from_tokens(words)
    }

    /// Class owning a keyword id, `None` for noise.
    pub fn keyword_class(&self, vocab: &Vocabulary, id: usize) -> Option<usize> {
        let first = vocab.id(&keyword(0, 0));
        let off = id.checked_sub(first)?;
        (off < self.keywords_per_class * self.n_classes).then(|| off / self.keywords_per_class)
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Corpus> {
    cfg.validate()?;
    let vocab = cfg.vocabulary();
    let first_kw = vocab.id(&keyword(0, 0));
    let n_kw = cfg.keywords_per_class * cfg.n_classes;
    let noise_ids: Vec<usize> = (first_kw + n_kw..vocab.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut make = |split: &str, n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = i % cfg.n_classes;
                let mut tokens: Vec<usize> = (0..cfg.noise_len)
                    .map(|_| *noise_ids.choose(&mut rng).expect("noise vocabulary"))
                    .collect();
                let planted = rng.gen_range(1..=3);
                for _ in 0..planted {
                    let kw = first_kw
                        + label * cfg.keywords_per_class
                        + rng.gen_range(0..cfg.keywords_per_class);
                    let pos = rng.gen_range(0..=tokens.len());
                    tokens.insert(pos, kw);
                }
                Example::text(format!("{split}-{i}"), tokens, label)
            })
            .collect()
    };
    let train = make("train", cfg.n_train);
    let dev = make("dev", cfg.n_dev);
    let test = make("test", cfg.n_test);
    Ok(Corpus {
        task: Task::TextClf,
        labels: (0..cfg.n_classes).map(|c| format!("class{c}")).collect(),
        vocab,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_train_split() {
        let cfg = SyntheticConfig {
            n_train: 0,
            ..Default::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        assert!(c.train.is_empty());
        assert_eq!(c.test.len(), cfg.n_test);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig {
            n_train: 50,
            n_dev: 5,
            n_test: 5,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(
            serde_json::to_vec(&a.train).unwrap(),
            serde_json::to_vec(&b.train).unwrap()
        );
        assert_eq!(a.vocab.fingerprint(), b.vocab.fingerprint());
    }

    #[test]
    fn inconsistent_parameters_rejected() {
        let cfg = SyntheticConfig {
            vocab_size: 20,
            keywords_per_class: 10,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn every_example_carries_its_class_keywords_only() {
        let cfg = SyntheticConfig {
            n_train: 200,
            n_dev: 0,
            n_test: 0,
            n_classes: 3,
            ..Default::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        for ex in &c.train {
            let kws: Vec<usize> = ex
                .tokens
                .iter()
                .filter_map(|&t| cfg.keyword_class(&c.vocab, t))
                .collect();
            assert!((1..=3).contains(&kws.len()));
            assert!(kws.iter().all(|&k| k == ex.label));
            assert_eq!(ex.tokens.len(), cfg.noise_len + kws.len());
        }
    }

    #[test]
    fn words_survive_tokenization() {
        let cfg = SyntheticConfig::default();
        for w in cfg.vocabulary().tokens().iter().skip(2) {
            assert_eq!(crate::text::tokenize(w), vec![w.clone()]);
        }
    }
}
