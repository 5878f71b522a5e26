use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BiLstm, Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{argmax, fit, Classifier, FitOutcome, Prediction, TrainConfig};
use crate::simplex::{Distribution, Transform};
use crate::text::{EmbeddingTable, Example, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub task: Task,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub embed_dim: usize,
    /// Hidden size per LSTM direction.
    pub hidden: usize,
    pub attn_dim: usize,
    pub transform: Transform,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(task: Task, vocab_size: usize, n_classes: usize, transform: Transform) -> Self {
        ClassifierConfig {
            task,
            vocab_size,
            n_classes,
            embed_dim: 64,
            hidden: 128,
            attn_dim: 128,
            transform,
            freeze_embeddings: false,
            seed: 0,
        }
    }
}

/// Bahdanau-style scorer `s_i = v · tanh(W_k h_i + W_q q + b)`.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveAttention {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
}

impl AdditiveAttention {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        key_dim: usize,
        query_dim: usize,
        attn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kb = 1.0 / (key_dim as f64).sqrt();
        let qb = 1.0 / (query_dim as f64).sqrt();
        let vb = 1.0 / (attn_dim as f64).sqrt();
        AdditiveAttention {
            w_key: ps.insert(
                format!("{prefix}.w_key"),
                Tensor::uniform(&[key_dim, attn_dim], kb, rng),
                true,
            ),
            w_query: ps.insert(
                format!("{prefix}.w_query"),
                Tensor::uniform(&[query_dim, attn_dim], qb, rng),
                true,
            ),
            bias: ps.insert(
                format!("{prefix}.bias"),
                Tensor::zeros(&[1, attn_dim]),
                true,
            ),
            v: ps.insert(
                format!("{prefix}.v"),
                Tensor::uniform(&[attn_dim, 1], vb, rng),
                true,
            ),
        }
    }

    /// `[1, n]` scores for `[n, k]` keys against a `[1, q]` query.
    pub fn scores(&self, g: &mut Graph, bound: &Bound, keys: Var, query: Var) -> Result<Var> {
        let n = g.value(keys).rows();
        let kp = g.matmul(keys, bound.get(self.w_key))?;
        let qp = g.matmul(query, bound.get(self.w_query))?;
        let qp = g.add(qp, bound.get(self.bias))?;
        let pre = g.add_row(kp, qp)?;
        let act = g.tanh(pre);
        let s = g.matmul(act, bound.get(self.v))?;
        g.reshape(s, vec![1, n])
    }
}

#[derive(Clone, Debug)]
struct Arch {
    embedding: ParamId,
    encoder: BiLstm,
    hyp_encoder: Option<BiLstm>,
    query: Option<ParamId>,
    attention: AdditiveAttention,
    out_w: ParamId,
    out_b: ParamId,
}

/// Graph handles of one classifier forward pass.
pub struct ClassifierForward {
    pub logits: Var,
    pub attention: Var,
    /// Distribution over the valid (compacted) positions.
    pub dist: Distribution,
    /// `[n_valid, 2h]` encoder states.
    pub states: Var,
    pub context: Var,
    /// Full-sequence index of each compacted position.
    pub positions: Vec<usize>,
}

/// BiLSTM encoder + additive attention with a pluggable simplex transform.
#[derive(Debug)]
pub struct AttentionClassifier {
    config: ClassifierConfig,
    arch: Arch,
    pub params: ParamSet,
    calls: AtomicUsize,
}

impl Clone for AttentionClassifier {
    fn clone(&self) -> Self {
        AttentionClassifier {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params: self.params.clone(),
            calls: AtomicUsize::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl AttentionClassifier {
    /// Fresh model. Pretrained `embeddings` replace the random table and
    /// fix `embed_dim`.
    pub fn new(mut config: ClassifierConfig, embeddings: Option<&EmbeddingTable>) -> Result<Self> {
        if let Some(e) = embeddings {
            if e.vectors.rows() != config.vocab_size {
                return Err(Error::Config(format!(
                    "embedding table has {} rows, vocabulary has {}",
                    e.vectors.rows(),
                    config.vocab_size
                )));
            }
            config.embed_dim = e.dim;
        }
        if config.n_classes < 2
            || config.hidden == 0
            || config.attn_dim == 0
            || config.embed_dim == 0
        {
            return Err(Error::Config(
                "classifier dimensions must be positive with at least 2 classes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let table = match embeddings {
            Some(e) => e.vectors.clone(),
            None => Tensor::uniform(&[config.vocab_size, config.embed_dim], 0.1, &mut rng),
        };
        let embedding = ps.insert("embedding", table, !config.freeze_embeddings);
        let h2 = 2 * config.hidden;
        let encoder = BiLstm::init(
            &mut ps,
            "encoder",
            config.embed_dim,
            config.hidden,
            &mut rng,
        );
        let hyp_encoder = match config.task {
            Task::Nli => Some(BiLstm::init(
                &mut ps,
                "hyp_encoder",
                config.embed_dim,
                config.hidden,
                &mut rng,
            )),
            Task::TextClf => None,
        };
        let query = match config.task {
            Task::TextClf => Some(ps.insert(
                "attn.query",
                Tensor::uniform(&[1, h2], 1.0 / (h2 as f64).sqrt(), &mut rng),
                true,
            )),
            Task::Nli => None,
        };
        let attention = AdditiveAttention::init(&mut ps, "attn", h2, h2, config.attn_dim, &mut rng);
        let out_in = match config.task {
            Task::TextClf => h2,
            Task::Nli => 2 * h2,
        };
        let out_w = ps.insert(
            "out.w",
            Tensor::uniform(
                &[out_in, config.n_classes],
                1.0 / (out_in as f64).sqrt(),
                &mut rng,
            ),
            true,
        );
        let out_b = ps.insert("out.b", Tensor::zeros(&[1, config.n_classes]), true);
        Ok(AttentionClassifier {
            config,
            arch: Arch {
                embedding,
                encoder,
                hyp_encoder,
                query,
                attention,
                out_w,
                out_b,
            },
            params: ps,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn transform(&self) -> Transform {
        self.config.transform
    }

    /// Forward passes run so far (every `classify`-family call counts one).
    pub fn forward_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Zeroes the scorer output vector, tying every attention score.
    pub fn zero_scorer(&mut self) {
        let v = self.arch.attention.v;
        self.params
            .get_mut(v)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }

    pub fn embedding_table(&self) -> &Tensor {
        self.params.get(self.arch.embedding)
    }

    /// Builds the forward graph. `embedded` overrides the document/premise
    /// embedding lookup (rows aligned with the valid positions).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        tokens: &[usize],
        valid: Option<&[bool]>,
        hypothesis: Option<&[usize]>,
        embedded: Option<Var>,
    ) -> Result<ClassifierForward> {
        let positions: Vec<usize> = match valid {
            Some(mask) => {
                if mask.len() != tokens.len() {
                    return Err(Error::Shape {
                        op: "classifier mask",
                        lhs: vec![tokens.len()],
                        rhs: vec![mask.len()],
                    });
                }
                (0..tokens.len()).filter(|&i| mask[i]).collect()
            }
            None => (0..tokens.len()).collect(),
        };
        if positions.is_empty() {
            return Err(Error::EmptyInput("classifier input has no tokens"));
        }
        let ids: Vec<usize> = positions.iter().map(|&i| tokens[i]).collect();
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let x = match embedded {
            Some(x) => x,
            None => g.gather_rows(bound.get(self.arch.embedding), &ids)?,
        };
        let enc = self.arch.encoder.forward(g, bound, x)?;
        let query = match (&self.arch.hyp_encoder, hypothesis) {
            (Some(hyp_enc), Some(hyp)) => {
                if hyp.is_empty() {
                    return Err(Error::EmptyInput("hypothesis has no tokens"));
                }
                let hx = g.gather_rows(bound.get(self.arch.embedding), hyp)?;
                hyp_enc.forward(g, bound, hx)?.last
            }
            (Some(_), None) => return Err(Error::Data("NLI classifier needs a hypothesis".into())),
            (None, _) => bound.get(self.arch.query.expect("text classifier query")),
        };
        let scores = self.arch.attention.scores(g, bound, enc.states, query)?;
        let mask = vec![true; positions.len()];
        let (attention, dist) = g.transform(scores, &mask, self.config.transform)?;
        let context = g.matmul(attention, enc.states)?;
        let features = match self.config.task {
            Task::TextClf => context,
            Task::Nli => g.concat_cols(&[context, query])?,
        };
        let logits = g.matmul(features, bound.get(self.arch.out_w))?;
        let logits = g.add(logits, bound.get(self.arch.out_b))?;
        Ok(ClassifierForward {
            logits,
            attention,
            dist,
            states: enc.states,
            context,
            positions,
        })
    }

    fn run(
        &self,
        tokens: &[usize],
        valid: Option<&[bool]>,
        hypothesis: Option<&[usize]>,
        embedded: Option<&Tensor>,
    ) -> Result<Prediction> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let x = embedded.map(|t| g.constant(t.clone()));
        let f = self.forward_graph(&mut g, &bound, tokens, valid, hypothesis, x)?;
        let logits = g.value(f.logits).data().to_vec();
        let n = tokens.len();
        let mut probs = vec![0.0; n];
        let states_c = g.value(f.states);
        let width = states_c.cols();
        let mut states = vec![0.0; n * width];
        for (k, &pos) in f.positions.iter().enumerate() {
            probs[pos] = f.dist.probs()[k];
            states[pos * width..(pos + 1) * width].copy_from_slice(states_c.row_slice(k));
        }
        Ok(Prediction {
            label: argmax(&logits),
            logits,
            attention: Some(Distribution::from_probs(probs)?),
            states: Some(Tensor::new(vec![n, width], states)?),
            context: Some(g.value(f.context).data().to_vec()),
        })
    }

    /// Classifies one example.
    pub fn classify(&self, ex: &Example) -> Result<Prediction> {
        self.run(&ex.tokens, None, ex.hypothesis.as_deref(), None)
    }

    /// Classifies a padded sequence; `valid[i] = false` marks padding, which
    /// is skipped by the encoder and receives zero attention.
    pub fn classify_padded(
        &self,
        tokens: &[usize],
        valid: &[bool],
        hypothesis: Option<&[usize]>,
    ) -> Result<Prediction> {
        self.run(tokens, Some(valid), hypothesis, None)
    }

    /// Pads a batch to its longest example and classifies every row.
    pub fn classify_batch(&self, batch: &[Example]) -> Result<Vec<Prediction>> {
        let width = batch.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
        batch
            .iter()
            .map(|e| {
                let mut tokens = e.tokens.clone();
                let mut valid = vec![true; tokens.len()];
                tokens.resize(width, crate::text::PAD_ID);
                valid.resize(width, false);
                let mut p = self.classify_padded(&tokens, &valid, e.hypothesis.as_deref())?;
                if let (Some(a), Some(s)) = (&p.attention, &p.states) {
                    let n = e.tokens.len();
                    p.attention = Some(Distribution::from_probs(a.probs()[..n].to_vec())?);
                    p.states = Some(Tensor::new(
                        vec![n, s.cols()],
                        s.data()[..n * s.cols()].to_vec(),
                    )?);
                }
                Ok(p)
            })
            .collect()
    }

    /// Cross-entropy loss graph for training.
    pub fn loss(&self, g: &mut Graph, bound: &Bound, ex: &Example, target: usize) -> Result<Var> {
        let f = self.forward_graph(g, bound, &ex.tokens, None, ex.hypothesis.as_deref(), None)?;
        g.cross_entropy(f.logits, target)
    }

    /// Mean of the encoder states: the representation a faithful explainer
    /// tries to reproduce.
    pub fn mean_state(&self, ex: &Example) -> Result<Vec<f64>> {
        let p = self.classify(ex)?;
        let s = p.states.expect("attention classifier exposes states");
        let n = s.rows();
        let mut out = vec![0.0; s.cols()];
        for i in 0..n {
            out.iter_mut()
                .zip(s.row_slice(i))
                .for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        Ok(out)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.config.hidden
    }

    pub fn accuracy(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::UndefinedMetric("accuracy of an empty split"));
        }
        let mut hits = 0;
        for ex in data {
            if self.classify(ex)?.label == ex.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }

    /// Cross-entropy training on gold labels, keeping the epoch with the best
    /// dev accuracy.
    pub fn train(
        &mut self,
        train: &[Example],
        dev: &[Example],
        cfg: &TrainConfig,
    ) -> Result<FitOutcome> {
        let view = self.clone();
        fit(
            &mut self.params,
            train,
            cfg,
            |g, b, ex, _| view.loss(g, b, ex, ex.label),
            |p| {
                let mut m = view.clone();
                m.params = p.clone();
                m.accuracy(dev)
            },
        )
    }
}

impl Classifier for AttentionClassifier {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        let table = self.embedding_table();
        let d = table.cols();
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            if t >= table.rows() {
                return Err(Error::Data(format!("token id {t} outside vocabulary")));
            }
            data.extend_from_slice(table.row_slice(t));
        }
        Tensor::new(vec![tokens.len(), d], data)
    }

    fn predict(&self, ex: &Example) -> Result<Prediction> {
        self.classify(ex)
    }

    fn predict_embedded(&self, ex: &Example, embedded: &Tensor) -> Result<Prediction> {
        self.run(&ex.tokens, None, ex.hypothesis.as_deref(), Some(embedded))
    }

    fn logit_gradient(&self, ex: &Example, embedded: &Tensor, class: usize) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let x = g.param(embedded.clone());
        let f = self.forward_graph(
            &mut g,
            &bound,
            &ex.tokens,
            None,
            ex.hypothesis.as_deref(),
            Some(x),
        )?;
        let c = self.config.n_classes;
        if class >= c {
            return Err(Error::Data(format!("class {class} outside {c} classes")));
        }
        let picked = g.slice_cols(f.logits, class, class + 1)?;
        let root = g.sum(picked);
        Ok(g.backward(root)?.wrt(x))
    }
}
