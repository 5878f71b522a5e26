use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{BiLstm, Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::explain::{top_k, Message};
use crate::models::{
    fit, AdditiveAttention, AttentionClassifier, Bag, BowLayperson, CheckpointBundle, FitOutcome,
    LaypersonConfig, Manifest, MetricRecord, TrainConfig,
};
use crate::simplex::{Distribution, Transform};
use crate::text::{Example, Task, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    /// Weight of the faithfulness term.
    pub lambda: f64,
    /// Final probability that the explainer sees the classifier decision.
    pub beta: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    /// Width of the faithfulness head's hidden layer.
    pub ffn_hidden: usize,
    /// Message size at test time.
    pub default_k: usize,
    pub layperson_embed_dim: usize,
    pub layperson_hidden: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            lambda: 1.0,
            beta: 0.2,
            embed_dim: 64,
            hidden: 128,
            attn_dim: 128,
            ffn_hidden: 128,
            default_k: 5,
            layperson_embed_dim: 64,
            layperson_hidden: 64,
            train: TrainConfig::communication(),
            seed: 0,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.attn_dim == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config(
                "joint explainer dimensions must be positive".into(),
            ));
        }
        self.train.validate()
    }
}

/// A training example annotated with the classifier's decision and its mean
/// encoder state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointItem {
    pub example: Example,
    pub y_hat: usize,
    pub target: Vec<f64>,
}

impl JointItem {
    pub fn prepare(classifier: &AttentionClassifier, data: &[Example]) -> Result<Vec<JointItem>> {
        data.iter()
            .map(|ex| {
                let pred = classifier.classify(ex)?;
                let states = pred.states.expect("attention classifier exposes states");
                let n = states.rows() as f64;
                let mut target = vec![0.0; states.cols()];
                for i in 0..states.rows() {
                    target
                        .iter_mut()
                        .zip(states.row_slice(i))
                        .for_each(|(t, v)| *t += v / n);
                }
                Ok(JointItem {
                    example: ex.clone(),
                    y_hat: pred.label,
                    target,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Shape {
    task: Task,
    vocab_size: usize,
    n_classes: usize,
    target_dim: usize,
}

#[derive(Clone, Debug)]
struct Arch {
    embedding: ParamId,
    encoder: BiLstm,
    hyp_encoder: Option<BiLstm>,
    query: Option<ParamId>,
    attention: AdditiveAttention,
    label_embedding: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
}

/// Explainer trained together with a layperson: sparsemax attention over
/// non-stopword positions selects the message, and a faithfulness head ties
/// its states to the classifier's.
#[derive(Clone, Debug)]
pub struct JointExplainer {
    config: JointConfig,
    shape: Shape,
    arch: Arch,
    stopwords: Vec<bool>,
    pub params: ParamSet,
    pub layperson: BowLayperson,
}

struct JointForward {
    attention: Option<(Var, Distribution)>,
    states: Var,
    eligible: Vec<bool>,
}

impl JointExplainer {
    /// `target_dim` is the width of the classifier states being imitated.
    pub fn new(
        config: JointConfig,
        task: Task,
        vocab: &Vocabulary,
        n_classes: usize,
        target_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        if target_dim == 0 || n_classes < 2 {
            return Err(Error::Config(
                "joint explainer needs a state width and at least 2 classes".into(),
            ));
        }
        let vocab_size = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let h2 = 2 * config.hidden;
        let embedding = ps.insert(
            "explainer.embedding",
            Tensor::uniform(&[vocab_size, config.embed_dim], 0.1, &mut rng),
            true,
        );
        let encoder = BiLstm::init(
            &mut ps,
            "explainer.encoder",
            config.embed_dim,
            config.hidden,
            &mut rng,
        );
        let hyp_encoder = (task == Task::Nli).then(|| {
            BiLstm::init(
                &mut ps,
                "explainer.hyp_encoder",
                config.embed_dim,
                config.hidden,
                &mut rng,
            )
        });
        let query = (task == Task::TextClf).then(|| {
            ps.insert(
                "explainer.attn.query",
                Tensor::uniform(&[1, h2], 1.0 / (h2 as f64).sqrt(), &mut rng),
                true,
            )
        });
        let attention =
            AdditiveAttention::init(&mut ps, "explainer.attn", h2, h2, config.attn_dim, &mut rng);
        let label_embedding = ps.insert(
            "explainer.label_embedding",
            Tensor::uniform(&[n_classes, h2], 1.0 / (h2 as f64).sqrt(), &mut rng),
            true,
        );
        let f = config.ffn_hidden;
        let ffn_w1 = ps.insert(
            "explainer.ffn.w1",
            Tensor::uniform(&[h2, f], 1.0 / (h2 as f64).sqrt(), &mut rng),
            true,
        );
        let ffn_b1 = ps.insert("explainer.ffn.b1", Tensor::zeros(&[1, f]), true);
        let ffn_w2 = ps.insert(
            "explainer.ffn.w2",
            Tensor::uniform(&[f, target_dim], 1.0 / (f as f64).sqrt(), &mut rng),
            true,
        );
        let ffn_b2 = ps.insert("explainer.ffn.b2", Tensor::zeros(&[1, target_dim]), true);

        let layperson = BowLayperson::new(LaypersonConfig {
            task,
            vocab_size,
            n_classes,
            embed_dim: config.layperson_embed_dim,
            hidden: config.layperson_hidden,
            seed: config.seed.wrapping_add(1),
        })?;
        Ok(JointExplainer {
            shape: Shape {
                task,
                vocab_size,
                n_classes,
                target_dim,
            },
            arch: Arch {
                embedding,
                encoder,
                hyp_encoder,
                query,
                attention,
                label_embedding,
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
            },
            stopwords: vocab.stopword_mask().to_vec(),
            config,
            params: ps,
            layperson,
        })
    }

    pub fn config(&self) -> &JointConfig {
        &self.config
    }

    fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ex: &Example,
        label: Option<usize>,
    ) -> Result<JointForward> {
        if ex.tokens.is_empty() {
            return Err(Error::EmptyInput("explainer input has no tokens"));
        }
        if let Some(&bad) = ex.tokens.iter().find(|&&t| t >= self.shape.vocab_size) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary")));
        }
        let x = g.gather_rows(bound.get(self.arch.embedding), &ex.tokens)?;
        let states = self.arch.encoder.forward(g, bound, x)?.states;
        let mut query = match (&self.arch.hyp_encoder, ex.hypothesis.as_deref()) {
            (Some(enc), Some(hyp)) if !hyp.is_empty() => {
                let hx = g.gather_rows(bound.get(self.arch.embedding), hyp)?;
                enc.forward(g, bound, hx)?.last
            }
            (Some(_), _) => {
                return Err(Error::Data(format!(
                    "NLI example {} needs a hypothesis",
                    ex.id
                )))
            }
            (None, _) => bound.get(self.arch.query.expect("text query")),
        };
        if let Some(y) = label {
            let e = g.gather_rows(bound.get(self.arch.label_embedding), &[y])?;
            query = g.add(query, e)?;
        }
        let eligible: Vec<bool> = ex.tokens.iter().map(|&t| !self.stopwords[t]).collect();
        let attention = if eligible.iter().any(|&e| e) {
            let scores = self.arch.attention.scores(g, bound, states, query)?;
            Some(g.transform(scores, &eligible, Transform::Sparsemax)?)
        } else {
            None
        };
        Ok(JointForward {
            attention,
            states,
            eligible,
        })
    }

    /// `[1, target_dim]` estimate of the classifier's mean state.
    fn reconstruct(&self, g: &mut Graph, bound: &Bound, states: Var) -> Result<Var> {
        let a = g.matmul(states, bound.get(self.arch.ffn_w1))?;
        let a = g.add_row(a, bound.get(self.arch.ffn_b1))?;
        let a = g.tanh(a);
        let a = g.matmul(a, bound.get(self.arch.ffn_w2))?;
        let a = g.add_row(a, bound.get(self.arch.ffn_b2))?;
        g.mean_rows(a)
    }

    /// Whether the explainer sees ŷ for this example at test time.
    fn test_access(&self, ex: &Example) -> bool {
        if self.config.beta <= 0.0 {
            return false;
        }
        let digest = Sha256::new()
            .chain_update(self.config.seed.to_le_bytes())
            .chain_update(ex.id.as_bytes())
            .finalize();
        let mut rng =
            ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
        rng.gen::<f64>() < self.config.beta
    }

    /// Sparsemax attention of the explainer (stopwords at zero).
    pub fn attention(&self, ex: &Example, y_hat: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let label = self.test_access(ex).then_some(y_hat);
        let f = self.forward(&mut g, &bound, ex, label)?;
        Ok(match f.attention {
            Some((_, d)) => d.into_probs(),
            None => vec![0.0; ex.tokens.len()],
        })
    }

    /// Top-`k` eligible positions given the decision `y_hat`.
    pub fn message(&self, ex: &Example, y_hat: usize, k: usize) -> Result<Message> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let label = self.test_access(ex).then_some(y_hat);
        let f = self.forward(&mut g, &bound, ex, label)?;
        let positions = match &f.attention {
            Some((_, d)) => top_k(d.probs(), k, Some(&f.eligible)),
            None => Vec::new(),
        };
        Message::from_positions(ex, positions, Some(k))
    }

    fn loss(
        &self,
        layperson: &BowLayperson,
        g: &mut Graph,
        bound_e: &Bound,
        bound_l: &Bound,
        item: &JointItem,
        access: bool,
    ) -> Result<(Var, Var, Var)> {
        let ex = &item.example;
        if item.target.len() != self.shape.target_dim {
            return Err(Error::Config(format!(
                "classifier state width {} differs from explainer target width {}",
                item.target.len(),
                self.shape.target_dim
            )));
        }
        let f = self.forward(g, bound_e, ex, access.then_some(item.y_hat))?;
        let h_tilde = self.reconstruct(g, bound_e, f.states)?;
        let h = g.constant(Tensor::row(item.target.clone()));
        let faith = g.squared_distance(h_tilde, h)?;
        let bag = match &f.attention {
            Some((pi, _)) => Bag::Soft {
                ids: &ex.tokens,
                weights: *pi,
            },
            None => Bag::Hard(&[]),
        };
        let logits = layperson.logits_graph(g, bound_l, bag, ex.hypothesis.as_deref())?;
        let ce = g.cross_entropy(logits, item.y_hat)?;
        let weighted = g.scale(faith, self.config.lambda);
        let total = g.add(weighted, ce)?;
        Ok((total, faith, ce))
    }

    /// Fraction of `items` where the co-trained layperson, reading the
    /// top-`k` message, reproduces ŷ.
    pub fn csr(&self, items: &[JointItem], k: usize) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::UndefinedMetric("CSR of an empty split"));
        }
        let mut hits = 0;
        for it in items {
            let m = self.message(&it.example, it.y_hat, k)?;
            let y_tilde = self
                .layperson
                .predict(&m.bag(), it.example.hypothesis.as_deref())?;
            hits += usize::from(y_tilde == it.y_hat);
        }
        Ok(hits as f64 / items.len() as f64)
    }

    /// Bundles explainer and layperson parameters into one checkpoint.
    pub fn to_bundle(
        &self,
        vocab: &Vocabulary,
        dev_metric: Option<f64>,
    ) -> Result<CheckpointBundle> {
        Ok(CheckpointBundle {
            manifest: Manifest {
                kind: "joint".into(),
                config: serde_json::json!({
                    "joint": self.config,
                    "shape": self.shape,
                    "explainer_params": self.params.len(),
                }),
                vocab_fingerprint: vocab.fingerprint().to_string(),
                dev_metric,
                training: serde_json::to_value(&self.config.train)?,
            },
            params: self.params.concat(&self.layperson.params)?,
        })
    }

    pub fn from_bundle(bundle: &CheckpointBundle, vocab: &Vocabulary) -> Result<Self> {
        if bundle.manifest.kind != "joint" {
            return Err(Error::Format(format!(
                "checkpoint holds a {}, expected a joint explainer",
                bundle.manifest.kind
            )));
        }
        if bundle.manifest.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::Fingerprint {
                expected: bundle.manifest.vocab_fingerprint.clone(),
                found: vocab.fingerprint().to_string(),
            });
        }
        let cfg = &bundle.manifest.config;
        let config: JointConfig = serde_json::from_value(cfg["joint"].clone())?;
        let shape: Shape = serde_json::from_value(cfg["shape"].clone())?;
        let split = cfg["explainer_params"]
            .as_u64()
            .ok_or_else(|| Error::Format("joint manifest lacks explainer_params".into()))?
            as usize;
        let mut e =
            JointExplainer::new(config, shape.task, vocab, shape.n_classes, shape.target_dim)?;
        let (pe, pl) = bundle.params.split_at(split);
        e.params.copy_values_from(&pe)?;
        e.layperson.params.copy_values_from(&pl)?;
        Ok(e)
    }
}

/// Test-time message of a trained joint explainer: the top-`k` attended
/// non-stopword positions, given the classifier decision `y_hat`.
pub fn explain_joint(e: &JointExplainer, ex: &Example, y_hat: usize, k: usize) -> Result<Message> {
    e.message(ex, y_hat, k)
}

#[derive(Clone, Debug)]
pub struct JointOutcome {
    pub fit: FitOutcome,
}

/// Trains explainer and layperson together on classifier-annotated items.
/// The classifier itself is never touched: only its precomputed decisions
/// and states enter the loss.
pub fn train_joint(
    e: &mut JointExplainer,
    train: &[JointItem],
    dev: &[JointItem],
) -> Result<JointOutcome> {
    let cfg = e.config.train.clone();
    let beta = e.config.beta;
    let k = e.config.default_k;
    let split = e.params.len();
    let mut merged = e.params.concat(&e.layperson.params)?;
    let view = e.clone();
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    let mut out = fit(
        &mut merged,
        train,
        &cfg,
        |g, bound, item, ctx| {
            let (be, bl) = bound.split_at(split);
            let access = ctx.rng.gen::<f64>() < beta * ctx.progress;
            let (total, faith, ce) = view.loss(&view.layperson, g, &be, &bl, item, access)?;
            if sums.len() < ctx.epoch {
                sums.resize(ctx.epoch, (0.0, 0.0, 0));
            }
            let s = &mut sums[ctx.epoch - 1];
            s.0 += g.value(faith).item();
            s.1 += g.value(ce).item();
            s.2 += 1;
            Ok(total)
        },
        |p| {
            let mut v = view.clone();
            let (pe, pl) = p.split_at(split);
            v.params = pe;
            v.layperson.params = pl;
            v.csr(dev, k)
        },
    )?;
    for (i, (faith, ce, n)) in sums.iter().enumerate() {
        let n = (*n).max(1) as f64;
        out.log.push(MetricRecord {
            epoch: i + 1,
            split: "train".into(),
            metric: "faithfulness".into(),
            value: faith / n,
        });
        out.log.push(MetricRecord {
            epoch: i + 1,
            split: "train".into(),
            metric: "layperson_ce".into(),
            value: ce / n,
        });
    }
    let (pe, pl) = merged.split_at(split);
    e.params = pe;
    e.layperson.params = pl;
    Ok(JointOutcome { fit: out })
}
