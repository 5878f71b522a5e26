use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BiLstm, Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::argmax;
use crate::text::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaypersonConfig {
    pub task: Task,
    pub vocab_size: usize,
    pub n_classes: usize,
    /// Hypothesis reader sizes, used for NLI only.
    pub embed_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl LaypersonConfig {
    pub fn new(task: Task, vocab_size: usize, n_classes: usize) -> Self {
        LaypersonConfig {
            task,
            vocab_size,
            n_classes,
            embed_dim: 64,
            hidden: 64,
            seed: 0,
        }
    }
}

/// The message a layperson reads: a set of token ids, weighted either
/// uniformly (a discrete explanation) or by a differentiable row vector.
pub enum Bag<'a> {
    Hard(&'a [usize]),
    Soft { ids: &'a [usize], weights: Var },
}

#[derive(Clone, Debug)]
struct HypothesisReader {
    embedding: ParamId,
    encoder: BiLstm,
    out_w: ParamId,
    out_b: ParamId,
}

/// Bag-of-words student. For text classification the logits are the sum of
/// per-word class weights; for NLI the summed word vectors are added to the
/// hypothesis encoding before a tanh output layer.
#[derive(Clone, Debug)]
pub struct BowLayperson {
    config: LaypersonConfig,
    bow: ParamId,
    hyp: Option<HypothesisReader>,
    pub params: ParamSet,
}

/// One training item: the message, an optional hypothesis, and the label the
/// layperson should reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaypersonExample {
    pub bag: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<Vec<usize>>,
    pub target: usize,
}

impl BowLayperson {
    pub fn new(config: LaypersonConfig) -> Result<Self> {
        if config.n_classes < 2 || config.vocab_size == 0 {
            return Err(Error::Config(
                "layperson needs a vocabulary and at least 2 classes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let (bow, hyp) = match config.task {
            Task::TextClf => (
                ps.insert(
                    "bow",
                    Tensor::zeros(&[config.vocab_size, config.n_classes]),
                    true,
                ),
                None,
            ),
            Task::Nli => {
                if config.hidden == 0 || config.embed_dim == 0 {
                    return Err(Error::Config(
                        "NLI layperson needs positive embed_dim and hidden".into(),
                    ));
                }
                let h2 = 2 * config.hidden;
                let bow = ps.insert("bow", Tensor::zeros(&[config.vocab_size, h2]), true);
                let embedding = ps.insert(
                    "hyp.embedding",
                    Tensor::uniform(&[config.vocab_size, config.embed_dim], 0.1, &mut rng),
                    true,
                );
                let encoder = BiLstm::init(
                    &mut ps,
                    "hyp.encoder",
                    config.embed_dim,
                    config.hidden,
                    &mut rng,
                );
                let out_w = ps.insert(
                    "out.w",
                    Tensor::uniform(&[h2, config.n_classes], 1.0 / (h2 as f64).sqrt(), &mut rng),
                    true,
                );
                let out_b = ps.insert("out.b", Tensor::zeros(&[1, config.n_classes]), true);
                (
                    bow,
                    Some(HypothesisReader {
                        embedding,
                        encoder,
                        out_w,
                        out_b,
                    }),
                )
            }
        };
        Ok(BowLayperson {
            config,
            bow,
            hyp,
            params: ps,
        })
    }

    pub fn config(&self) -> &LaypersonConfig {
        &self.config
    }

    /// `[1, C]` logits graph.
    pub fn logits_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        bag: Bag<'_>,
        hypothesis: Option<&[usize]>,
    ) -> Result<Var> {
        let width = g.value(bound.get(self.bow)).cols();
        let summed = match bag {
            Bag::Hard(ids) => {
                let ids = dedup(ids, self.config.vocab_size)?;
                if ids.is_empty() {
                    g.constant(Tensor::zeros(&[1, width]))
                } else {
                    let rows = g.gather_rows(bound.get(self.bow), &ids)?;
                    let ones = g.constant(Tensor::filled(&[1, ids.len()], 1.0));
                    g.matmul(ones, rows)?
                }
            }
            Bag::Soft { ids, weights } => {
                if ids.is_empty() {
                    g.constant(Tensor::zeros(&[1, width]))
                } else {
                    dedup(ids, self.config.vocab_size)?;
                    let rows = g.gather_rows(bound.get(self.bow), ids)?;
                    g.matmul(weights, rows)?
                }
            }
        };
        match (&self.hyp, hypothesis) {
            (None, _) => Ok(summed),
            (Some(r), Some(hyp)) => {
                if hyp.is_empty() {
                    return Err(Error::EmptyInput("hypothesis has no tokens"));
                }
                if let Some(&bad) = hyp.iter().find(|&&t| t >= self.config.vocab_size) {
                    return Err(Error::Data(format!("token id {bad} outside vocabulary")));
                }
                let hx = g.gather_rows(bound.get(r.embedding), hyp)?;
                let last = r.encoder.forward(g, bound, hx)?.last;
                let z = g.add(summed, last)?;
                let z = g.tanh(z);
                let out = g.matmul(z, bound.get(r.out_w))?;
                g.add(out, bound.get(r.out_b))
            }
            (Some(_), None) => Err(Error::Data("NLI layperson needs a hypothesis".into())),
        }
    }

    pub fn logits(&self, bag: &[usize], hypothesis: Option<&[usize]>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let l = self.logits_graph(&mut g, &bound, Bag::Hard(bag), hypothesis)?;
        Ok(g.value(l).data().to_vec())
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, bag: &[usize], hypothesis: Option<&[usize]>) -> Result<usize> {
        Ok(argmax(&self.logits(bag, hypothesis)?))
    }

    pub fn loss(&self, g: &mut Graph, bound: &Bound, ex: &LaypersonExample) -> Result<Var> {
        let logits = self.logits_graph(g, bound, Bag::Hard(&ex.bag), ex.hypothesis.as_deref())?;
        g.cross_entropy(logits, ex.target)
    }

    /// Fraction of examples whose prediction equals the target.
    pub fn agreement(&self, data: &[LaypersonExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::UndefinedMetric(
                "layperson agreement on an empty split",
            ));
        }
        let mut hits = 0;
        for ex in data {
            if self.predict(&ex.bag, ex.hypothesis.as_deref())? == ex.target {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

fn dedup(ids: &[usize], vocab: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(Error::Data(format!(
            "token id {bad} outside vocabulary of {vocab}"
        )));
    }
    let mut out = ids.to_vec();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
