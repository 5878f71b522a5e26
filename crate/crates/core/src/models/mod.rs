//! Classifier, layperson and training loop.

mod checkpoint;
mod classifier;
mod layperson;
mod train;

pub use checkpoint::{CheckpointBundle, Manifest};
pub use classifier::{AdditiveAttention, AttentionClassifier, ClassifierConfig, ClassifierForward};
pub use layperson::{Bag, BowLayperson, LaypersonConfig, LaypersonExample};
pub use train::{fit, DevMetric, FitOutcome, MetricRecord, StepContext, TrainConfig};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::simplex::Distribution;
use crate::text::Example;

/// Output of one classifier decision.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<f64>,
    /// Attention over the document (premise) positions, if the model has it.
    pub attention: Option<Distribution>,
    /// `[n, d]` per-position hidden states.
    pub states: Option<Tensor>,
    pub context: Option<Vec<f64>>,
}

/// What the explainers need from a classifier: decisions, decisions from
/// edited input embeddings, and input gradients.
pub trait Classifier {
    fn n_classes(&self) -> usize;

    /// `[n, d]` embedding rows of `tokens`.
    fn embed(&self, tokens: &[usize]) -> Result<Tensor>;

    fn predict(&self, ex: &Example) -> Result<Prediction>;

    /// Decision with the document embeddings replaced by `embedded`.
    fn predict_embedded(&self, ex: &Example, embedded: &Tensor) -> Result<Prediction>;

    /// Gradient of logit `class` with respect to the document embeddings.
    fn logit_gradient(&self, ex: &Example, embedded: &Tensor, class: usize) -> Result<Tensor>;
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
