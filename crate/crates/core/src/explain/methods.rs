use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explain::{top_k, Message};
use crate::models::{AttentionClassifier, Classifier};
use crate::text::Example;

fn example_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `k` positions drawn uniformly without replacement. The draw depends only
/// on `seed` and the example id.
pub fn explain_random(ex: &Example, k: usize, seed: u64) -> Result<Message> {
    let n = ex.tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(seed, &ex.id));
    let picked = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    Message::from_positions(ex, picked, Some(k))
}

/// Greedy erasure: repeatedly zero the embedding of the most attended
/// position that is still intact and re-run the classifier. Makes exactly
/// `min(k, n) + 1` classifier calls.
pub fn explain_erasure(c: &dyn Classifier, ex: &Example, k: usize) -> Result<Message> {
    let n = ex.tokens.len();
    let mut embedded = c.embed(&ex.tokens)?;
    let width = embedded.cols();
    let mut pred = c.predict_embedded(ex, &embedded)?;
    let mut intact = vec![true; n];
    let mut picked = Vec::with_capacity(k.min(n));
    for _ in 0..k.min(n) {
        let attention = pred
            .attention
            .as_ref()
            .ok_or_else(|| Error::Config("erasure needs a classifier with attention".into()))?;
        let pos = top_k(attention.probs(), 1, Some(&intact))[0];
        intact[pos] = false;
        picked.push(pos);
        embedded.data_mut()[pos * width..(pos + 1) * width].fill(0.0);
        pred = c.predict_embedded(ex, &embedded)?;
    }
    Message::from_positions(ex, picked, Some(k))
}

/// Input × gradient saliency `|⟨∂ logit_ŷ / ∂e_i, e_i⟩|`, top `k`.
pub fn explain_topk_gradient(c: &dyn Classifier, ex: &Example, k: usize) -> Result<Message> {
    let y_hat = c.predict(ex)?.label;
    let embedded = c.embed(&ex.tokens)?;
    let grad = c.logit_gradient(ex, &embedded, y_hat)?;
    let scores: Vec<f64> = (0..ex.tokens.len())
        .map(|i| {
            embedded
                .row_slice(i)
                .iter()
                .zip(grad.row_slice(i))
                .map(|(e, g)| e * g)
                .sum::<f64>()
                .abs()
        })
        .collect();
    Message::from_positions(ex, top_k(&scores, k, None), Some(k))
}

/// The `k` most attended positions, from a single classifier call.
pub fn explain_topk_attention(c: &dyn Classifier, ex: &Example, k: usize) -> Result<Message> {
    let pred = c.predict(ex)?;
    let attention = pred
        .attention
        .ok_or_else(|| Error::Config("top-k attention needs a classifier with attention".into()))?;
    Message::from_positions(ex, top_k(attention.probs(), k, None), Some(k))
}

/// Every position with nonzero attention under a sparse head.
pub fn explain_selective(c: &AttentionClassifier, ex: &Example) -> Result<Message> {
    if !c.transform().is_sparse() {
        return Err(Error::Config(format!(
            "selective attention is undefined for a {} head",
            c.transform().name()
        )));
    }
    let attention = c.classify(ex)?.attention.expect("attention classifier");
    Message::from_positions(ex, attention.support().to_vec(), None)
}

/// The premise tokens a human annotator highlighted.
pub fn explain_human_highlights(ex: &Example) -> Result<Message> {
    let marks = ex
        .highlights
        .as_ref()
        .ok_or_else(|| Error::Data(format!("example {} has no highlight mask", ex.id)))?;
    Message::from_positions(ex, marks.clone(), None)
}
