use criterion::{black_box, criterion_group, criterion_main, Criterion};

use commexp::autodiff::Graph;
use commexp::explain::{explain_erasure, explain_topk_attention, explain_topk_gradient};
use commexp::models::{AttentionClassifier, ClassifierConfig};
use commexp::text::{generate_synthetic, Example, SyntheticConfig, Task};
use commexp::Transform;

fn setup(transform: Transform) -> (AttentionClassifier, Example) {
    let corpus = generate_synthetic(&SyntheticConfig {
        n_train: 4,
        n_dev: 1,
        n_test: 1,
        noise_len: 40,
        ..Default::default()
    })
    .unwrap();
    let cfg = ClassifierConfig {
        embed_dim: 32,
        hidden: 32,
        attn_dim: 32,
        ..ClassifierConfig::new(Task::TextClf, corpus.vocab.len(), 2, transform)
    };
    let ex = corpus.train[0].clone();
    (AttentionClassifier::new(cfg, None).unwrap(), ex)
}

fn forward_backward(c: &mut Criterion) {
    for t in [
        Transform::Softmax,
        Transform::ENTMAX15,
        Transform::Sparsemax,
    ] {
        let (clf, ex) = setup(t);
        c.bench_function(&format!("forward {}", t.name()), |b| {
            b.iter(|| clf.classify(black_box(&ex)))
        });
        c.bench_function(&format!("forward+backward {}", t.name()), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let bound = clf.params.bind(&mut g);
                let loss = clf.loss(&mut g, &bound, black_box(&ex), 1).unwrap();
                g.backward(loss).unwrap()
            })
        });
    }
}

fn explainers(c: &mut Criterion) {
    let (clf, ex) = setup(Transform::Softmax);
    c.bench_function("topk_attention k=5", |b| {
        b.iter(|| explain_topk_attention(&clf, black_box(&ex), 5))
    });
    c.bench_function("topk_gradient k=5", |b| {
        b.iter(|| explain_topk_gradient(&clf, black_box(&ex), 5))
    });
    c.bench_function("erasure k=5", |b| {
        b.iter(|| explain_erasure(&clf, black_box(&ex), 5))
    });
}

criterion_group!(benches, forward_backward, explainers);
criterion_main!(benches);
