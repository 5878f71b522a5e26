use std::collections::BTreeSet;
use std::sync::OnceLock;

use commexp::explain::{Explainer, ExplainerConfig, ExplainerKind};
use commexp::game::{curve_csv, k_sweep, play, GameConfig, RunReport, SweepPoint};
use commexp::models::{AttentionClassifier, ClassifierConfig, TrainConfig};
use commexp::text::{generate_synthetic, Corpus, SyntheticConfig, Task};
use commexp::{Error, Transform};

struct Setup {
    corpus: Corpus,
    clf: AttentionClassifier,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let corpus = generate_synthetic(&SyntheticConfig {
            n_train: 300,
            n_dev: 80,
            n_test: 120,
            vocab_size: 120,
            noise_len: 12,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let cfg = ClassifierConfig {
            embed_dim: 12,
            hidden: 12,
            attn_dim: 12,
            seed: 4,
            ..ClassifierConfig::new(Task::TextClf, corpus.vocab.len(), 2, Transform::Softmax)
        };
        let mut clf = AttentionClassifier::new(cfg, None).unwrap();
        let tcfg = TrainConfig {
            epochs: 4,
            patience: 4,
            seed: 4,
            optimizer: commexp::autodiff::AdamWConfig {
                lr: 5e-3,
                ..Default::default()
            },
            ..Default::default()
        };
        clf.train(&corpus.train, &corpus.dev, &tcfg).unwrap();
        Setup { corpus, clf }
    })
}

fn game() -> GameConfig {
    GameConfig {
        train: TrainConfig {
            epochs: 4,
            patience: 2,
            ..TrainConfig::communication()
        },
        seed: 8,
        ..Default::default()
    }
}

fn run(kind: ExplainerKind, k: Option<usize>) -> RunReport {
    let s = setup();
    let e = Explainer::new(ExplainerConfig::new(kind, k), Some(&s.clf), None).unwrap();
    play(&s.clf, "clf", &e, &s.corpus, &game()).unwrap().0
}

#[test]
fn confusion_diagonal_is_csr() {
    let r = run(ExplainerKind::TopkAttention, Some(2));
    let total: usize = r.confusion.iter().flatten().sum();
    assert_eq!(total, r.n);
    assert_eq!(r.n, 120);
    let diag: usize = (0..2).map(|i| r.confusion[i][i]).sum();
    assert_eq!(diag as f64 / r.n as f64, r.csr);
    assert!(r.mean_k <= 2.0 && r.mean_k > 1.0);
    assert!(r.layperson_dev_csr.is_some());
}

#[test]
fn csr_equals_layperson_accuracy_where_the_classifier_is_right() {
    let s = setup();
    let e = Explainer::new(
        ExplainerConfig::new(ExplainerKind::TopkGradient, Some(3)),
        Some(&s.clf),
        None,
    )
    .unwrap();
    let (_, records) = play(&s.clf, "clf", &e, &s.corpus, &game()).unwrap();
    let right: Vec<_> = records.into_iter().filter(|r| r.y == r.y_hat).collect();
    assert!(right.len() > 100);
    let sets: Vec<BTreeSet<usize>> = right
        .iter()
        .map(|r| r.message.iter().copied().collect())
        .collect();
    let r = RunReport::from_records("g", "clf", Some(3), 2, &right, &sets, 2.0).unwrap();
    assert_eq!(r.csr, r.acc_l);
}

#[test]
fn empty_messages_reduce_the_layperson_to_a_constant_guess() {
    let s = setup();
    let r = run(ExplainerKind::Random, Some(0));
    let y_hat: Vec<usize> = s
        .corpus
        .test
        .iter()
        .map(|e| s.clf.classify(e).unwrap().label)
        .collect();
    let ones = y_hat.iter().filter(|&&y| y == 1).count();
    let hits = r.confusion[0][0] + r.confusion[1][1];
    assert!(
        hits == ones || hits == r.n - ones,
        "hits {hits}, ŷ=1 on {ones} of {}",
        r.n
    );
    assert!(r.confusion.iter().all(|row| row[0] == 0) || r.confusion.iter().all(|row| row[1] == 0));
    assert_eq!(r.entropy, None);
    assert_eq!(r.mean_k, 0.0);
}

#[test]
fn games_are_reproducible() {
    let a = run(ExplainerKind::Random, Some(3));
    let b = run(ExplainerKind::Random, Some(3));
    assert_eq!(a, b);
}

#[test]
fn sweep_points_map_to_reports() {
    let s = setup();
    let base = ExplainerConfig::new(ExplainerKind::TopkAttention, Some(1));
    let one = k_sweep(
        &s.clf,
        "clf",
        &base,
        &[SweepPoint::K(3)],
        &s.corpus,
        &game(),
    )
    .unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].k, Some(3));
    assert_eq!(one[0], run(ExplainerKind::TopkAttention, Some(3)));

    let two = k_sweep(
        &s.clf,
        "clf",
        &base,
        &[SweepPoint::K(1), SweepPoint::Full],
        &s.corpus,
        &game(),
    )
    .unwrap();
    assert_eq!(two[1].k, None);
    assert_eq!(two[1].explainer, "topk_attention@full");
    let longest = s.corpus.test.iter().map(|e| e.tokens.len()).max().unwrap();
    assert!(two[1].mean_k <= longest as f64);
    let csv = curve_csv(&two);
    assert_eq!(csv.lines().nth(2).unwrap().split(',').next(), Some("full"));
}

#[test]
fn sweep_rejects_bad_point_lists() {
    let s = setup();
    let base = ExplainerConfig::new(ExplainerKind::TopkAttention, Some(1));
    for pts in [
        vec![],
        vec![SweepPoint::K(4), SweepPoint::K(2)],
        vec![SweepPoint::K(2), SweepPoint::K(2)],
    ] {
        let err = k_sweep(&s.clf, "clf", &base, &pts, &s.corpus, &game()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
    assert!(SweepPoint::parse("many").is_err());
    assert_eq!(SweepPoint::parse("full").unwrap(), SweepPoint::Full);
}
