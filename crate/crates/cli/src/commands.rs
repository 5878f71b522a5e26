use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use commexp::annotation::{AnnotationSession, SessionStore};
use commexp::explain::{
    explain_split, read_records, train_joint, write_records, Explainer, ExplainerConfig,
    ExplainerKind, ExplanationRecord, JointConfig, JointExplainer, JointItem,
};
use commexp::game::{
    curve_csv, explanation_entropy, format_table, k_sweep, train_layperson, CommunicationRecord,
    GameConfig, RunReport, SweepPoint,
};
use commexp::models::{
    AttentionClassifier, CheckpointBundle, Classifier, ClassifierConfig, FitOutcome,
    LaypersonConfig, LaypersonExample, TrainConfig,
};
use commexp::text::{
    generate_synthetic, load_corpus, load_embeddings, Corpus, CorpusFormat, Example,
    SyntheticConfig, Task, Vocabulary,
};
use commexp::{Error, Result, Transform};

use crate::args::*;

const CLASSIFIER_FILE: &str = "classifier.json";
const LAYPERSON_FILE: &str = "layperson.json";
const JOINT_FILE: &str = "joint.json";
const VOCAB_FILE: &str = "vocab.json";
const META_FILE: &str = "meta.json";

/// Written next to explanation dumps so later steps know the label space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpMeta {
    pub task: Task,
    pub labels: Vec<String>,
    pub explainer: String,
    pub classifier: String,
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenerateSynthetic(a) => generate(a),
        Command::TrainClassifier(a) => train_classifier(a),
        Command::Explain(a) => explain(a),
        Command::TrainLayperson(a) => layperson(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Joint(a) => joint(a),
        Command::CreateSession(a) => create_session(a),
        Command::Serve(a) => serve(a),
    }
}

fn prepare_out(dir: &Path, command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let doc = json!({ "command": command, "args": args, "resolved": resolved });
    let f = File::create(dir.join(format!("{command}.config.json")))?;
    serde_json::to_writer_pretty(f, &doc)?;
    Ok(())
}

fn emit(v: &Value) {
    println!("{v}");
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_log(path: &Path, fit: &FitOutcome) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    fit.write_log(&mut w)?;
    w.flush()?;
    Ok(())
}

fn accuracy(clf: &dyn Classifier, data: &[Example]) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut hits = 0;
    for ex in data {
        hits += usize::from(clf.predict(ex)?.label == ex.label);
    }
    Ok(Some(hits as f64 / data.len() as f64))
}

fn load_classifier(dir: &Path, vocab: &Vocabulary) -> Result<(AttentionClassifier, String)> {
    let bundle = CheckpointBundle::load(&dir.join(CLASSIFIER_FILE), Some(vocab))?;
    let clf = bundle.classifier()?;
    let id = format!("bilstm-{}", clf.transform().name());
    Ok((clf, id))
}

fn generate(a: &SyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_train: a.n_train,
        n_dev: a.n_dev,
        n_test: a.n_test,
        vocab_size: a.vocab_size,
        n_classes: a.n_classes,
        keywords_per_class: a.keywords_per_class,
        noise_len: a.noise_len,
        stopword_noise: a.stopword_noise,
        seed: a.seed,
    };
    prepare_out(
        &a.out_dir,
        "generate-synthetic",
        a,
        serde_json::to_value(&cfg)?,
    )?;
    let corpus = generate_synthetic(&cfg)?;
    for (name, split) in [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
    ] {
        let mut w = BufWriter::new(File::create(a.out_dir.join(format!("{name}.tsv")))?);
        for ex in split.iter() {
            writeln!(
                w,
                "{}\t{}",
                corpus.labels[ex.label],
                corpus.vocab.decode(&ex.tokens).join(" ")
            )?;
        }
        w.flush()?;
    }
    let spec = json!({
        "format": CorpusFormat::TsvLabelText,
        "train": "train.tsv",
        "dev": "dev.tsv",
        "test": "test.tsv",
        "labels": corpus.labels,
    });
    write_json(&a.out_dir.join("corpus.json"), &spec)?;
    emit(&json!({
        "corpus": a.out_dir.join("corpus.json"),
        "train": corpus.train.len(),
        "dev": corpus.dev.len(),
        "test": corpus.test.len(),
    }));
    Ok(())
}

fn train_classifier(a: &TrainClassifierArgs) -> Result<()> {
    let spec = a.corpus.spec()?;
    let train = a.train.resolve(TrainConfig::default())?;
    let corpus = load_corpus(&spec)?;
    let embeddings = match &a.embeddings {
        Some(p) => {
            let (table, report) = load_embeddings(p, &corpus.vocab, a.train.seed)?;
            info!(
                "embeddings: {} matched, {} random",
                report.matched, report.random
            );
            Some(table)
        }
        None => None,
    };
    let config = ClassifierConfig {
        task: corpus.task,
        vocab_size: corpus.vocab.len(),
        n_classes: corpus.n_classes(),
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        attn_dim: a.attn_dim,
        transform: Transform::parse(&a.transform)?,
        freeze_embeddings: embeddings.is_some(),
        seed: a.train.seed,
    };
    prepare_out(
        &a.out_dir,
        "train-classifier",
        a,
        json!({ "corpus": spec, "model": config, "train": train }),
    )?;
    info!(
        "training on {} examples ({} dev), vocabulary {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.vocab.len()
    );
    let mut clf = AttentionClassifier::new(config, embeddings.as_ref())?;
    let fit = clf.train(&corpus.train, &corpus.dev, &train)?;
    CheckpointBundle::from_classifier(
        &clf,
        &corpus.vocab,
        fit.best_dev,
        serde_json::to_value(&train)?,
    )?
    .save(&a.out_dir.join(CLASSIFIER_FILE))?;
    corpus.vocab.save(&a.out_dir.join(VOCAB_FILE))?;
    write_log(&a.out_dir.join("train_log.jsonl"), &fit)?;
    emit(&json!({
        "dev_accuracy": fit.best_dev,
        "best_epoch": fit.best_epoch,
        "epochs_run": fit.epochs_run,
        "test_accuracy": accuracy(&clf, &corpus.test)?,
    }));
    Ok(())
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let spec = a.corpus.spec()?;
    let kind = ExplainerKind::parse(&a.kind)?;
    let ecfg = ExplainerConfig {
        kind,
        k: a.k,
        seed: a.seed,
    };
    ecfg.validate()?;
    prepare_out(
        &a.out_dir,
        "explain",
        a,
        json!({ "corpus": spec, "explainer": ecfg }),
    )?;
    let corpus = load_corpus(&spec)?;
    let (clf, clf_id) = load_classifier(&a.model_dir, &corpus.vocab)?;
    let joint = match (kind, &a.joint_dir) {
        (ExplainerKind::Joint, Some(dir)) => {
            let bundle = CheckpointBundle::load(&dir.join(JOINT_FILE), Some(&corpus.vocab))?;
            Some(JointExplainer::from_bundle(&bundle, &corpus.vocab)?)
        }
        (ExplainerKind::Joint, None) => {
            return Err(Error::Config("kind joint needs --joint-dir".into()))
        }
        _ => None,
    };
    let explainer = Explainer::new(ecfg.clone(), Some(&clf), joint.as_ref())?;
    let mut counts = serde_json::Map::new();
    for name in &a.splits {
        let data = corpus.split(name)?;
        let out = explain_split(&explainer, &clf, data, &corpus.vocab)?;
        let records: Vec<ExplanationRecord> = out.into_iter().map(|(_, r)| r).collect();
        let mut w = BufWriter::new(File::create(a.out_dir.join(format!("{name}.jsonl")))?);
        write_records(&mut w, &records)?;
        w.flush()?;
        info!("{name}: {} explanations", records.len());
        counts.insert(name.clone(), json!(records.len()));
    }
    let meta = DumpMeta {
        task: corpus.task,
        labels: corpus.labels.clone(),
        explainer: ecfg.id(),
        classifier: clf_id,
    };
    write_json(&a.out_dir.join(META_FILE), &meta)?;
    corpus.vocab.save(&a.out_dir.join(VOCAB_FILE))?;
    emit(&json!({ "explainer": meta.explainer, "records": counts }));
    Ok(())
}

fn read_dump(path: &Path) -> Result<Vec<ExplanationRecord>> {
    let f = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_records(BufReader::new(f))
}

fn dump_dir(dump: &Path) -> PathBuf {
    dump.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn layperson_items(records: &[ExplanationRecord]) -> Vec<LaypersonExample> {
    records
        .iter()
        .map(|r| LaypersonExample {
            bag: r.message_ids.clone(),
            hypothesis: r.hypothesis_ids.clone(),
            target: r.y_hat,
        })
        .collect()
}

fn layperson(a: &TrainLaypersonArgs) -> Result<()> {
    let train = a.train.resolve(TrainConfig::communication())?;
    prepare_out(&a.out_dir, "train-layperson", a, json!({ "train": train }))?;
    let meta: DumpMeta = read_json(&a.explanations.join(META_FILE))?;
    let vocab = Vocabulary::load(&a.explanations.join(VOCAB_FILE))?;
    let tr = read_dump(&a.explanations.join("train.jsonl"))?;
    let dev = read_dump(&a.explanations.join("dev.jsonl"))?;
    let lcfg = LaypersonConfig {
        task: meta.task,
        vocab_size: vocab.len(),
        n_classes: meta.labels.len(),
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        seed: a.train.seed,
    };
    let (l, fit) = train_layperson(lcfg, &layperson_items(&tr), &layperson_items(&dev), &train)?;
    CheckpointBundle::from_layperson(&l, &vocab, fit.best_dev, serde_json::to_value(&train)?)?
        .save(&a.out_dir.join(LAYPERSON_FILE))?;
    write_log(&a.out_dir.join("train_log.jsonl"), &fit)?;
    emit(&json!({
        "explainer": meta.explainer,
        "dev_csr": fit.best_dev,
        "best_epoch": fit.best_epoch,
        "epochs_run": fit.epochs_run,
    }));
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    prepare_out(&a.out_dir, "evaluate", a, Value::Null)?;
    let mut records = read_dump(&a.dump)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("explanation dump"));
    }
    let dir = dump_dir(&a.dump);
    let meta: Option<DumpMeta> = dir
        .join(META_FILE)
        .exists()
        .then(|| read_json(&dir.join(META_FILE)))
        .transpose()?;
    if let Some(ldir) = &a.layperson {
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let l = CheckpointBundle::load(&ldir.join(LAYPERSON_FILE), Some(&vocab))?.layperson()?;
        for r in &mut records {
            r.y_tilde = Some(l.predict(&r.message_ids, r.hypothesis_ids.as_deref())?);
        }
    }
    let mut comm = Vec::with_capacity(records.len());
    let mut sets = Vec::with_capacity(records.len());
    for r in &records {
        let y_tilde = r.y_tilde.ok_or_else(|| {
            Error::Data(format!(
                "record {} has no y_tilde; pass --layperson",
                r.example_id
            ))
        })?;
        let set: BTreeSet<usize> = r.message_ids.iter().copied().collect();
        comm.push(CommunicationRecord::new(
            r.example_id.clone(),
            r.y,
            r.y_hat,
            y_tilde,
            &set,
        ));
        sets.push(set);
    }
    let n_classes = match &meta {
        Some(m) => m.labels.len(),
        None => {
            comm.iter()
                .map(|c| c.y.max(c.y_hat).max(c.y_tilde))
                .max()
                .unwrap_or(0)
                + 1
        }
    }
    .max(2);
    let explainer = records[0].explainer.clone();
    let classifier = meta.as_ref().map_or("unknown", |m| m.classifier.as_str());
    let report = RunReport::from_records(
        &explainer,
        classifier,
        records[0].k,
        n_classes,
        &comm,
        &sets,
        a.entropy_base,
    )?;
    write_json(&a.out_dir.join("report.json"), &report)?;
    let mut w = BufWriter::new(File::create(a.out_dir.join("records.jsonl"))?);
    write_records(&mut w, &records)?;
    w.flush()?;
    if a.json {
        emit(&serde_json::to_value(&report)?);
    } else {
        print!("{}", format_table(std::slice::from_ref(&report)));
    }
    Ok(())
}

fn game_config(a: &TrainOpts, embed_dim: usize, hidden: usize) -> Result<GameConfig> {
    Ok(GameConfig {
        train: a.resolve(TrainConfig::communication())?,
        layperson_embed_dim: embed_dim,
        layperson_hidden: hidden,
        seed: a.seed,
        entropy_base: 2.0,
    })
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let spec = a.corpus.spec()?;
    let points =
        a.ks.iter()
            .map(|s| SweepPoint::parse(s))
            .collect::<Result<Vec<_>>>()?;
    let base = ExplainerConfig {
        kind: ExplainerKind::parse(&a.kind)?,
        k: None,
        seed: a.explainer_seed,
    };
    let cfg = game_config(&a.train, a.layperson_embed_dim, a.layperson_hidden)?;
    prepare_out(
        &a.out_dir,
        "sweep",
        a,
        json!({ "corpus": spec, "points": points, "explainer": base, "game": cfg }),
    )?;
    let corpus = require_test(load_corpus(&spec)?)?;
    let (clf, clf_id) = load_classifier(&a.model_dir, &corpus.vocab)?;
    let reports = k_sweep(&clf, &clf_id, &base, &points, &corpus, &cfg)?;
    fs::write(a.out_dir.join("curve.csv"), curve_csv(&reports))?;
    write_json(&a.out_dir.join("reports.json"), &reports)?;
    if a.json {
        emit(&serde_json::to_value(&reports)?);
    } else {
        print!("{}", format_table(&reports));
    }
    Ok(())
}

fn require_test(corpus: Corpus) -> Result<Corpus> {
    if corpus.test.is_empty() {
        return Err(Error::Config(
            "this command scores on the test split; give a test file".into(),
        ));
    }
    Ok(corpus)
}

fn joint(a: &JointArgs) -> Result<()> {
    let spec = a.corpus.spec()?;
    let cfg = JointConfig {
        lambda: a.lambda,
        beta: a.beta,
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        attn_dim: a.attn_dim,
        ffn_hidden: a.ffn_hidden,
        default_k: a.k,
        layperson_embed_dim: a.layperson_embed_dim,
        layperson_hidden: a.layperson_hidden,
        train: a.train.resolve(TrainConfig::communication())?,
        seed: a.train.seed,
    };
    cfg.validate()?;
    prepare_out(
        &a.out_dir,
        "joint",
        a,
        json!({ "corpus": spec, "joint": cfg }),
    )?;
    let corpus = load_corpus(&spec)?;
    let (clf, _) = load_classifier(&a.model_dir, &corpus.vocab)?;
    let train = JointItem::prepare(&clf, &corpus.train)?;
    let dev = JointItem::prepare(&clf, &corpus.dev)?;
    let mut e = JointExplainer::new(
        cfg,
        corpus.task,
        &corpus.vocab,
        corpus.n_classes(),
        clf.state_dim(),
    )?;
    let out = train_joint(&mut e, &train, &dev)?;
    e.to_bundle(&corpus.vocab, out.fit.best_dev)?
        .save(&a.out_dir.join(JOINT_FILE))?;
    write_log(&a.out_dir.join("train_log.jsonl"), &out.fit)?;
    let messages = dev
        .iter()
        .map(|it| Ok(e.message(&it.example, it.y_hat, a.k)?.tokens))
        .collect::<Result<Vec<_>>>()?;
    let entropy = match explanation_entropy(&messages, 2.0) {
        Ok(h) => Some(h),
        Err(Error::UndefinedMetric(_)) => None,
        Err(err) => return Err(err),
    };
    let test_csr = if corpus.test.is_empty() {
        None
    } else {
        Some(e.csr(&JointItem::prepare(&clf, &corpus.test)?, a.k)?)
    };
    let report = json!({
        "k": a.k,
        "dev_csr": e.csr(&dev, a.k)?,
        "test_csr": test_csr,
        "dev_entropy": entropy,
        "best_epoch": out.fit.best_epoch,
        "epochs_run": out.fit.epochs_run,
    });
    write_json(&a.out_dir.join("report.json"), &report)?;
    emit(&report);
    Ok(())
}

fn create_session(a: &CreateSessionArgs) -> Result<()> {
    let meta: DumpMeta = read_json(&a.explanations.join(META_FILE))?;
    let records = read_dump(&a.explanations.join(format!("{}.jsonl", a.split)))?;
    let session =
        AnnotationSession::from_records(&a.id, meta.task, meta.labels, &records, a.items, a.seed)?;
    let store = SessionStore::open(&a.sessions_dir)?;
    store.create(&session)?;
    emit(&json!({
        "session": session.id,
        "explainer": session.explainer,
        "items": session.items.len(),
    }));
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let store = SessionStore::open(&a.sessions_dir)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        let addr = listener.local_addr()?;
        emit(&json!({ "listening": addr.to_string() }));
        info!("serving sessions from {}", a.sessions_dir.display());
        axum::serve(listener, crate::server::router(store)).await?;
        Ok(())
    })
}
