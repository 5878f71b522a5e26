use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commexp::models::TrainConfig;
use commexp::text::{CorpusFormat, CorpusSpec};
use commexp::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "commexp",
    version,
    about = "Train attention classifiers, explain their decisions, and score explanations by how well a layperson recovers the decision from them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded keyword corpus as TSV splits plus a corpus.json.
    GenerateSynthetic(SyntheticArgs),
    /// Train the BiLSTM attention classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Dump one explainer's messages for corpus splits as JSON lines.
    Explain(ExplainArgs),
    /// Train a bag-of-words layperson on explanation dumps.
    TrainLayperson(TrainLaypersonArgs),
    /// Score a dump: CSR, layperson accuracy, confusion and entropy.
    Evaluate(EvaluateArgs),
    /// CSR as a function of message size, one fresh layperson per point.
    Sweep(SweepArgs),
    /// Train an explainer and layperson jointly against a frozen classifier.
    Joint(JointArgs),
    /// Create a human annotation session from an explanation dump.
    CreateSession(CreateSessionArgs),
    /// Serve annotation sessions over HTTP.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateSynthetic(_) => "generate-synthetic",
            Command::TrainClassifier(_) => "train-classifier",
            Command::Explain(_) => "explain",
            Command::TrainLayperson(_) => "train-layperson",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Joint(_) => "joint",
            Command::CreateSession(_) => "create-session",
            Command::Serve(_) => "serve",
        }
    }
}

/// Either a corpus.json description or the split files directly.
#[derive(Args, Clone, Debug, Serialize)]
pub struct CorpusArgs {
    /// JSON corpus description; relative paths inside it are resolved
    /// against its directory.
    #[arg(long, conflicts_with_all = ["format", "train"])]
    pub corpus: Option<PathBuf>,
    /// tsv, snli or esnli.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma-separated label names in index order.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Keep only these labels, renumbered in the given order.
    #[arg(long, value_delimiter = ',')]
    pub keep_labels: Option<Vec<String>>,
    /// Share of train held out as dev when no dev file is given.
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

impl CorpusArgs {
    pub fn spec(&self) -> Result<CorpusSpec> {
        let mut spec = match (&self.corpus, &self.format, &self.train) {
            (Some(path), _, _) => {
                let text = std::fs::read_to_string(path)?;
                let mut spec: CorpusSpec = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                spec.train = base.join(&spec.train);
                spec.dev = spec.dev.map(|p| base.join(p));
                spec.test = spec.test.map(|p| base.join(p));
                spec
            }
            (None, Some(format), Some(train)) => {
                let mut spec = CorpusSpec::new(CorpusFormat::parse(format)?, train);
                spec.dev = self.dev.clone();
                spec.test = self.test.clone();
                spec
            }
            _ => {
                return Err(Error::Config(
                    "give --corpus, or --format with --train".into(),
                ))
            }
        };
        if self.labels.is_some() {
            spec.labels = self.labels.clone();
        }
        if self.keep_labels.is_some() {
            spec.keep_labels = self.keep_labels.clone();
        }
        if let Some(f) = self.dev_fraction {
            spec.dev_fraction = f;
        }
        if let Some(s) = self.split_seed {
            spec.seed = s;
        }
        Ok(spec)
    }
}

/// Optimizer and schedule overrides on top of a command's defaults.
#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs without dev improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds initialization and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainOpts {
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.lr = lr;
        }
        if let Some(wd) = self.weight_decay {
            cfg.optimizer.weight_decay = wd;
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        if cfg.patience > cfg.epochs {
            cfg.patience = cfg.epochs;
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 500)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 2)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 10)]
    pub keywords_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub noise_len: usize,
    /// Bundled stopwords mixed into the noise vocabulary.
    #[arg(long, default_value_t = 20)]
    pub stopword_noise: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// softmax, sparsemax, entmax (1.5) or entmax:<alpha>.
    #[arg(long, default_value = "softmax")]
    pub transform: String,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub attn_dim: usize,
    /// Pretrained word vectors (`token v1 ... vd` per line); sets the
    /// embedding width and freezes the table.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ExplainArgs {
    /// Directory written by train-classifier.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// random, erasure, topk_gradient, topk_attention, selective_attention,
    /// joint or human_highlights.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed of the random explainer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory written by the joint command; needed for kind=joint.
    #[arg(long)]
    pub joint_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "train,dev,test")]
    pub splits: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainLaypersonArgs {
    /// Directory written by explain, with train and dev dumps.
    #[arg(long)]
    pub explanations: PathBuf,
    /// Hypothesis reader sizes for NLI.
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Explanation dump (JSON lines). Without --layperson every record must
    /// carry y_tilde.
    #[arg(long)]
    pub dump: PathBuf,
    /// Directory written by train-layperson.
    #[arg(long)]
    pub layperson: Option<PathBuf>,
    /// Logarithm base of the explanation entropy.
    #[arg(long, default_value_t = 2.0)]
    pub entropy_base: f64,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value = "topk_attention")]
    pub kind: String,
    /// Ascending message sizes; `full` is the whole input.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,full")]
    pub ks: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub explainer_seed: u64,
    #[arg(long, default_value_t = 64)]
    pub layperson_embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub layperson_hidden: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct JointArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Weight of the faithfulness term.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Final probability that the explainer sees the decision.
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Message size used for dev selection and at test time.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub attn_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub layperson_embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub layperson_hidden: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct CreateSessionArgs {
    #[arg(long)]
    pub explanations: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Letters, digits, '-' and '_'.
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value_t = commexp::annotation::DEFAULT_SESSION_ITEMS)]
    pub items: usize,
    /// Seeds item selection, item order and token shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sessions_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub sessions_dir: PathBuf,
    /// Port 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}
