//! Corpus ingestion, vocabularies, pretrained vectors and synthetic data.

mod corpus;
mod embeddings;
pub mod stopwords;
mod synthetic;
mod vocab;

pub use corpus::{
    encode, load_corpus, read_split, tokenize, Corpus, CorpusFormat, CorpusSpec, Example,
    RawExample, Task,
};
pub use embeddings::{load_embeddings, EmbeddingReport, EmbeddingTable};
pub use synthetic::{generate_synthetic, keyword, SyntheticConfig};
pub use vocab::{stopword_mask, Vocabulary, PAD, PAD_ID, UNK, UNK_ID};
