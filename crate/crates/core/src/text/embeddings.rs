use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::{Vocabulary, PAD_ID};

/// Row-per-id embedding matrix.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Tensor,
    pub frozen: bool,
}

/// Coverage of a pretrained-vector load. Counts exclude `<pad>` and `<unk>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingReport {
    pub matched: usize,
    pub random: usize,
}

impl EmbeddingTable {
    /// Uniform(−0.1, 0.1) rows with a zero pad row, trainable.
    pub fn random(vocab_len: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..vocab_len * dim)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        data[PAD_ID * dim..(PAD_ID + 1) * dim]
            .iter_mut()
            .for_each(|v| *v = 0.0);
        EmbeddingTable {
            dim,
            vectors: Tensor::new(vec![vocab_len, dim], data).expect("shape"),
            frozen: false,
        }
    }
}

/// Reads a text word-vector file (`token v1 … vd` per line) and attaches
/// vectors to matching ids. Ids without a vector get uniform(−0.1, 0.1)
/// values from `seed`; the returned table is frozen.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<(EmbeddingTable, EmbeddingReport)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("nonempty line");
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("bad vector component: {e}"),
            })?;
        match dim {
            None if values.is_empty() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "vector has no components".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("dimension {} differs from {d}", values.len()),
                })
            }
            Some(_) => {}
        }
        if let Some(id) = vocab.get(token) {
            if !vocab.is_special(id) && rows[id].is_none() {
                rows[id] = Some(values);
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no vectors in file".into(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut report = EmbeddingReport {
        matched: 0,
        random: 0,
    };
    for (id, row) in rows.into_iter().enumerate() {
        match row {
            Some(v) => {
                report.matched += 1;
                data.extend(v);
            }
            None if id == PAD_ID => data.extend(std::iter::repeat_n(0.0, dim)),
            None => {
                if !vocab.is_special(id) {
                    report.random += 1;
                }
                data.extend((0..dim).map(|_| rng.gen_range(-0.1..0.1)));
            }
        }
    }
    if report.matched == 0 && vocab.regular_len() > 0 {
        log::warn!(
            "{}: no vocabulary token has a pretrained vector; all {} rows are random",
            path.display(),
            report.random
        );
    } else if report.random > 0 {
        log::info!(
            "{}: {} of {} tokens randomly initialized",
            path.display(),
            report.random,
            vocab.regular_len()
        );
    }
    Ok((
        EmbeddingTable {
            dim,
            vectors: Tensor::new(vec![vocab.len(), dim], data)?,
            frozen: true,
        },
        report,
    ))
}
