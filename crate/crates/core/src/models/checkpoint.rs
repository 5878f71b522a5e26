use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::serialize::{read_bundle, write_bundle};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::models::{AttentionClassifier, BowLayperson, ClassifierConfig, LaypersonConfig};
use crate::text::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Model family, e.g. `classifier` or `layperson`.
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab_fingerprint: String,
    #[serde(default)]
    pub dev_metric: Option<f64>,
    /// Training settings that produced the parameters.
    #[serde(default)]
    pub training: serde_json::Value,
}

/// Parameters plus the metadata needed to rebuild and validate a model.
#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub manifest: Manifest,
    pub params: ParamSet,
}

impl CheckpointBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = serde_json::to_value(&self.manifest)?;
        let mut w = BufWriter::new(File::create(path)?);
        write_bundle(&mut w, &manifest, &self.params)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    /// Reads a bundle; when `vocab` is given its fingerprint must match.
    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self> {
        let (manifest, params) = read_bundle(BufReader::new(File::open(path)?))?;
        let manifest: Manifest = serde_json::from_value(manifest)?;
        if let Some(v) = vocab {
            if v.fingerprint() != manifest.vocab_fingerprint {
                return Err(Error::Fingerprint {
                    expected: manifest.vocab_fingerprint,
                    found: v.fingerprint().to_string(),
                });
            }
        }
        Ok(CheckpointBundle { manifest, params })
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(Error::Format(format!(
                "checkpoint holds a {}, expected a {kind}",
                self.manifest.kind
            )));
        }
        Ok(())
    }

    pub fn from_classifier(
        model: &AttentionClassifier,
        vocab: &Vocabulary,
        dev_metric: Option<f64>,
        training: serde_json::Value,
    ) -> Result<Self> {
        Ok(CheckpointBundle {
            manifest: Manifest {
                kind: "classifier".into(),
                config: serde_json::to_value(model.config())?,
                vocab_fingerprint: vocab.fingerprint().to_string(),
                dev_metric,
                training,
            },
            params: model.params.clone(),
        })
    }

    pub fn classifier(&self) -> Result<AttentionClassifier> {
        self.expect_kind("classifier")?;
        let cfg: ClassifierConfig = serde_json::from_value(self.manifest.config.clone())?;
        let mut model = AttentionClassifier::new(cfg, None)?;
        model.params.copy_values_from(&self.params)?;
        Ok(model)
    }

    pub fn from_layperson(
        model: &BowLayperson,
        vocab: &Vocabulary,
        dev_metric: Option<f64>,
        training: serde_json::Value,
    ) -> Result<Self> {
        Ok(CheckpointBundle {
            manifest: Manifest {
                kind: "layperson".into(),
                config: serde_json::to_value(model.config())?,
                vocab_fingerprint: vocab.fingerprint().to_string(),
                dev_metric,
                training,
            },
            params: model.params.clone(),
        })
    }

    pub fn layperson(&self) -> Result<BowLayperson> {
        self.expect_kind("layperson")?;
        let cfg: LaypersonConfig = serde_json::from_value(self.manifest.config.clone())?;
        let mut model = BowLayperson::new(cfg)?;
        model.params.copy_values_from(&self.params)?;
        Ok(model)
    }
}
