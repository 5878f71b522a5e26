use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, AdamState, AdamWConfig, Bound, GradBuffer, Graph, ParamSet, Var,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    Accuracy,
    Csr,
}

impl DevMetric {
    pub fn name(self) -> &'static str {
        match self {
            DevMetric::Accuracy => "accuracy",
            DevMetric::Csr => "csr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dev_metric: DevMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            epochs: 10,
            patience: 5,
            seed: 0,
            dev_metric: DevMetric::Accuracy,
        }
    }
}

impl TrainConfig {
    /// Layperson and joint-game settings: batch 16, patience 3, decay 1e-5,
    /// selection by dev CSR.
    pub fn communication() -> Self {
        TrainConfig {
            optimizer: AdamWConfig {
                weight_decay: 1e-5,
                ..AdamWConfig::default()
            },
            batch_size: 16,
            epochs: 10,
            patience: 3,
            seed: 0,
            dev_metric: DevMetric::Csr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        Ok(())
    }
}

/// One line of the JSON-lines metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitOutcome {
    /// Dev metric of the restored parameters, `None` when no epoch ran.
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub log: Vec<MetricRecord>,
}

impl FitOutcome {
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.log {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-step information handed to the loss closure.
pub struct StepContext<'a> {
    pub epoch: usize,
    pub step: usize,
    /// Fraction of the planned optimizer steps already taken, in `[0, 1)`.
    pub progress: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Minibatch AdamW training with early stopping on a dev metric.
///
/// `loss` builds one example's scalar loss on a fresh graph; gradients are
/// averaged over the batch. After each epoch `dev` scores the current
/// parameters (higher is better). The best-scoring parameters are restored
/// before returning.
pub fn fit<T, L, D>(
    params: &mut ParamSet,
    train: &[T],
    cfg: &TrainConfig,
    mut loss: L,
    mut dev: D,
) -> Result<FitOutcome>
where
    L: FnMut(&mut Graph, &Bound, &T, &mut StepContext<'_>) -> Result<Var>,
    D: FnMut(&ParamSet) -> Result<f64>,
{
    cfg.validate()?;
    let mut out = FitOutcome::default();
    if cfg.epochs == 0 {
        return Ok(out);
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new();
    let mut buf = GradBuffer::new(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut stale = 0;
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            buf.clear();
            for &i in batch {
                let mut g = Graph::new();
                let bound = params.bind(&mut g);
                let mut ctx = StepContext {
                    epoch,
                    step,
                    progress: global_step as f64 / total_steps,
                    rng: &mut rng,
                };
                let l = loss(&mut g, &bound, &train[i], &mut ctx)?;
                let value = g.value(l).item();
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: value,
                    });
                }
                let mut grads = g.backward(l).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Divergence {
                        epoch,
                        step,
                        loss: value,
                    },
                    e => e,
                })?;
                buf.accumulate(&mut grads, &bound);
                loss_sum += value;
            }
            adamw_step(params, &buf.mean(), &mut state, &cfg.optimizer)?;
            global_step += 1;
        }
        out.epochs_run = epoch;
        out.log.push(MetricRecord {
            epoch,
            split: "train".into(),
            metric: "loss".into(),
            value: loss_sum / train.len() as f64,
        });
        let score = dev(params)?;
        out.log.push(MetricRecord {
            epoch,
            split: "dev".into(),
            metric: cfg.dev_metric.name().into(),
            value: score,
        });
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev {} {score:.4}",
            loss_sum / train.len() as f64,
            cfg.dev_metric.name()
        );
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((score, epoch, snapshot)) = best {
        *params = snapshot;
        out.best_dev = Some(score);
        out.best_epoch = Some(epoch);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn quadratic() -> (ParamSet, Vec<f64>) {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::row(vec![3.0]), true);
        (ps, vec![0.0; 16])
    }

    fn sq_loss(g: &mut Graph, b: &Bound, t: &f64, _: &mut StepContext<'_>) -> Result<Var> {
        let x = b.vars()[0];
        let target = g.constant(Tensor::row(vec![*t]));
        g.squared_distance(x, target)
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let (mut ps, data) = quadratic();
        let before = ps.clone();
        let cfg = TrainConfig {
            epochs: 0,
            patience: 0,
            ..Default::default()
        };
        let out = fit(&mut ps, &data, &cfg, sq_loss, |_| Ok(0.0)).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(ps.content_hash(), before.content_hash());
    }

    #[test]
    fn patience_above_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 2,
            patience: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn restores_best_dev_parameters() {
        let (mut ps, data) = quadratic();
        let cfg = TrainConfig {
            epochs: 6,
            patience: 6,
            optimizer: AdamWConfig {
                lr: 0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut calls = 0;
        let mut snapshots = Vec::new();
        let out = fit(&mut ps, &data, &cfg, sq_loss, |p| {
            calls += 1;
            snapshots.push(p.entries()[0].value.data()[0]);
            Ok(if calls == 2 { 1.0 } else { 0.0 })
        })
        .unwrap();
        assert_eq!(out.best_epoch, Some(2));
        assert_eq!(ps.entries()[0].value.data()[0], snapshots[1]);
    }

    #[test]
    fn early_stop_after_patience() {
        let (mut ps, data) = quadratic();
        let cfg = TrainConfig {
            epochs: 10,
            patience: 2,
            ..Default::default()
        };
        let out = fit(&mut ps, &data, &cfg, sq_loss, |_| Ok(0.5)).unwrap();
        assert_eq!(out.epochs_run, 3);
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        let (mut ps, data) = quadratic();
        let cfg = TrainConfig {
            epochs: 1,
            patience: 1,
            ..Default::default()
        };
        let r = fit(
            &mut ps,
            &data,
            &cfg,
            |g, b, _, _| {
                let x = b.vars()[0];
                let inf = g.constant(Tensor::row(vec![f64::INFINITY]));
                g.squared_distance(x, inf)
            },
            |_| Ok(0.0),
        );
        assert!(matches!(
            r,
            Err(Error::Divergence {
                epoch: 1,
                step: 0,
                ..
            })
        ));
    }
}
