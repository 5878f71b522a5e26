use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate and weight decay must be nonnegative (lr={}, wd={})",
                self.lr, self.weight_decay
            )));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.eps > 0.0) {
            return Err(Error::Config(
                "betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment estimates, lazily sized on the first step.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One AdamW update: bias-corrected Adam step, then decoupled decay
/// `p ← p − lr·wd·p`. Frozen parameters are left untouched.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.len() != params.len() {
        return Err(Error::Shape {
            op: "adamw_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    if state.m.is_empty() {
        state.m = params
            .entries()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in params.entries_mut().iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let g = &grads[i];
        if g.len() != p.value.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.value.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            *w -= cfg.lr * cfg.weight_decay * *w;
        }
    }
    Ok(())
}
