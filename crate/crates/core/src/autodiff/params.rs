use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Parameter ids of a [`ParamSet`] bound into one graph, in set order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Splits the binding of a [`ParamSet::concat`] result back into its parts.
    pub fn split_at(&self, mid: usize) -> (Bound, Bound) {
        let (a, b) = self.0.split_at(mid);
        (Bound(a.to_vec()), Bound(b.to_vec()))
    }
}

/// Position of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `other` after `self`; ids of `self` stay valid and ids of
    /// `other` are shifted by `self.len()`.
    pub fn concat(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        for p in &other.entries {
            if out.index.contains_key(&p.name) {
                return Err(Error::Contract(format!(
                    "duplicate parameter {} in concat",
                    p.name
                )));
            }
            out.insert(p.name.clone(), p.value.clone(), p.trainable);
        }
        Ok(out)
    }

    /// Inverse of [`ParamSet::concat`].
    pub fn split_at(&self, mid: usize) -> (ParamSet, ParamSet) {
        let mut a = ParamSet::new();
        let mut b = ParamSet::new();
        for (i, p) in self.entries.iter().enumerate() {
            let dst = if i < mid { &mut a } else { &mut b };
            dst.insert(p.name.clone(), p.value.clone(), p.trainable);
        }
        (a, b)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|p| g.leaf(p.value.clone(), p.trainable))
                .collect(),
        )
    }

    /// Binds every parameter as a constant (no gradients at all).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|p| g.constant(p.value.clone()))
                .collect(),
        )
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Format(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw little-endian payloads.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.entries {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Sum of gradients over several graphs, aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
    count: usize,
}

impl GradBuffer {
    pub fn new(params: &ParamSet) -> Self {
        GradBuffer {
            grads: params
                .entries
                .iter()
                .map(|p| vec![0.0; p.value.len()])
                .collect(),
            count: 0,
        }
    }

    pub fn accumulate(&mut self, grads: &mut Gradients, bound: &Bound) {
        for (buf, &v) in self.grads.iter_mut().zip(bound.vars()) {
            if let Some(g) = grads.take(v) {
                buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x);
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradient over accumulated examples.
    pub fn mean(&self) -> Vec<Vec<f64>> {
        let c = self.count.max(1) as f64;
        self.grads
            .iter()
            .map(|g| g.iter().map(|x| x / c).collect())
            .collect()
    }

    pub fn clear(&mut self) {
        self.grads
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
        self.count = 0;
    }
}
