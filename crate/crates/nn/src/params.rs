//! Named parameter tensors and their initialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::InitScheme;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a tensor, which decides how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// `fan_in x fan_out` matrix applied as `x W`.
    Weight,
    /// `vocab x dim` lookup table.
    Embedding,
    Bias,
    /// Layer-norm gain, initialized to one.
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, tensor });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Redraws every tensor in insertion order.
    pub fn initialize(&mut self, scheme: InitScheme, rng: &mut ChaCha8Rng) {
        for e in &mut self.entries {
            init_tensor(&mut e.tensor, e.kind, scheme, rng);
        }
    }
}

/// Half-width of the Xavier-uniform interval.
pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform(t: &mut Tensor, limit: f64, rng: &mut impl Rng) {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    for x in t.data_mut() {
        *x = dist.sample(rng);
    }
}

pub fn init_tensor(t: &mut Tensor, kind: ParamKind, scheme: InitScheme, rng: &mut impl Rng) {
    let (fan_in, fan_out) = t.shape();
    match (kind, scheme) {
        (ParamKind::Bias, _) => t.data_mut().fill(0.0),
        (ParamKind::Gain, _) => t.data_mut().fill(1.0),
        (ParamKind::Weight | ParamKind::Embedding, InitScheme::Xavier) => {
            fill_uniform(t, xavier_limit(fan_in, fan_out), rng)
        }
        (ParamKind::Weight, InitScheme::BaselineDefault) => {
            fill_uniform(t, 1.0 / (fan_in as f64).sqrt(), rng)
        }
        (ParamKind::Embedding, InitScheme::BaselineDefault) => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for x in t.data_mut() {
                *x = normal.sample(rng);
            }
        }
    }
}
