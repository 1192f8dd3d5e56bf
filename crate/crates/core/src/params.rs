//! Named, ordered parameter storage.

use std::collections::HashMap;

use rand::Rng;

use crate::diffarray::{Array4, Shape, StatUpdate};
use crate::element::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persisted state that is not optimised (batch norm running stats).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Array4<T>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
    stats_ready: bool,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            stats_ready: false,
        }
    }

    /// Register a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Array4<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name `{name}`");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, kind });
        id
    }

    pub fn trainable(&mut self, name: impl Into<String>, value: Array4<T>) -> ParamId {
        self.insert(name, value, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Array4<T>) -> ParamId {
        self.insert(name, value, ParamKind::Buffer)
    }

    /// Fan-in scaled normal init: std = sqrt(2 / fan_in).
    pub fn he_normal(&mut self, name: impl Into<String>, shape: Shape, fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        self.trainable(name, Array4::randn(shape, std, rng))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array4<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array4<T> {
        &mut self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(id, _)| id)
    }

    /// Number of learnable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.shape().len())
            .sum()
    }

    /// Whether batch norm running statistics hold real values (either
    /// updated by a train step or loaded from a checkpoint).
    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }

    pub fn mark_stats_ready(&mut self) {
        self.stats_ready = true;
    }

    /// Apply exponential running-statistics updates recorded during a
    /// train-mode forward pass.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        for u in updates {
            let m = T::from_f64_lossy(u.momentum);
            let keep = T::one() - m;
            for (r, &b) in self.value_mut(u.mean).data_mut().iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.value_mut(u.var).data_mut().iter_mut().zip(&u.batch_var) {
                *r = keep * *r + m * b;
            }
        }
        if !updates.is_empty() {
            self.stats_ready = true;
        }
    }

    /// Same layout and values converted to another precision.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
            index: self.index.clone(),
            stats_ready: self.stats_ready,
        }
    }
}
