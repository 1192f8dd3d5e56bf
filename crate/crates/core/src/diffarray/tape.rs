use std::collections::HashMap;

use crate::diffarray::{Array4, Shape};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward-pass mode. Only batch norm behaves differently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward input values, the forward output and the
/// gradient flowing into the output. It returns one entry per input;
/// `None` means the input receives no gradient from this node.
pub trait Operation<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Array4<T>], output: &Array4<T>, grad: &[T]) -> Vec<Option<Vec<T>>>;
}

/// A running-statistics update produced by a train-mode batch norm. The
/// caller applies these to the parameter store once the step completes.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub momentum: f64,
}

struct Node<T: Element> {
    value: Array4<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Operation<T>>>,
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    stat_updates: Vec<StatUpdate<T>>,
    consumed: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            stat_updates: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input (non-parameter) leaf.
    pub fn leaf(&mut self, value: Array4<T>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a parameter from `store`. Binding the same id twice returns the
    /// same node, so repeated uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Array4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Append an operation's output. Non-finite outputs are rejected.
    pub fn record(&mut self, value: Array4<T>, inputs: Vec<Var>, op: Box<dyn Operation<T>>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        self.nodes.push(Node {
            value,
            inputs,
            op: Some(op),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn push_stat_update(&mut self, u: StatUpdate<T>) {
        self.stat_updates.push(u);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let ls = self.shape(loss);
        if ls != Shape::scalar() {
            return Err(Error::NotScalar(ls));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(op) = &node.op {
                let inputs: Vec<&Array4<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let contributions = op.backward(&inputs, &node.value, &g);
                debug_assert_eq!(contributions.len(), node.inputs.len());
                for (input, contrib) in node.inputs.iter().zip(contributions) {
                    let Some(contrib) = contrib else { continue };
                    match &mut grads[input.0] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a = *a + *c),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. a recorded node; `None` if the node does
    /// not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients for every parameter in `store`, zero-filled for parameters
    /// the forward pass never touched.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Array4<T>> {
        let mut out: Vec<Array4<T>> = store.iter().map(|(_, e)| Array4::zeros(e.value.shape())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                out[id.index()].data_mut().copy_from_slice(g);
            }
        }
        out
    }
}
