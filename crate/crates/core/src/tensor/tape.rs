//! Reverse-mode differentiation tape.
//!
//! Every primitive op appends one node holding its output tensor, the handles
//! of its inputs, and a backward function. Node ids grow in execution order,
//! so walking ids in descending order visits the graph in reverse topological
//! order; each node is visited exactly once and gradients from fan-out
//! accumulate additively.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Handle of a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Identity of a trainable parameter, assigned by the parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Per-parameter gradients produced by a backward pass.
pub struct Gradients<E: Float> {
    map: HashMap<ParamId, Tensor<E>>,
}

impl<E: Float> Gradients<E> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<E>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Context handed to a backward function.
pub struct BwdCtx<'a, E: Float> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a Tensor<E>,
    /// The node's own forward output.
    pub out: &'a Tensor<E>,
    /// Forward values of the node's inputs, in parent order.
    pub inputs: Vec<&'a Tensor<E>>,
}

type BackwardFn<E> = Box<dyn Fn(&BwdCtx<'_, E>) -> Vec<Tensor<E>> + Send + Sync>;

struct Node<E: Float> {
    value: Tensor<E>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<E>>,
    param: Option<ParamId>,
}

/// Execution record for one forward pass.
pub struct Tape<E: Float> {
    nodes: Vec<Node<E>>,
    recording: bool,
}

impl<E: Float> Tape<E> {
    /// Tape that records backward functions for training.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// Tape that keeps forward values only; `backward` finds no gradients.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Leaf holding a constant (inputs, targets, captured state).
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push_node(value, Vec::new(), None, None)
    }

    /// Leaf bound to a trainable parameter; backward routes its gradient
    /// into the returned [`Gradients`] under `id`.
    pub fn leaf_param(&mut self, value: Tensor<E>, id: ParamId) -> Var {
        let param = if self.recording { Some(id) } else { None };
        self.push_node(value, Vec::new(), None, param)
    }

    /// Append an op result. `backward` maps the output gradient to one
    /// gradient per parent, in order.
    pub(crate) fn push(
        &mut self,
        value: Tensor<E>,
        parents: Vec<Var>,
        backward: BackwardFn<E>,
    ) -> Var {
        if self.recording {
            self.push_node(value, parents, Some(backward), None)
        } else {
            self.push_node(value, Vec::new(), None, None)
        }
    }

    fn push_node(
        &mut self,
        value: Tensor<E>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<E>>,
        param: Option<ParamId>,
    ) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node { value, parents, backward, param });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar loss. Returns the gradient of the loss
    /// w.r.t. every parameter leaf reachable from it; parameters bound more
    /// than once (weight sharing across rounds) accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {}",
                self.value(loss).shape()
            )));
        }

        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        let mut out = HashMap::new();
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];

            if let Some(id) = node.param {
                accumulate(out.entry(id).or_insert_with(|| Tensor::zeros(grad.shape().clone())), &grad);
            }

            if let Some(backward) = &node.backward {
                let ctx = BwdCtx {
                    grad: &grad,
                    out: &node.value,
                    inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, g) in node.parents.iter().zip(parent_grads) {
                    debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape(), "gradient shape mismatch at node {}", p.0);
                    match &mut grads[p.0] {
                        Some(acc) => accumulate(acc, &g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { map: out })
    }
}

impl<E: Float> Default for Tape<E> {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate<E: Float>(acc: &mut Tensor<E>, g: &Tensor<E>) {
    let dst = acc.data_mut();
    for (d, &s) in dst.iter_mut().zip(g.data()) {
        *d += s;
    }
}
