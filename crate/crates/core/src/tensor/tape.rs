use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::ops::Op;
use super::{Tensor, TensorError};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) numel: usize,
}

/// Records differentiable operations in execution order.
///
/// Node indices only ever grow, so every operation's inputs precede it and a
/// reverse sweep visits each node once. A tape is meant to live for a single
/// training step.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A differentiable input (typically a parameter).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let value = Arc::new(value);
        let node = self.push(Op::Leaf, value.numel());
        Var {
            value,
            node: Some(node),
            tape: Some(self),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, op: Op, numel: usize) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, numel });
        nodes.len() - 1
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        self.id == other.id
    }

    /// Reverse sweep from a scalar `loss`. Gradients of values used several
    /// times are summed.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients, TensorError> {
        let root = match (loss.tape, loss.node) {
            (Some(t), Some(node)) if t.same(self) => node,
            _ => return Err(TensorError::DetachedTape),
        };
        if loss.value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: loss.value.shape().to_vec(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let mut sink = GradSink {
                grads: &mut grads,
                nodes: &nodes,
            };
            nodes[id].op.backward(&g, &mut sink);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }
}

pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f32>>],
    nodes: &'a [Node],
}

impl GradSink<'_> {
    /// Gradient accumulator for `node`, zero-filled on first use.
    pub(crate) fn slot(&mut self, node: usize) -> &mut [f32] {
        let numel = self.nodes[node].numel;
        self.grads[node].get_or_insert_with(|| vec![0.0; numel])
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    tape_id: usize,
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. `None` when `var` does not
    /// belong to the tape; a zero tensor when the loss does not depend on it.
    pub fn get(&self, var: &Var<'_>) -> Option<Tensor> {
        let node = var.node?;
        if var.tape?.id != self.tape_id {
            return None;
        }
        let shape = var.value.shape().to_vec();
        Some(match self.grads.get(node)? {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        })
    }
}

/// A tensor value, optionally tracked on a tape.
#[derive(Clone)]
pub struct Var<'t> {
    pub(crate) value: Arc<Tensor>,
    pub(crate) node: Option<usize>,
    pub(crate) tape: Option<&'t Tape>,
}

impl<'t> Var<'t> {
    /// An untracked value; operations on constants alone record nothing.
    pub fn constant(value: Tensor) -> Self {
        Self {
            value: Arc::new(value),
            node: None,
            tape: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_tensor(self) -> Tensor {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.value)
            .field("node", &self.node)
            .finish()
    }
}
