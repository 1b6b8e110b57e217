//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Every [`Tensor`] is a reference-counted node. Operations on tensors that
//! track gradients record the operation and its inputs on the output node,
//! so the gradient graph is the set of nodes reachable from a loss. Node ids
//! are handed out in creation order, which means inputs always carry smaller
//! ids than the outputs built from them; [`Tensor::backward`] walks the
//! reachable nodes in decreasing id order and visits each exactly once.
//!
//! Gradients accumulate into leaf tensors across `backward` calls. Call
//! [`Tensor::zero_grad`] between optimizer steps.
//!
//! Tensors are `!Send`: a graph lives on one thread. Independent graphs may
//! run on different threads.

mod grad;
mod ops;

use std::cell::{Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use ops::{bce_loss, BCE_CLAMP};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Recorded operation that produced a tensor, with whatever the backward
/// pass needs from the forward pass.
pub(crate) enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    AddTrailing(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    NarrowLast {
        input: Tensor,
        start: usize,
    },
    Softmax(Tensor),
    LayerNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Tensor),
    Sigmoid(Tensor),
    PrependToken(Tensor, Tensor),
    SelectToken(Tensor, usize),
    Sum(Tensor),
    Mean(Tensor),
    Bce {
        prob: Tensor,
        targets: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddTrailing(..) => "add_trailing",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::NarrowLast { .. } => "narrow_last",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::PrependToken(..) => "prepend_token",
            Op::SelectToken(..) => "select_token",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Bce { .. } => "bce",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddTrailing(a, b) | Op::Mul(a, b) => {
                vec![a, b]
            }
            Op::PrependToken(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::SelectToken(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::NarrowLast { input, .. } => vec![input],
            Op::LayerNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Op::Bce { prob, .. } => vec![prob],
        }
    }
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// N-dimensional row-major array of `f64` participating in a gradient graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.0.op.tag())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Builds a constant tensor. Fails when the shape does not match the data
    /// length or has a zero extent.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Builds a leaf that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self::from_parts(
            data,
            shape.to_vec(),
            requires_grad,
            Op::Leaf,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(vec![0.0; n], shape.to_vec(), false, Op::Leaf)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![value], vec![1], false, Op::Leaf)
    }

    /// Wraps an operation result. The op is recorded only when some input
    /// tracks gradients; otherwise the result is a plain constant.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Self::from_parts(data, shape, requires_grad, op)
    }

    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Name of the operation that produced this tensor.
    pub fn op_tag(&self) -> &'static str {
        self.0.op.tag()
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    pub(crate) fn op(&self) -> &Op {
        &self.0.op
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    /// Mutable access to the values of a leaf. Used by optimizers between
    /// steps; mutating a tensor that is part of a live graph invalidates it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        debug_assert!(self.is_leaf(), "only leaf tensors may be mutated");
        self.0.data.borrow_mut()
    }

    /// Accumulated gradient, if `backward` has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values detached from any graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.to_vec(), self.0.shape.clone(), false, Op::Leaf)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar, accumulating `d self / d leaf` into
    /// every gradient-tracking leaf it depends on.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.reachable_nodes();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order {
            let Some(upstream) = pending.remove(&node.id()) else {
                continue;
            };
            if node.is_leaf() {
                node.accumulate_grad(&upstream);
                continue;
            }
            let contributions = grad::vjp(&node, &upstream);
            for (input, g) in node.op().inputs().into_iter().zip(contributions) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient-tracking nodes reachable from `self`, newest first.
    fn reachable_nodes(&self) -> Vec<Tensor> {
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        let mut out = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            for input in t.op().inputs() {
                stack.push(input.clone());
            }
            out.push(t);
        }
        out.sort_by_key(|t| std::cmp::Reverse(t.id()));
        out
    }
}
