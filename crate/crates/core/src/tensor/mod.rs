//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! Every forward op that touches a gradient-tracked input records a
//! backward closure on the result node. `backward()` on a scalar loss
//! topologically sorts the reachable graph and replays it in reverse,
//! accumulating gradients into every `requires_grad` leaf.
//!
//! Execution is single-threaded per graph and reduction order is fixed,
//! so identical seeds and inputs give bit-identical outputs. Shape
//! violations in the low-level ops panic with messages naming the
//! offending shapes; the contract-level errors the rest of the crate can
//! recover from (non-scalar backward, double backward, non-finite
//! gradient checks) are returned as `Result`.

mod check;
mod ops;

pub use check::{grad_check, grad_check_multi};

use crate::error::{Error, Result};
use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

type BackwardFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    /// True when this node is connected to at least one requires_grad leaf.
    tracked: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
    backward_done: Cell<bool>,
}

/// Dense n-dimensional f64 array, row-major, with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        tracked: bool,
        parents: Vec<Tensor>,
        backward_fn: Option<BackwardFn>,
    ) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                tracked,
                grad: RefCell::new(None),
                parents,
                backward_fn,
                backward_done: Cell::new(false),
            }),
        }
    }

    /// Constant (untracked) tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Tensor::from_parts(shape.to_vec(), data, false, false, Vec::new(), None)
    }

    /// Gradient-tracked leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Self {
        Tensor::from_parts(shape.to_vec(), data, true, true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::new(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value])
    }

    /// Result node of an op. Tracking propagates from the parents; the
    /// backward closure is dropped when no parent is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
    ) -> Self {
        let tracked = parents.iter().any(|p| p.inner.tracked);
        let backward_fn = if tracked { Some(backward_fn) } else { None };
        Tensor::from_parts(shape, data, false, tracked, parents, backward_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn tracked(&self) -> bool {
        self.inner.tracked
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw buffer (optimizer updates of leaves).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on non-scalar tensor of shape {:?}",
            self.shape()
        );
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Constant copy sharing no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::new(&self.inner.shape, self.to_vec())
    }

    pub fn max_value(&self) -> f64 {
        self.inner
            .data
            .borrow()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, d) in buf.iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode gradient pass from a scalar loss.
    ///
    /// Populates `grad` on every tracked node reachable from `self`.
    /// Running it a second time on the same node is an error: the graph's
    /// intermediate gradients are already consumed.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.inner.backward_done.get() {
            return Err(Error::Contract(
                "backward() already ran on this loss; rebuild the graph before differentiating again"
                    .into(),
            ));
        }
        self.inner.backward_done.set(true);
        if !self.inner.tracked {
            return Ok(());
        }

        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let grad = node.inner.grad.borrow().clone();
            if let (Some(grad), Some(back)) = (grad, node.inner.backward_fn.as_ref()) {
                back(&grad);
            }
        }
        Ok(())
    }
}

/// Topological order over the tracked subgraph, iterative post-order DFS.
/// Visits each node exactly once; reversing the order replays ops backward.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // (tensor, child cursor)
    let mut stack: Vec<(Tensor, usize)> = Vec::new();
    if root.inner.tracked {
        visited.insert(root.inner.id);
        stack.push((root.clone(), 0));
    }
    while let Some((node, cursor)) = stack.pop() {
        if cursor < node.inner.parents.len() {
            let parent = node.inner.parents[cursor].clone();
            stack.push((node, cursor + 1));
            if parent.inner.tracked && visited.insert(parent.inner.id) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}
