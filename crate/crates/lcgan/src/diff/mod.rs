//! Reverse-mode differentiable tensors.
//!
//! A [`Tensor`] is a cheaply clonable handle to an immutable n-dimensional
//! array plus the operation that produced it. Forward operations build a DAG;
//! [`Tensor::backward`] walks it in reverse topological order and accumulates
//! gradients into the reachable leaves that track them. Leaf gradients
//! accumulate across repeated backward calls until cleared; interior node
//! gradients are scratch storage for the pass and are consumed by it.
//!
//! Determinism: every kernel visits elements in a fixed row-major order and
//! every reduction is a fixed-order sequential (or fixed-tree) sum, so a
//! forward/backward pass is bit-reproducible for identical inputs.

mod composite;
pub mod gradcheck;
pub(crate) mod linalg;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct BackCtx<'a, T: Scalar> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a [T],
    /// This node's forward output values.
    pub out: &'a [T],
    /// The node's inputs, in the order they were passed to the op.
    pub parents: &'a [Tensor<T>],
}

type BackFn<T> = Box<dyn Fn(&BackCtx<'_, T>)>;

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    /// Participates in backward: set for trackable leaves and for any op
    /// output with at least one tracked parent.
    needs_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackFn<T>>,
}

/// Handle to an immutable tensor in a computation graph.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.needs_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, needs_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            needs_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Constant input: tracks no gradient.
    pub fn constant(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Trainable leaf: gradient accumulates here during backward.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::leaf(data, shape.to_vec(), true)
    }

    /// Leaf with an explicit `requires_grad` flag; `param`/`constant` are the
    /// common cases.
    pub fn leaf_with_grad(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Self {
        Self::leaf(data, shape.to_vec(), requires_grad)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::constant(vec![T::one(); shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::constant(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(vec![value], &[1])
    }

    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        back: impl Fn(&BackCtx<'_, T>) + 'static,
    ) -> Self {
        let needs = parents.iter().any(|p| p.0.needs_grad);
        if !needs {
            // Dead branch for gradients: prune parents so backward never
            // walks into it and frozen subgraphs cost nothing.
            return Self::leaf(data, shape, false);
        }
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "op output length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            needs_grad: true,
            grad: RefCell::new(None),
            parents,
            backward: Some(Box::new(back)),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn requires_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same data, detached from the graph: a fresh constant leaf.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.0.data.clone(), &self.0.shape)
    }

    /// Element at NCHW coordinates (for 4-d tensors).
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape();
        assert_eq!(s.len(), 4);
        self.0.data[((n * s[1] + c) * s[2] + h) * s[3] + w]
    }

    pub(crate) fn with_grad_mut(&self, f: impl FnOnce(&mut [T])) {
        if !self.0.needs_grad {
            return;
        }
        let mut g = self.0.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![T::zero(); self.numel()]);
        }
        f(g.as_mut().expect("grad just initialized"));
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        self.with_grad_mut(|g| {
            for (gv, &cv) in g.iter_mut().zip(contrib) {
                *gv += cv;
            }
        });
    }

    /// Propagates gradients from a scalar loss into every tracked leaf.
    /// Repeated calls accumulate leaf gradients; use `clear_grad` between
    /// optimization steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        self.accumulate_grad(&[T::one()]);
        if self.0.backward.is_none() {
            return Ok(());
        }

        // Post-order DFS over tracked parents; reversed it is a topological
        // order with every consumer processed before its producer.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Stack entries: (node, next child index to visit).
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, child_idx)) = stack.pop() {
            let tracked_child = node
                .0
                .parents
                .iter()
                .enumerate()
                .skip(child_idx)
                .find(|(_, p)| p.0.needs_grad && !visited.contains(&p.0.id));
            match tracked_child {
                Some((i, child)) => {
                    let child = child.clone();
                    visited.insert(child.0.id);
                    stack.push((node, i + 1));
                    stack.push((child, 0));
                }
                None => order.push(node),
            }
        }

        for node in order.iter().rev() {
            let Some(back) = node.0.backward.as_ref() else {
                continue;
            };
            // Interior gradients are scratch for this pass: take them out so
            // a later backward through the same graph starts clean. Only
            // leaves keep accumulating.
            let Some(grad) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let ctx = BackCtx {
                grad: &grad,
                out: &node.0.data,
                parents: &node.0.parents,
            };
            back(&ctx);
        }
        Ok(())
    }
}

/// Formats a shape-mismatch report for panics and errors.
pub(crate) fn dim_report(context: &str, parts: &[(&str, &[usize])]) -> String {
    let dims: Vec<String> = parts
        .iter()
        .map(|(name, shape)| format!("{name}={shape:?}"))
        .collect();
    format!("{context}: {}", dims.join(", "))
}
