//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] wraps an immutable result tensor together with the recipe that
//! produced it: references to its parent `Var`s and a [`BackwardRule`] that
//! knows how to push a gradient one step backwards. The structure is a DAG
//! built on the fly as ops execute (define-by-run).
//!
//! Two properties the rest of the crate leans on:
//!
//! * **Inference is free of bookkeeping.** An op whose parents all have
//!   `needs_grad == false` produces a constant node with no parent edges, so
//!   intermediate buffers are dropped as soon as the last handle goes away.
//! * **Backward order is structural.** The traversal is a deterministic DFS
//!   over parent lists; gradient accumulation order therefore depends only on
//!   the graph shape, never on allocation addresses or hash iteration, which
//!   keeps training bit-reproducible.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::tensor::{Scalar, Tensor};

/// One backward step of a recorded op: given ∂L/∂output, accumulate
/// ∂L/∂parent into each parent that wants a gradient.
pub(crate) trait BackwardRule<E: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &Tensor<E>, parents: &[Var<E>]);
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    grad: RefCell<Option<Tensor<E>>>,
    parents: Vec<Var<E>>,
    back: Option<Box<dyn BackwardRule<E>>>,
    needs_grad: bool,
}

/// Handle to a node in the autodiff graph. Clones share the node.
#[derive(Clone)]
pub struct Var<E: Scalar>(Rc<Node<E>>);

impl<E: Scalar> Var<E> {
    /// Leaf that participates in differentiation (a parameter or a
    /// grad-checked input).
    pub fn param(value: Tensor<E>) -> Self {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            back: None,
            needs_grad: true,
        }))
    }

    /// Leaf that is treated as a constant.
    pub fn constant(value: Tensor<E>) -> Self {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            back: None,
            needs_grad: false,
        }))
    }

    /// Same value, no history: gradients stop here.
    pub fn detach(&self) -> Self {
        Var::constant(self.value().clone())
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    /// Gradient accumulated by the most recent [`Var::backward`] call that
    /// reached this node, if any.
    pub fn grad(&self) -> Option<Tensor<E>> {
        self.0.grad.borrow().clone()
    }

    /// Adds `delta` into this node's gradient slot. No-op for nodes that do
    /// not participate in differentiation.
    pub(crate) fn accumulate_grad(&self, delta: &Tensor<E>) {
        if !self.0.needs_grad {
            return;
        }
        assert_eq!(
            delta.shape(),
            self.0.value.shape(),
            "gradient shape {:?} does not match value shape {:?}",
            delta.shape(),
            self.0.value.shape()
        );
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                let out = acc.make_mut();
                for (o, d) in out.iter_mut().zip(delta.data()) {
                    *o = *o + *d;
                }
            }
            None => *slot = Some(delta.clone()),
        }
    }

    /// Runs the backward pass from this (scalar) node.
    ///
    /// Gradients of every node reachable from here are reset first, so calling
    /// this twice on the same graph yields identical results rather than
    /// doubled ones.
    pub fn backward(&self) {
        assert!(
            self.value().is_scalar(),
            "backward() requires a scalar root, got shape {:?}",
            self.shape()
        );

        // Post-order DFS; `order` ends up with parents before consumers, so
        // the reversed walk visits every consumer before the node itself.
        let mut order: Vec<Var<E>> = Vec::new();
        let mut visited: HashSet<*const ()> = HashSet::new();
        // Stack entries: (node, next parent index to expand).
        let mut stack: Vec<(Var<E>, usize)> = Vec::new();
        if visited.insert(Rc::as_ptr(&self.0) as *const ()) {
            stack.push((self.clone(), 0));
        }
        while let Some((node, idx)) = stack.pop() {
            if idx == 0 {
                *node.0.grad.borrow_mut() = None;
            }
            if idx < node.0.parents.len() {
                let parent = node.0.parents[idx].clone();
                stack.push((node, idx + 1));
                if visited.insert(Rc::as_ptr(&parent.0) as *const ()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        self.accumulate_grad_root();
        for node in order.iter().rev() {
            let Some(back) = node.0.back.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow().clone();
            // Every collected node lies on a path to the root, so its grad has
            // been populated by the time we get here.
            let grad = grad.unwrap_or_else(|| {
                panic!("node '{}' reached without gradient", back.name())
            });
            back.backward(&grad, &node.0.parents);
        }
    }

    fn accumulate_grad_root(&self) {
        *self.0.grad.borrow_mut() = Some(Tensor::full(self.shape().to_vec(), E::one()));
    }
}

/// Builds an interior node. If no parent needs a gradient the history is
/// dropped entirely and the result behaves like a constant leaf.
pub(crate) fn make_node<E: Scalar>(
    value: Tensor<E>,
    parents: Vec<Var<E>>,
    back: Box<dyn BackwardRule<E>>,
) -> Var<E> {
    if parents.iter().any(|p| p.needs_grad()) {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents,
            back: Some(back),
            needs_grad: true,
        }))
    } else {
        Var::constant(value)
    }
}
