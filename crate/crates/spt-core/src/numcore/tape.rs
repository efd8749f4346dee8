//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every differentiable operation appends one node holding the output value,
//! the parent node ids and a closure producing parent gradients from the
//! output gradient. Nodes are appended strictly after their inputs, so the
//! vector order is a topological order and the backward pass is a single
//! reverse sweep that visits each node exactly once.
//!
//! A tape and the `Var` handles pointing into it are confined to one thread;
//! the `Array` values they hold are `Arc`-backed and may be shared freely.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, SptError};
use crate::numcore::array::Array;
use crate::numcore::real::Real;

pub type BackwardFn<T> = Box<dyn Fn(&Array<T>) -> Vec<Array<T>>>;

struct Node<T: Real> {
    value: Array<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Recording context for one forward/backward cycle.
pub struct Tape<T: Real> {
    inner: Rc<RefCell<TapeInner<T>>>,
    strict: bool,
}

impl<T: Real> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
            strict: self.strict,
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
            strict: true,
        }
    }

    /// Disables the per-operation finiteness check.
    pub fn unchecked() -> Self {
        let mut t = Self::new();
        t.strict = false;
        t
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts an input node (parameter or data); gradients stop here.
    pub fn leaf(&self, value: Array<T>) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Array<T>,
        parents: Vec<usize>,
        backward: BackwardFn<T>,
    ) -> Result<Var<T>> {
        if self.strict && !value.all_finite() {
            return Err(SptError::NonFinite(op.to_string()));
        }
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        debug_assert!(parents.iter().all(|&p| p < id));
        inner.nodes.push(Node {
            value,
            parents,
            backward: Some(backward),
        });
        Ok(Var {
            tape: self.clone(),
            id,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Array<T> {
        self.inner.borrow().nodes[id].value.clone()
    }

    pub(crate) fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var<T: Real> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> Array<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

/// Per-node gradients produced by [`backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`, `None` when the loss does not
    /// depend on it (callers treat that as a zero gradient).
    pub fn get(&self, var: &Var<T>) -> Option<&Array<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

/// Single reverse sweep from a scalar loss node.
pub fn backward<T: Real>(loss: &Var<T>) -> Result<Gradients<T>> {
    let loss_value = loss.value();
    if !loss_value.is_scalar() {
        return Err(SptError::invalid(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss_value.shape()
        )));
    }
    let inner = loss.tape.inner.borrow();
    let mut grads: Vec<Option<Array<T>>> = vec![None; loss.id + 1];
    grads[loss.id] = Some(Array::scalar(T::ONE));

    for id in (0..=loss.id).rev() {
        let node = &inner.nodes[id];
        let Some(grad_out) = grads[id].as_ref() else {
            continue;
        };
        let Some(backward) = node.backward.as_ref() else {
            continue;
        };
        let parent_grads = backward(grad_out);
        debug_assert_eq!(parent_grads.len(), node.parents.len());
        for (&pid, pg) in node.parents.iter().zip(parent_grads.into_iter()) {
            match grads[pid].as_mut() {
                Some(acc) => acc.add_assign(&pg),
                None => grads[pid] = Some(pg),
            }
        }
    }
    Ok(Gradients { grads })
}
