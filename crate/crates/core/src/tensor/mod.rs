//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation that consumes a tensor with `requires_grad` records a
//! backward closure on its output. [`Tensor::backward`] walks the recorded
//! graph in reverse topological order and accumulates gradients into every
//! reachable tensor that requires them.

mod linalg;
mod nn;
mod ops;
mod shape;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use shape::broadcast_shape;

/// Computes the gradients of each parent from the output gradient and the
/// output values. Entries for parents that do not require grad may be `None`.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &[S]) -> Vec<Option<Vec<S>>>>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    backward: Option<BackwardFn<S>>,
}

/// Reference-counted handle to a node of the computation graph.
///
/// Cloning a `Tensor` clones the handle, not the data.
pub struct Tensor<S: Scalar> {
    node: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.node.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// Builds a leaf with `requires_grad = true`.
    pub fn param(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![S::zero(); n], false)
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![S::one(); n], false)
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![value; n], false)
    }

    pub fn scalar(value: S) -> Self {
        Self::leaf(vec![], vec![value], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Fresh leaf sharing no graph history; data is copied.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::leaf(self.shape().to_vec(), self.to_vec(), requires_grad)
    }

    /// Copy of this tensor's values, detached from the graph.
    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    /// Output of an operation. Parents and the closure are kept only when
    /// gradient recording is on and some parent requires grad.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: impl Fn(&[S], &[S]) -> Vec<Option<Vec<S>>> + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    /// Size of the last dimension (1 for a rank-0 tensor).
    pub fn last_dim(&self) -> usize {
        self.node.shape.last().copied().unwrap_or(1)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.node.data.borrow()
    }

    /// Mutable access to the values; intended for optimizers and
    /// initialization of leaves.
    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.node.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> S {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    fn key(&self) -> *const Node<S> {
        Rc::as_ptr(&self.node)
    }

    /// Accumulates d(self)/d(t) into every reachable tensor `t` with
    /// `requires_grad`. `self` must hold exactly one element.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<S>, Vec<S>> = HashMap::new();
        pending.insert(self.key(), vec![S::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            if let Some(bw) = &t.node.backward {
                let out = t.node.data.borrow();
                let parent_grads = bw(&g, &out);
                debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    match pending.get_mut(&p.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                        None => {
                            pending.insert(p.key(), pg);
                        }
                    }
                }
            }
            let mut slot = t.node.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through grad-requiring edges, parents
    /// before children.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<S>> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.requires_grad() && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_sum() {
        let x = Tensor::<f64>::param(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_square() {
        let x = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_twice_doubles() {
        let x = Tensor::<f64>::param(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let loss = x.tanh().mul(&x).unwrap().sum();
        loss.backward().unwrap();
        let once = x.grad().unwrap();
        loss.backward().unwrap();
        let twice = x.grad().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn intermediates_receive_grad() {
        let x = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(3.0);
        y.sum().backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.scale(2.0));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }
}
