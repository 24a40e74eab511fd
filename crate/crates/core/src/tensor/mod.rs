//! A small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! Every [`Tensor`] produced by an op whose inputs require gradients records
//! its parents and a backward rule. Node ids grow monotonically, so the id
//! order *is* the tape: calling [`Tensor::backward`] visits every reachable
//! node in decreasing id order and accumulates gradients in that fixed order.
//! Two runs that build the same graph therefore produce bit-identical
//! gradients.
//!
//! Leaves created with `requires_grad = true` (model parameters) keep their
//! gradient buffer between backward calls until [`Tensor::zero_grad`].

mod conv;
mod deform;
pub(crate) mod gemm;
mod linalg;
mod norm;
mod pointwise;
mod shape;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{Conv2dOptions, ConvTranspose2dOptions};
pub use linalg::softmax_call_count;

/// Backward rule: given the parents, the output node and the incoming
/// gradient, return one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &Tensor, &[f64]) -> Vec<Option<Vec<f64>>>>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with graph recording disabled. Results are plain constants.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(requires_grad),
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    /// Creates a constant leaf. Fails if `data.len()` disagrees with `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "tensor",
                "data",
                format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Creates a trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Self::new(data, shape)?;
        t.0.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::from_parts(shape.to_vec(), vec![0.0; numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::from_parts(vec![], vec![value], false, Vec::new(), None)
    }

    /// Records the result of an op. When recording is off or no parent needs
    /// a gradient the parents are dropped and the result is a constant.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[Tensor], &Tensor, &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::from_parts(shape, data, true, parents, Some(Box::new(backward)))
        } else {
            Self::from_parts(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Mutable access to a leaf's values, used by optimizers and
    /// initializers. Interior nodes are immutable.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        assert!(self.is_leaf(), "data_mut on a non-leaf tensor");
        self.0.data.borrow_mut()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Toggles gradient tracking on a leaf (freezing / unfreezing).
    pub fn set_requires_grad(&self, on: bool) {
        assert!(self.is_leaf(), "set_requires_grad on a non-leaf tensor");
        self.0.requires_grad.set(on);
        if !on {
            self.0.grad.borrow_mut().take();
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// Constant copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.shape().to_vec(), self.to_vec(), false, Vec::new(), None)
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                op,
                "shape",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &'static str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::dim(
                op,
                "rank",
                format!("expected rank {rank}, got shape {:?}", self.shape()),
            ));
        }
        Ok(())
    }

    /// Shape as `[B, C, H, W]`.
    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        self.expect_rank(4, op)?;
        let s = self.shape();
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients of reachable leaves that require them are added to their
    /// buffers. Interior gradients are dropped once consumed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Collect the reachable subgraph keyed by id; id order is tape order.
        let mut nodes: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !nodes.contains_key(&p.id()) {
                    stack.push(p.clone());
                }
            }
            nodes.insert(t.id(), t);
        }

        let mut grads: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        grads.insert(self.id(), vec![1.0]);

        for (id, node) in nodes.iter().rev() {
            let Some(g) = grads.remove(id) else { continue };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(rule) => {
                    let parent_grads = rule(&node.0.parents, node, &g);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient slot helper for backward rules: `Some(f())` only if the parent
/// participates in differentiation.
pub(crate) fn grad_if(parent: &Tensor, f: impl FnOnce() -> Vec<f64>) -> Option<Vec<f64>> {
    parent.requires_grad().then(f)
}
