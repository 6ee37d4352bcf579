//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! Tensors are immutable once created; gradients accumulate into leaf
//! tensors through an interior `Mutex`, so values can move freely between
//! threads while one backward pass at a time owns the tape.

mod conv;
pub mod ops;

pub use conv::{conv2d, deconv2d, maxpool2d, ConvSpec};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Backward context handed to an op's gradient rule.
pub(crate) struct BackArgs<'a> {
    /// Cotangent of the op output (same length as the output data).
    pub cotangent: &'a [f64],
    /// Forward result data of the op.
    pub output: &'a [f64],
    /// The op's inputs, in registration order.
    pub parents: &'a [Tensor],
}

type BackwardFn = Box<dyn Fn(&BackArgs) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// N-dimensional array of f64 scalars in row-major order.
///
/// Cloning is cheap (shared storage). Image-like values use NCHW layout.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("taped", &self.inner.node.is_some())
            .finish()
    }
}

impl Tensor {
    /// Constant tensor from explicit shape and data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor::make(shape.to_vec(), data, false, None))
    }

    /// Learnable leaf: participates in `backward` and accumulates a gradient.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        Ok(Tensor::make(
            t.inner.shape.clone(),
            t.inner.data.clone(),
            true,
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::make(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::make(vec![1], vec![value], false, None)
    }

    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Tensor {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    /// Build an op result wired into the tape. `backward` receives the output
    /// cotangent and returns one optional cotangent per parent, in order.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let taped = parents.iter().any(Tensor::is_taped);
        let node = taped.then_some(Node { parents, backward });
        Tensor::make(shape, data, false, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True if this tensor feeds the tape (leaf param or derived from one).
    pub fn is_taped(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Same data viewed as a constant (drops tape history and grad flag).
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// Same data under a new shape with identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(Error::DataLength {
                expected,
                got: self.numel(),
            });
        }
        let shape = shape.to_vec();
        Ok(Tensor::from_op(
            shape,
            self.inner.data.clone(),
            vec![self.clone()],
            Box::new(|args| vec![Some(args.cotangent.to_vec())]),
        ))
    }

    /// Stack equal-shaped constant tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| {
            Error::Data("stack: empty part list".into())
        })?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            debug_assert!(!p.is_taped(), "stack is for constant inputs only");
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        Tensor::new(&shape, data)
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut guard = self.inner.grad.lock().unwrap();
        match guard.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *guard = Some(contribution.to_vec()),
        }
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.inner) as usize
    }
}

/// Reverse-mode sweep from a scalar root. Every `requires_grad` leaf reachable
/// from `root` receives (accumulates) d root / d leaf.
pub fn backward(root: &Tensor) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::NotScalar {
            numel: root.numel(),
        });
    }
    if !root.is_taped() {
        return Ok(());
    }

    // Iterative DFS postorder; child (parent-tensor) order fixes the
    // accumulation order, so sweeps are deterministic.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashMap<usize, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.key(), ());
    while let Some((t, child)) = stack.pop() {
        let parents = t.inner.node.as_ref().map(|n| n.parents.as_slice());
        let next = parents
            .into_iter()
            .flatten()
            .skip(child)
            .position(|p| p.is_taped() && !visited.contains_key(&p.key()))
            .map(|offset| child + offset);
        match next {
            Some(idx) => {
                let parent = t.inner.node.as_ref().unwrap().parents[idx].clone();
                visited.insert(parent.key(), ());
                stack.push((t, idx + 1));
                stack.push((parent, 0));
            }
            None => order.push(t),
        }
    }

    let mut cotangents: HashMap<usize, Vec<f64>> = HashMap::new();
    cotangents.insert(root.key(), vec![1.0]);

    for t in order.iter().rev() {
        // Reverse topological order: every consumer of `t` has already been
        // processed, so its cotangent is final and can be moved out.
        let Some(cot) = cotangents.remove(&t.key()) else {
            continue;
        };
        if t.inner.requires_grad {
            t.accumulate_grad(&cot);
        }
        let Some(node) = t.inner.node.as_ref() else {
            continue;
        };
        let args = BackArgs {
            cotangent: &cot,
            output: &t.inner.data,
            parents: &node.parents,
        };
        let contributions = (node.backward)(&args);
        debug_assert_eq!(contributions.len(), node.parents.len());
        for (parent, contribution) in node.parents.iter().zip(contributions) {
            let Some(c) = contribution else { continue };
            if !parent.is_taped() {
                continue;
            }
            debug_assert_eq!(c.len(), parent.numel());
            match cotangents.get_mut(&parent.key()) {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&c) {
                        *a += v;
                    }
                }
                None => {
                    cotangents.insert(parent.key(), c);
                }
            }
        }
    }
    Ok(())
}
