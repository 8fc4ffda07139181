//! Dense rank-4 tensors with define-by-run reverse-mode differentiation.
//!
//! Every tensor is an immutable node in a graph. Operations record their
//! inputs only when at least one input requires a gradient and gradient
//! recording is enabled (see [`no_grad`]). Calling [`Tensor::backward`] on a
//! scalar walks the graph in reverse topological order and stores gradients
//! on the leaves that asked for them.

mod conv;
mod ops;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use conv::{conv2d, ConvSpec};
pub use ops::{
    add, concat_channels, frobenius_sq, mean, narrow_channels, relu, scale, select_batch, sqrt,
    sub, sum,
};

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: {dim} is {found}, expected {expected}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("data length {found} does not match shape {shape:?}")]
    DataLength { shape: Shape, found: usize },
    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Shape),
    #[error("backward requires a scalar, got shape {0:?}")]
    NonScalar(Shape),
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn check_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    found: usize,
) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            dim,
            expected,
            found,
        })
    }
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the upstream gradient of the output and returns one
/// entry per input, in input order. `None` means "no contribution".
pub trait Function {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        grad_output: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        spec: ConvSpec,
    },
    Relu(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Scale(Tensor, f64),
    Concat(Tensor, Tensor),
    Narrow {
        input: Tensor,
        start: usize,
    },
    Select {
        input: Tensor,
        index: usize,
    },
    FrobeniusSq(Tensor),
    Mean(Tensor),
    Sum(Tensor),
    Sqrt(Tensor),
    Custom {
        inputs: Vec<Tensor>,
        function: Box<dyn Function>,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::Relu(a)
            | Op::Scale(a, _)
            | Op::FrobeniusSq(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::Sqrt(a) => vec![a],
            Op::Narrow { input, .. } | Op::Select { input, .. } => vec![input],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::Custom { inputs, .. } => inputs.iter().collect(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat_channels",
            Op::Narrow { .. } => "narrow_channels",
            Op::Select { .. } => "select_batch",
            Op::FrobeniusSq(_) => "frobenius_sq",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Sqrt(_) => "sqrt",
            Op::Custom { function, .. } => function.name(),
        }
    }
}

pub(crate) struct Node {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// Cheaply clonable handle to a graph node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

struct NoGradGuard;

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _guard = NoGradGuard;
    f()
}

fn recording() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

impl Tensor {
    fn leaf(shape: Shape, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        if data.len() != numel(&shape) {
            return Err(TensorError::DataLength {
                shape,
                found: data.len(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: Op::Leaf,
        })))
    }

    /// A constant: never receives a gradient.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// A trainable leaf.
    pub fn param(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, vec![0.0; numel(&shape)])
    }

    pub fn full(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; numel(&shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new([1, 1, 1, 1], vec![value]).expect("scalar shape is valid")
    }

    /// Builds an op result. Drops the graph edge when nothing upstream
    /// needs a gradient or recording is disabled.
    pub(crate) fn from_op(shape: Shape, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape), "{}", op.name());
        let requires_grad = recording() && op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor(Rc::new(Node {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    /// Wraps the result of a user-defined [`Function`].
    pub fn from_function(
        shape: Shape,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        function: Box<dyn Function>,
    ) -> Result<Tensor> {
        if data.len() != numel(&shape) {
            return Err(TensorError::DataLength {
                shape,
                found: data.len(),
            });
        }
        Ok(Self::from_op(shape, data, Op::Custom { inputs, function }))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Value at `(n, c, y, x)`.
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.0.shape;
        self.0.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// A constant copy cut loose from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.0.data.clone()).expect("shape already validated")
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode pass from this scalar. Leaf gradients are overwritten.
    pub fn backward(&self) -> Result<()> {
        self.run_backward(false)
    }

    /// Like [`backward`](Self::backward) but adds into existing leaf gradients.
    pub fn backward_accumulate(&self) -> Result<()> {
        self.run_backward(true)
    }

    fn run_backward(&self, accumulate: bool) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalar(self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            if node.is_leaf() {
                let mut cell = node.0.grad.borrow_mut();
                match (cell.as_mut(), accumulate) {
                    (Some(existing), true) => {
                        existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v)
                    }
                    _ => *cell = Some(g),
                }
                continue;
            }
            for (parent, pg) in node.backward_op(&g) {
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.key()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, v)| *a += v),
                    None => {
                        grads.insert(parent.key(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring grad, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.op.parents() {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn backward_op(&self, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
        match &self.0.op {
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => conv::conv2d_backward(input, weight, bias, spec, g),
            Op::Custom { inputs, function } => function
                .backward(inputs, self, g)
                .into_iter()
                .zip(inputs)
                .filter_map(|(pg, t)| pg.map(|pg| (t.clone(), pg)))
                .collect(),
            op => ops::backward(op, self, g),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.0.op.name())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(matches!(
            Tensor::new([1, 1, 2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            Tensor::new([1, 0, 2, 2], vec![]),
            Err(TensorError::ZeroDim(_))
        ));
    }

    #[test]
    fn backward_on_non_scalar_is_an_error() {
        let x = Tensor::param([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = scale(&x, 2.0);
        assert_eq!(y.backward(), Err(TensorError::NonScalar([1, 1, 1, 2])));
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let k = 12;
        let x = Tensor::param([1, 3, 2, 2], (0..k).map(|i| i as f64).collect()).unwrap();
        mean(&x).backward().unwrap();
        let g = x.grad().unwrap();
        assert!(g.iter().all(|&v| (v - 1.0 / k as f64).abs() < 1e-15));
    }

    #[test]
    fn independent_passes_do_not_mix_unless_accumulated() {
        let x = Tensor::param([1, 1, 1, 2], vec![1.0, -2.0]).unwrap();
        frobenius_sq(&x).backward().unwrap();
        frobenius_sq(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0]);
        frobenius_sq(&x).backward_accumulate().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, -8.0]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // loss = sum(x + x) => grad 2
        let x = Tensor::param([1, 1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = add(&x, &x).unwrap();
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn no_grad_drops_the_graph() {
        let x = Tensor::param([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| scale(&x, 3.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        let z = scale(&x, 3.0);
        assert!(z.requires_grad());
    }

    #[test]
    fn constants_do_not_receive_grads() {
        let x = Tensor::param([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::full([1, 1, 1, 2], 5.0).unwrap();
        sum(&sub(&x, &c).unwrap()).backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn backward_on_constant_scalar_is_noop() {
        let c = Tensor::scalar(0.0);
        assert!(c.backward().is_ok());
        assert!(c.grad().is_none());
    }
}
