//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed on its [`Var`] handles during
//! one forward pass. [`Tape::backward`] then walks the records in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes that were recorded before it.
//!
//! Tapes are single-use: build one per training step and drop it afterwards.
//!
//! ```
//! use hashattack::autodiff::Tape;
//! use hashattack::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let loss = w.mul(w).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum OpKind {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    AddRowBias(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Transpose(NodeId),
    Concat(NodeId, NodeId, usize),
    Sum(NodeId),
}

impl OpKind {
    fn parents(&self) -> [Option<NodeId>; 2] {
        use OpKind::*;
        match *self {
            Leaf | Constant => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRowBias(a, b) | Concat(a, b, _) => {
                [Some(a), Some(b)]
            }
            Scale(a, _) | Offset(a, _) | Tanh(a) | Sigmoid(a) | Relu(a) | Softplus(a) | Transpose(a)
            | Sum(a) => [Some(a), None],
        }
    }
}

struct Node {
    op: OpKind,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable input (a parameter or an attacked image).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(OpKind::Leaf, value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(OpKind::Constant, value, false)
    }

    fn push(&self, op: OpKind, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn record(&self, op: OpKind, value: Tensor) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().flatten().any(|p| nodes[p.0].requires_grad)
        };
        self.push(op, value, requires_grad)
    }

    /// Parent indices of node `id`, for structural checks.
    pub fn parents_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes.borrow()[id.0].op.parents().iter().flatten().copied().collect()
    }

    /// Reverse accumulation from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id.0].value;
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id.0] = Some(Tensor::ones(root_value.shape()));

        for i in (0..=root.id.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                for (parent, contribution) in local_gradients(&nodes, node, &g)? {
                    if !nodes[parent.0].requires_grad {
                        continue;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => tensor::add_assign(acc, &contribution),
                        slot => *slot = Some(contribution),
                    }
                }
            }
            grads[i] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn local_gradients(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
    use OpKind::*;
    let val = |id: NodeId| &nodes[id.0].value;
    let out = match node.op {
        Leaf | Constant => vec![],
        MatMul(a, b) => {
            let mut v = Vec::with_capacity(2);
            if nodes[a.0].requires_grad {
                v.push((a, tensor::matmul_nt(g, val(b))?));
            }
            if nodes[b.0].requires_grad {
                v.push((b, tensor::matmul_tn(val(a), g)?));
            }
            v
        }
        Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
        Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
        Mul(a, b) => vec![
            (a, g.zip_map(val(b), "mul", |g, y| g * y)?),
            (b, g.zip_map(val(a), "mul", |g, x| g * x)?),
        ],
        Scale(a, c) => vec![(a, g.map(|x| x * c))],
        Offset(a, _) => vec![(a, g.clone())],
        AddRowBias(a, b) => vec![(a, g.clone()), (b, tensor::column_sums(g)?)],
        Tanh(a) => vec![(a, g.zip_map(&node.value, "tanh", |g, y| g * (1.0 - y * y))?)],
        Sigmoid(a) => vec![(a, g.zip_map(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?)],
        Relu(a) => vec![(a, g.zip_map(val(a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?)],
        Softplus(a) => vec![(a, g.zip_map(val(a), "softplus", |g, x| g * tensor::sigmoid(x))?)],
        Transpose(a) => vec![(a, tensor::transpose(g)?)],
        Concat(a, b, axis) => {
            let (ga, gb) = tensor::split(g, val(a).shape(), val(b).shape(), axis);
            vec![(a, ga), (b, gb)]
        }
        Sum(a) => vec![(a, Tensor::full(val(a).shape(), g.data()[0]))],
    };
    Ok(out)
}

/// Result of a backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` is not
    /// reachable from the root.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    /// True when the backward pass reached `id`.
    pub fn reached(&self, id: NodeId) -> bool {
        self.grads[id.0].is_some()
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id.0].value.clone()
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id.0].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(self) -> f64 {
        self.tape.nodes.borrow()[self.id.0].value.data()[0]
    }

    fn same_tape(self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(self, op: OpKind, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = f(&self.tape.nodes.borrow()[self.id.0].value)?;
        Ok(self.tape.record(op, value))
    }

    fn binary(
        self,
        other: Var<'t>,
        op: OpKind,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id.0].value, &nodes[other.id.0].value)?
        };
        Ok(self.tape.record(op, value))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::MatMul(self.id, rhs.id), tensor::matmul)
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Add(self.id, rhs.id), |a, b| a.zip_map(b, "add", |x, y| x + y))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Sub(self.id, rhs.id), |a, b| a.zip_map(b, "sub", |x, y| x - y))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Mul(self.id, rhs.id), |a, b| a.zip_map(b, "mul", |x, y| x * y))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(OpKind::Scale(self.id, c), |a| Ok(a.map(|x| x * c)))
            .expect("scale is infallible")
    }

    /// Adds the scalar `c` to every entry.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(OpKind::Offset(self.id, c), |a| Ok(a.map(|x| x + c)))
            .expect("offset is infallible")
    }

    /// Adds a length-`d` bias to every row of an `n × d` matrix.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, OpKind::AddRowBias(self.id, bias.id), tensor::add_row_bias)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(OpKind::Tanh(self.id), |a| Ok(a.map(tensor::tanh)))
            .expect("tanh is infallible")
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(OpKind::Sigmoid(self.id), |a| Ok(a.map(tensor::sigmoid)))
            .expect("sigmoid is infallible")
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(OpKind::Relu(self.id), |a| Ok(a.map(|x| x.max(0.0))))
            .expect("relu is infallible")
    }

    /// `log(1 + e^x)`, elementwise.
    pub fn softplus(self) -> Var<'t> {
        self.unary(OpKind::Softplus(self.id), |a| Ok(a.map(tensor::softplus)))
            .expect("softplus is infallible")
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(OpKind::Transpose(self.id), tensor::transpose)
    }

    pub fn concat(self, rhs: Var<'t>, axis: usize) -> Result<Var<'t>> {
        self.binary(rhs, OpKind::Concat(self.id, rhs.id, axis), |a, b| tensor::concat(a, b, axis))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(self) -> Var<'t> {
        self.unary(OpKind::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
            .expect("sum is infallible")
    }

    /// Sum of squared entries.
    pub fn sum_squares(self) -> Var<'t> {
        self.mul(self).expect("a tensor always matches its own shape").sum()
    }
}
