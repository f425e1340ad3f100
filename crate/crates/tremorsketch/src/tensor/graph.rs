//! Reverse-mode automatic differentiation over a per-run computation graph.
//!
//! A [`Graph`] records one operation node per op call; nodes are appended in
//! creation order, so the vector itself is a topological order and `backward`
//! is a single reverse sweep that visits each node exactly once. [`Var`] is a
//! cheap handle (graph pointer + node id) used to chain operations.
//!
//! Graph construction and backward are single-threaded; tensors taken out of
//! the graph are plain values and may be shared freely.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{
    col2im, conv_backward, conv_forward_from_cols, im2col, maxpool_forward, ConvGeom,
};
use super::{
    reduce_broadcast_grad, s, BinaryOp, ReduceOp, Scalar, Tensor, TensorError, TensorResult,
};

/// Forward/inference switch for stochastic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

enum Op<T: Scalar> {
    Leaf,
    Binary {
        op: BinaryOp,
        lhs: usize,
        rhs: usize,
    },
    MatMul {
        lhs: usize,
        rhs: usize,
    },
    Reduce {
        op: ReduceOp,
        input: usize,
        axis: Option<usize>,
    },
    Relu {
        input: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    /// `ln(max(x, clamp))`; gradient is zero in the clamped region.
    LogClamped {
        input: usize,
        clamp: T,
    },
    Reshape {
        input: usize,
    },
    Transpose {
        input: usize,
    },
    Stack {
        inputs: Vec<usize>,
    },
    Conv2d {
        input: usize,
        weights: usize,
        bias: usize,
        geom: ConvGeom,
        /// im2col matrix saved at forward time for the backward pass.
        cols: Vec<T>,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    Dropout {
        input: usize,
        /// Per-element keep mask, already scaled by 1/(1-rate).
        mask: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

struct GraphInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    epoch: u64,
}

/// Computation graph for one forward/backward pass (reusable via [`Graph::clear`]).
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<GraphInner<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                epoch: 0,
            })),
        }
    }

    /// Drop all nodes. Variables created before the clear become detached.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.epoch += 1;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert an input tensor. Gradients are produced only for leaves created
    /// with `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, false, Op::Leaf)
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        let epoch = inner.epoch;
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            graph: Rc::clone(&self.inner),
            id,
            epoch,
        }
    }
}

/// Handle to a node in a [`Graph`].
pub struct Var<T: Scalar> {
    graph: Rc<RefCell<GraphInner<T>>>,
    id: usize,
    epoch: u64,
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            graph: Rc::clone(&self.graph),
            id: self.id,
            epoch: self.epoch,
        }
    }
}

impl<T: Scalar> Var<T> {
    fn check_attached(&self) -> TensorResult<()> {
        if self.graph.borrow().epoch != self.epoch {
            return Err(TensorError::DetachedGraph);
        }
        Ok(())
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.graph.borrow().nodes[self.id].value)
    }

    pub fn value(&self) -> Tensor<T> {
        self.with_value(|v| v.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn numel(&self) -> usize {
        self.with_value(|v| v.numel())
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.borrow().nodes[self.id].requires_grad
    }

    /// Gradient populated by the latest `backward`, if this node received one.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.graph.borrow().nodes[self.id].grad.clone()
    }

    fn same_graph(&self, other: &Var<T>) -> bool {
        Rc::ptr_eq(&self.graph, &other.graph) && self.epoch == other.epoch
    }

    fn push_unary(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let requires = self.requires_grad();
        let mut inner = self.graph.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires,
            op,
        });
        Var {
            graph: Rc::clone(&self.graph),
            id,
            epoch: self.epoch,
        }
    }

    fn binary_checked(&self, other: &Var<T>) -> TensorResult<()> {
        self.check_attached()?;
        if !self.same_graph(other) {
            return Err(TensorError::DetachedGraph);
        }
        Ok(())
    }

    /// Elementwise binary op with broadcasting.
    pub fn elementwise(&self, op: BinaryOp, other: &Var<T>) -> TensorResult<Var<T>> {
        self.binary_checked(other)?;
        let value = self.with_value(|a| other.with_value(|b| a.zip(op, b)))?;
        let requires = self.requires_grad() || other.requires_grad();
        let node = Op::Binary {
            op,
            lhs: self.id,
            rhs: other.id,
        };
        let mut inner = self.graph.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires,
            op: node,
        });
        Ok(Var {
            graph: Rc::clone(&self.graph),
            id,
            epoch: self.epoch,
        })
    }

    pub fn add(&self, other: &Var<T>) -> TensorResult<Var<T>> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Var<T>) -> TensorResult<Var<T>> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Var<T>) -> TensorResult<Var<T>> {
        self.elementwise(BinaryOp::Mul, other)
    }

    pub fn max_elem(&self, other: &Var<T>) -> TensorResult<Var<T>> {
        self.elementwise(BinaryOp::Max, other)
    }

    /// Multiply by a plain constant (a non-differentiable scalar leaf).
    pub fn scale(&self, factor: f64) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let constant = Graph {
            inner: Rc::clone(&self.graph),
        }
        .constant(Tensor::scalar(s::<T>(factor)));
        self.mul(&constant)
    }

    pub fn matmul(&self, other: &Var<T>) -> TensorResult<Var<T>> {
        self.binary_checked(other)?;
        let value = self.with_value(|a| other.with_value(|b| a.matmul(b)))?;
        let requires = self.requires_grad() || other.requires_grad();
        let node = Op::MatMul {
            lhs: self.id,
            rhs: other.id,
        };
        let mut inner = self.graph.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires,
            op: node,
        });
        Ok(Var {
            graph: Rc::clone(&self.graph),
            id,
            epoch: self.epoch,
        })
    }

    /// Reduce over all elements (`axis: None`) or along one axis.
    /// The reduced extent is removed; pass the result through [`Var::reshape`]
    /// if a kept dimension is needed.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let value = self.with_value(|v| v.reduce(op, axis, false))?;
        Ok(self.push_unary(value, Op::Reduce { op, input: self.id, axis }))
    }

    pub fn sum(&self, axis: Option<usize>) -> TensorResult<Var<T>> {
        self.reduce(ReduceOp::Sum, axis)
    }

    pub fn mean(&self, axis: Option<usize>) -> TensorResult<Var<T>> {
        self.reduce(ReduceOp::Mean, axis)
    }

    pub fn max_reduce(&self, axis: Option<usize>) -> TensorResult<Var<T>> {
        self.reduce(ReduceOp::Max, axis)
    }

    pub fn relu(&self) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let value = self.with_value(|v| v.map(|x| if x > T::zero() { x } else { T::zero() }));
        Ok(self.push_unary(value, Op::Relu { input: self.id }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let value = self.with_value(|v| softmax_forward(v, axis))?;
        Ok(self.push_unary(value, Op::Softmax { input: self.id, axis }))
    }

    /// `ln(max(x, clamp))` elementwise.
    pub fn log_clamped(&self, clamp: f64) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let c = s::<T>(clamp);
        let value = self.with_value(|v| v.map(|x| if x > c { x.ln() } else { c.ln() }));
        Ok(self.push_unary(value, Op::LogClamped { input: self.id, clamp: c }))
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let value = self.with_value(|v| v.reshape(shape))?;
        Ok(self.push_unary(value, Op::Reshape { input: self.id }))
    }

    pub fn transpose2(&self) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let value = self.with_value(|v| v.transpose2())?;
        Ok(self.push_unary(value, Op::Transpose { input: self.id }))
    }

    /// Cross-correlation of a `(C,H,W)` input with `(F,C,kH,kW)` weights plus
    /// an `(F)` bias, producing `(F,H',W')`.
    pub fn conv2d(
        &self,
        weights: &Var<T>,
        bias: &Var<T>,
        stride: usize,
        padding: usize,
    ) -> TensorResult<Var<T>> {
        self.binary_checked(weights)?;
        self.binary_checked(bias)?;
        let x_shape = self.shape();
        let w_shape = weights.shape();
        let b_shape = bias.shape();
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: x_shape.clone(),
            right: w_shape.clone(),
        };
        if x_shape.len() != 3 || w_shape.len() != 4 || b_shape != vec![w_shape[0]] {
            return Err(mismatch());
        }
        if w_shape[1] != x_shape[0] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(mismatch());
        }
        let (channels, height, width) = (x_shape[0], x_shape[1], x_shape[2]);
        let (filters, kernel_h, kernel_w) = (w_shape[0], w_shape[2], w_shape[3]);
        let out_h = conv_extent(height, kernel_h, stride, padding)?;
        let out_w = conv_extent(width, kernel_w, stride, padding)?;
        let geom = ConvGeom {
            channels,
            height,
            width,
            filters,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h,
            out_w,
        };

        let cols = self.with_value(|v| im2col(v.data(), &geom));
        let out = weights.with_value(|w| {
            bias.with_value(|b| conv_forward_from_cols(&cols, w.data(), b.data(), &geom))
        });
        let value = Tensor::new(vec![filters, out_h, out_w], out)?;
        let requires =
            self.requires_grad() || weights.requires_grad() || bias.requires_grad();
        let node = Op::Conv2d {
            input: self.id,
            weights: weights.id,
            bias: bias.id,
            geom,
            cols,
        };
        let mut inner = self.graph.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires,
            op: node,
        });
        Ok(Var {
            graph: Rc::clone(&self.graph),
            id,
            epoch: self.epoch,
        })
    }

    /// Square max pooling over a `(C,H,W)` input. Trailing rows/columns that
    /// do not fill a window are dropped.
    pub fn maxpool2d(&self, window: usize, stride: usize) -> TensorResult<Var<T>> {
        self.check_attached()?;
        let x_shape = self.shape();
        if x_shape.len() != 3 || window == 0 || stride == 0 || window > x_shape[1] || window > x_shape[2]
        {
            return Err(TensorError::ShapeMismatch {
                op: "maxpool2d",
                left: x_shape,
                right: vec![window, window],
            });
        }
        let (c, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
        let (out, argmax, oh, ow) =
            self.with_value(|v| maxpool_forward(v.data(), c, h, w, window, stride));
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push_unary(value, Op::MaxPool2d { input: self.id, argmax }))
    }

    /// Inverted dropout: in train mode each element is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1-rate)`; infer mode is identity.
    pub fn dropout(&self, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> TensorResult<Var<T>> {
        self.check_attached()?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate { rate });
        }
        if mode == Mode::Infer {
            return Ok(self.clone());
        }
        let keep_scale = s::<T>(1.0 / (1.0 - rate));
        let numel = self.numel();
        let mask: Vec<T> = (0..numel)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let value = self.with_value(|v| {
            let data: Vec<T> = v.data().iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
            Tensor::new(v.shape().to_vec(), data)
        })?;
        Ok(self.push_unary(value, Op::Dropout { input: self.id, mask }))
    }

    /// Populate gradients of every `requires_grad` leaf with d(self)/d(leaf).
    /// Leaves that do not participate in this root's subgraph get zero grads.
    pub fn backward(&self) -> TensorResult<()> {
        self.check_attached()?;
        let numel = self.numel();
        if numel != 1 {
            return Err(TensorError::NotScalar { numel });
        }
        let mut inner = self.graph.borrow_mut();
        inner.backward_from(self.id)
    }
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> TensorResult<usize> {
    let padded = input + 2 * padding;
    let err = TensorError::NonIntegralOutputSize {
        input,
        kernel,
        stride,
        padding,
    };
    if kernel == 0 || padded < kernel {
        return Err(err);
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(err);
    }
    Ok((padded - kernel) / stride + 1)
}

fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> TensorResult<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: x.rank(),
        });
    }
    if !x.is_finite() {
        return Err(TensorError::NonFiniteInput { op: "softmax" });
    }
    let shape = x.shape().to_vec();
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let lane = |e: usize| (o * extent + e) * inner + i;
            let mut max = x.data()[lane(0)];
            for e in 1..extent {
                let v = x.data()[lane(e)];
                if v > max {
                    max = v;
                }
            }
            let mut denom = T::zero();
            for e in 0..extent {
                let v = (x.data()[lane(e)] - max).exp();
                data[lane(e)] = v;
                denom += v;
            }
            for e in 0..extent {
                data[lane(e)] = data[lane(e)] / denom;
            }
        }
    }
    Tensor::new(shape, data)
}

impl<T: Scalar> GraphInner<T> {
    fn backward_from(&mut self, root: usize) -> TensorResult<()> {
        for node in &mut self.nodes {
            node.grad = None;
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::filled(
            self.nodes[root].value.shape(),
            T::one(),
        ));

        for id in (0..=root).rev() {
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if self.nodes[id].requires_grad {
                self.propagate(id, &grad, &mut grads);
                self.nodes[id].grad = Some(grad);
            }
        }

        // Leaves that never received a contribution still get explicit zeros.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, grad: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Binary { op, lhs, rhs } => {
                let lhs_val = &self.nodes[*lhs].value;
                let rhs_val = &self.nodes[*rhs].value;
                match op {
                    BinaryOp::Add => {
                        self.accumulate(*lhs, reduce_broadcast_grad(grad, lhs_val.shape()), grads);
                        self.accumulate(*rhs, reduce_broadcast_grad(grad, rhs_val.shape()), grads);
                    }
                    BinaryOp::Sub => {
                        self.accumulate(*lhs, reduce_broadcast_grad(grad, lhs_val.shape()), grads);
                        let neg = grad.map(|g| -g);
                        self.accumulate(*rhs, reduce_broadcast_grad(&neg, rhs_val.shape()), grads);
                    }
                    BinaryOp::Mul => {
                        if self.nodes[*lhs].requires_grad {
                            let g = broadcast_mul(grad, rhs_val);
                            self.accumulate(*lhs, reduce_broadcast_grad(&g, lhs_val.shape()), grads);
                        }
                        if self.nodes[*rhs].requires_grad {
                            let g = broadcast_mul(grad, lhs_val);
                            self.accumulate(*rhs, reduce_broadcast_grad(&g, rhs_val.shape()), grads);
                        }
                    }
                    BinaryOp::Max => {
                        // Gradient follows the winning operand; ties go left.
                        let out_shape = grad.shape().to_vec();
                        let l_idx = super::BroadcastIndexer::new(lhs_val.shape(), &out_shape);
                        let r_idx = super::BroadcastIndexer::new(rhs_val.shape(), &out_shape);
                        let mut gl = Tensor::zeros(&out_shape);
                        let mut gr = Tensor::zeros(&out_shape);
                        for (i, &g) in grad.data().iter().enumerate() {
                            let a = lhs_val.data()[l_idx.source_index(i)];
                            let b = rhs_val.data()[r_idx.source_index(i)];
                            if b > a {
                                gr.data_mut()[i] = g;
                            } else {
                                gl.data_mut()[i] = g;
                            }
                        }
                        self.accumulate(*lhs, reduce_broadcast_grad(&gl, lhs_val.shape()), grads);
                        self.accumulate(*rhs, reduce_broadcast_grad(&gr, rhs_val.shape()), grads);
                    }
                }
            }
            Op::MatMul { lhs, rhs } => {
                let a = &self.nodes[*lhs].value;
                let b = &self.nodes[*rhs].value;
                if self.nodes[*lhs].requires_grad {
                    let gb = grad.matmul(&b.transpose2().expect("rank-2")).expect("shapes agree");
                    self.accumulate(*lhs, gb, grads);
                }
                if self.nodes[*rhs].requires_grad {
                    let ga = a.transpose2().expect("rank-2").matmul(grad).expect("shapes agree");
                    self.accumulate(*rhs, ga, grads);
                }
            }
            Op::Reduce { op, input, axis } => {
                let in_val = &self.nodes[*input].value;
                let in_shape = in_val.shape().to_vec();
                let g = match (op, axis) {
                    (ReduceOp::Sum, None) => Tensor::filled(&in_shape, grad.item()),
                    (ReduceOp::Mean, None) => {
                        Tensor::filled(&in_shape, grad.item() / s(in_val.numel() as f64))
                    }
                    (ReduceOp::Max, None) => {
                        let mut best = 0;
                        for (i, &v) in in_val.data().iter().enumerate() {
                            if v > in_val.data()[best] {
                                best = i;
                            }
                        }
                        let mut g = Tensor::zeros(&in_shape);
                        g.data_mut()[best] = grad.item();
                        g
                    }
                    (op, Some(axis)) => {
                        let outer: usize = in_shape[..*axis].iter().product();
                        let extent = in_shape[*axis];
                        let inner: usize = in_shape[*axis + 1..].iter().product();
                        let mut g = Tensor::zeros(&in_shape);
                        for o in 0..outer {
                            for i in 0..inner {
                                let gv = grad.data()[o * inner + i];
                                match op {
                                    ReduceOp::Sum => {
                                        for e in 0..extent {
                                            g.data_mut()[(o * extent + e) * inner + i] = gv;
                                        }
                                    }
                                    ReduceOp::Mean => {
                                        let gv = gv / s(extent as f64);
                                        for e in 0..extent {
                                            g.data_mut()[(o * extent + e) * inner + i] = gv;
                                        }
                                    }
                                    ReduceOp::Max => {
                                        let mut best = 0;
                                        let mut best_v = in_val.data()[o * extent * inner + i];
                                        for e in 1..extent {
                                            let v = in_val.data()[(o * extent + e) * inner + i];
                                            if v > best_v {
                                                best_v = v;
                                                best = e;
                                            }
                                        }
                                        g.data_mut()[(o * extent + best) * inner + i] = gv;
                                    }
                                }
                            }
                        }
                        g
                    }
                };
                self.accumulate(*input, g, grads);
            }
            Op::Relu { input } => {
                let in_val = &self.nodes[*input].value;
                let data: Vec<T> = grad
                    .data()
                    .iter()
                    .zip(in_val.data().iter())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(
                    *input,
                    Tensor::new(in_val.shape().to_vec(), data).expect("same shape"),
                    grads,
                );
            }
            Op::Softmax { input, axis } => {
                let y = &self.nodes[id].value;
                let shape = y.shape().to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let extent = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut g = Tensor::zeros(&shape);
                for o in 0..outer {
                    for i in 0..inner {
                        let lane = |e: usize| (o * extent + e) * inner + i;
                        let mut dot = T::zero();
                        for e in 0..extent {
                            dot += grad.data()[lane(e)] * y.data()[lane(e)];
                        }
                        for e in 0..extent {
                            let idx = lane(e);
                            g.data_mut()[idx] = y.data()[idx] * (grad.data()[idx] - dot);
                        }
                    }
                }
                self.accumulate(*input, g, grads);
            }
            Op::LogClamped { input, clamp } => {
                let in_val = &self.nodes[*input].value;
                let data: Vec<T> = grad
                    .data()
                    .iter()
                    .zip(in_val.data().iter())
                    .map(|(&g, &x)| if x > *clamp { g / x } else { T::zero() })
                    .collect();
                self.accumulate(
                    *input,
                    Tensor::new(in_val.shape().to_vec(), data).expect("same shape"),
                    grads,
                );
            }
            Op::Reshape { input } => {
                let in_shape = self.nodes[*input].value.shape().to_vec();
                let g = grad.reshape(&in_shape).expect("numel preserved");
                self.accumulate(*input, g, grads);
            }
            Op::Transpose { input } => {
                let g = grad.transpose2().expect("rank-2");
                self.accumulate(*input, g, grads);
            }
            Op::Stack { inputs } => {
                let piece = grad.numel() / inputs.len();
                for (b, &input) in inputs.iter().enumerate() {
                    let in_shape = self.nodes[input].value.shape().to_vec();
                    let data = grad.data()[b * piece..(b + 1) * piece].to_vec();
                    let g = Tensor::new(in_shape, data).expect("slice matches input shape");
                    self.accumulate(input, g, grads);
                }
            }
            Op::Conv2d {
                input,
                weights,
                bias,
                geom,
                cols,
            } => {
                let w_val = &self.nodes[*weights].value;
                let (w_grad, b_grad, cols_grad) =
                    conv_backward(grad.data(), cols, w_val.data(), geom);
                if self.nodes[*weights].requires_grad {
                    self.accumulate(
                        *weights,
                        Tensor::new(w_val.shape().to_vec(), w_grad).expect("shape"),
                        grads,
                    );
                }
                if self.nodes[*bias].requires_grad {
                    self.accumulate(*bias, Tensor::from_vec(b_grad), grads);
                }
                if self.nodes[*input].requires_grad {
                    let x_grad = col2im(&cols_grad, geom);
                    let in_shape = self.nodes[*input].value.shape().to_vec();
                    self.accumulate(
                        *input,
                        Tensor::new(in_shape, x_grad).expect("shape"),
                        grads,
                    );
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let in_shape = self.nodes[*input].value.shape().to_vec();
                let mut g = Tensor::zeros(&in_shape);
                for (o, &src) in argmax.iter().enumerate() {
                    g.data_mut()[src] += grad.data()[o];
                }
                self.accumulate(*input, g, grads);
            }
            Op::Dropout { input, mask } => {
                let data: Vec<T> = grad
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(&g, &m)| g * m)
                    .collect();
                let in_shape = self.nodes[*input].value.shape().to_vec();
                self.accumulate(*input, Tensor::new(in_shape, data).expect("shape"), grads);
            }
        }
    }

    fn accumulate(&self, target: usize, contribution: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += *c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

fn broadcast_mul<T: Scalar>(grad: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    grad.zip(BinaryOp::Mul, other)
        .expect("operands already validated at forward time")
}

/// Stack same-shape variables along a new leading axis.
pub fn stack<T: Scalar>(vars: &[Var<T>]) -> TensorResult<Var<T>> {
    let first = vars.first().ok_or(TensorError::ShapeMismatch {
        op: "stack",
        left: vec![],
        right: vec![],
    })?;
    first.check_attached()?;
    let item_shape = first.shape();
    let mut data = Vec::with_capacity(vars.len() * first.numel());
    for v in vars {
        if !first.same_graph(v) {
            return Err(TensorError::DetachedGraph);
        }
        if v.shape() != item_shape {
            return Err(TensorError::ShapeMismatch {
                op: "stack",
                left: item_shape,
                right: v.shape(),
            });
        }
        v.with_value(|t| data.extend_from_slice(t.data()));
    }
    let mut shape = vec![vars.len()];
    shape.extend_from_slice(&item_shape);
    let value = Tensor::new(shape, data)?;
    let requires = vars.iter().any(|v| v.requires_grad());
    let node = Op::Stack {
        inputs: vars.iter().map(|v| v.id).collect(),
    };
    let mut inner = first.graph.borrow_mut();
    let id = inner.nodes.len();
    inner.nodes.push(Node {
        value,
        grad: None,
        requires_grad: requires,
        op: node,
    });
    Ok(Var {
        graph: Rc::clone(&first.graph),
        id,
        epoch: first.epoch,
    })
}
