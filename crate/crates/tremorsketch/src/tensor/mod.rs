//! Dense n-dimensional arrays and the reverse-mode autodiff graph built on them.
//!
//! `Tensor<T>` is a plain value: a shape plus row-major data. All model math
//! runs through [`graph::Var`] handles, which record operations on a
//! [`graph::Graph`] so `backward` can fill in gradients. The element type is
//! generic so training runs at `f32` while gradient checks run at `f64`.

use std::fmt;
use std::iter::Sum;

mod conv;
pub mod gradcheck;
pub mod graph;

pub use graph::{stack, Graph, Mode, Var};

/// Element type accepted by tensors: `f32` or `f64` in practice.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Sum + fmt::Debug + fmt::Display + Default + 'static
{
}

impl<T> Scalar for T where
    T: num_traits::Float + num_traits::NumAssign + Sum + fmt::Debug + fmt::Display + Default + 'static
{
}

/// Cast an `f64` literal into the working element type.
pub(crate) fn s<T: Scalar>(x: f64) -> T {
    T::from(x).expect("f64 must cast into the scalar type")
}

/// Errors raised by tensor and graph operations.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Operands cannot be combined under the broadcasting rules.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Shape does not match the provided data length.
    DataLength { expected: usize, got: usize },
    /// Reduction axis is not a valid dimension index.
    AxisOutOfRange { axis: usize, rank: usize },
    /// `backward` was called on a tensor with more than one element.
    NotScalar { numel: usize },
    /// The variable's graph has been cleared since the variable was created.
    DetachedGraph,
    /// Convolution geometry does not produce integral output extents.
    NonIntegralOutputSize {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Dropout rate outside `[0, 1)`.
    InvalidRate { rate: f64 },
    /// An input that must be finite contained NaN or infinity.
    NonFiniteInput { op: &'static str },
    /// Attention weights do not sum to one.
    UnnormalizedWeights { sum: f64 },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shapes {left:?} and {right:?} are incompatible")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            TensorError::NotScalar { numel } => {
                write!(f, "backward requires a scalar root, got {numel} elements")
            }
            TensorError::DetachedGraph => write!(f, "variable refers to a cleared graph"),
            TensorError::NonIntegralOutputSize {
                input,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "window {kernel} with stride {stride} and padding {padding} does not tile extent {input}"
            ),
            TensorError::InvalidRate { rate } => {
                write!(f, "dropout rate {rate} must lie in [0, 1)")
            }
            TensorError::NonFiniteInput { op } => write!(f, "{op}: input contains NaN or Inf"),
            TensorError::UnnormalizedWeights { sum } => {
                write!(f, "attention weights sum to {sum}, expected 1")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub type TensorResult<T> = Result<T, TensorError>;

/// Elementwise binary operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Elementwise maximum; gradient routes to the larger operand, ties to the left.
    Max,
}

/// Reduction operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Maximum; gradient routes to the first maximal element (lowest flat index).
    Max,
}

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Rank-1 tensor from a plain vector.
    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The sole element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() requires exactly one element");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor<T>> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Elementwise combination with broadcasting. Accepted shapes: identical,
    /// either side a single element, or equal rank with each extent matching
    /// or equal to one. Anything else is a `ShapeMismatch`.
    pub fn zip(&self, op: BinaryOp, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let out_shape = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: "elementwise",
                left: self.shape.clone(),
                right: other.shape.clone(),
            }
        })?;
        let numel: usize = out_shape.iter().product();
        let lhs_idx = BroadcastIndexer::new(&self.shape, &out_shape);
        let rhs_idx = BroadcastIndexer::new(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let a = self.data[lhs_idx.source_index(i)];
            let b = other.data[rhs_idx.source_index(i)];
            data.push(apply_binary(op, a, b));
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> TensorResult<Tensor<T>> {
        let err = || TensorError::ShapeMismatch {
            op: "matmul",
            left: self.shape.clone(),
            right: other.shape.clone(),
        };
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(err());
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                let rhs_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    /// Reduce over all elements (axis `None`) or one axis. With `keepdims`
    /// the reduced extent stays as 1, otherwise it is removed.
    pub fn reduce(
        &self,
        op: ReduceOp,
        axis: Option<usize>,
        keepdims: bool,
    ) -> TensorResult<Tensor<T>> {
        match axis {
            None => {
                let value = reduce_slice(op, &self.data);
                let shape = if keepdims {
                    vec![1; self.rank()]
                } else {
                    vec![]
                };
                let numel: usize = shape.iter().product();
                debug_assert_eq!(numel, 1);
                Ok(Tensor {
                    shape,
                    data: vec![value],
                })
            }
            Some(axis) => {
                if axis >= self.rank() {
                    return Err(TensorError::AxisOutOfRange {
                        axis,
                        rank: self.rank(),
                    });
                }
                let outer: usize = self.shape[..axis].iter().product();
                let extent = self.shape[axis];
                let inner: usize = self.shape[axis + 1..].iter().product();
                let mut data = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = self.data[o * extent * inner + i];
                        for e in 1..extent {
                            let v = self.data[(o * extent + e) * inner + i];
                            acc = match op {
                                ReduceOp::Sum | ReduceOp::Mean => acc + v,
                                ReduceOp::Max => {
                                    if v > acc {
                                        v
                                    } else {
                                        acc
                                    }
                                }
                            };
                        }
                        if op == ReduceOp::Mean {
                            acc /= s(extent as f64);
                        }
                        data.push(acc);
                    }
                }
                let mut shape = self.shape.clone();
                if keepdims {
                    shape[axis] = 1;
                } else {
                    shape.remove(axis);
                }
                Ok(Tensor { shape, data })
            }
        }
    }

    /// Rank-2 transpose.
    pub fn transpose2(&self) -> TensorResult<Tensor<T>> {
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    /// Lossless widening/narrowing between scalar types, for gradient checks.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from(v).expect("scalar cast"))
                .collect(),
        }
    }
}

pub(crate) fn apply_binary<T: Scalar>(op: BinaryOp, a: T, b: T) -> T {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Max => {
            if b > a {
                b
            } else {
                a
            }
        }
    }
}

fn reduce_slice<T: Scalar>(op: ReduceOp, data: &[T]) -> T {
    match op {
        ReduceOp::Sum => {
            let mut acc = T::zero();
            for &v in data {
                acc += v;
            }
            acc
        }
        ReduceOp::Mean => {
            let mut acc = T::zero();
            for &v in data {
                acc += v;
            }
            acc / s(data.len() as f64)
        }
        ReduceOp::Max => {
            let mut best = data[0];
            for &v in &data[1..] {
                if v > best {
                    best = v;
                }
            }
            best
        }
    }
}

/// Broadcast shape of two operands, or `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let a_numel: usize = a.iter().product();
    let b_numel: usize = b.iter().product();
    if a_numel == 1 {
        return Some(b.to_vec());
    }
    if b_numel == 1 {
        return Some(a.to_vec());
    }
    if a.len() != b.len() {
        return None;
    }
    let mut out = Vec::with_capacity(a.len());
    for (&da, &db) in a.iter().zip(b.iter()) {
        if da == db {
            out.push(da);
        } else if da == 1 {
            out.push(db);
        } else if db == 1 {
            out.push(da);
        } else {
            return None;
        }
    }
    Some(out)
}

/// Maps flat indices in a broadcast output back to flat indices in a source
/// operand whose extents are 1 (or absent) along broadcast dimensions.
pub(crate) struct BroadcastIndexer {
    out_strides: Vec<usize>,
    src_strides: Vec<usize>,
    trivial: bool,
}

impl BroadcastIndexer {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        if src == out {
            return BroadcastIndexer {
                out_strides: vec![],
                src_strides: vec![],
                trivial: true,
            };
        }
        let src_numel: usize = src.iter().product();
        if src_numel == 1 {
            return BroadcastIndexer {
                out_strides: vec![1; out.len().max(1)],
                src_strides: vec![0; out.len().max(1)],
                trivial: false,
            };
        }
        debug_assert_eq!(src.len(), out.len());
        let mut out_strides = vec![1; out.len()];
        for d in (0..out.len().saturating_sub(1)).rev() {
            out_strides[d] = out_strides[d + 1] * out[d + 1];
        }
        let mut src_strides = vec![1; src.len()];
        for d in (0..src.len().saturating_sub(1)).rev() {
            src_strides[d] = src_strides[d + 1] * src[d + 1];
        }
        for d in 0..src.len() {
            if src[d] == 1 && out[d] != 1 {
                src_strides[d] = 0;
            }
        }
        BroadcastIndexer {
            out_strides,
            src_strides,
            trivial: false,
        }
    }

    pub(crate) fn source_index(&self, mut flat: usize) -> usize {
        if self.trivial {
            return flat;
        }
        let mut src = 0;
        for (&os, &ss) in self.out_strides.iter().zip(self.src_strides.iter()) {
            if os == 0 {
                continue;
            }
            let coord = flat / os;
            flat %= os.max(1);
            src += coord * ss;
        }
        src
    }
}

/// Sum a gradient of `out_shape` back down to `src_shape` along broadcast axes.
pub(crate) fn reduce_broadcast_grad<T: Scalar>(
    grad: &Tensor<T>,
    src_shape: &[usize],
) -> Tensor<T> {
    if grad.shape() == src_shape {
        return grad.clone();
    }
    let src_numel: usize = src_shape.iter().product();
    let mut out = vec![T::zero(); src_numel];
    let idx = BroadcastIndexer::new(src_shape, grad.shape());
    for (i, &g) in grad.data().iter().enumerate() {
        out[idx.source_index(i)] += g;
    }
    Tensor {
        shape: src_shape.to_vec(),
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_identity() {
        let out = t(&[2], &[1.0, 2.0]).zip(BinaryOp::Add, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn mul_hand_arithmetic() {
        let out = t(&[2], &[1.0, 2.0]).zip(BinaryOp::Mul, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 8.0]);
    }

    #[test]
    fn broadcast_scalar_matches_loop_oracle() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..12).map(|_| next()).collect();
        let c = next();
        let out = t(&[3, 4], &a).zip(BinaryOp::Mul, &Tensor::scalar(c)).unwrap();
        for (i, &v) in a.iter().enumerate() {
            assert_eq!(out.data()[i], v * c);
        }
    }

    #[test]
    fn broadcast_channel_dim() {
        // (1,2,2) against (3,2,2): the leading 1 stretches across channels.
        let gate = t(&[1, 2, 2], &[0.1, 0.2, 0.3, 0.4]);
        let feat = Tensor::filled(&[3, 2, 2], 2.0);
        let out = gate.zip(BinaryOp::Mul, &feat).unwrap();
        assert_eq!(out.shape(), &[3, 2, 2]);
        assert_eq!(&out.data()[..4], &[0.2, 0.4, 0.6, 0.8]);
        assert_eq!(&out.data()[8..], &[0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let err = t(&[2], &[1.0, 2.0]).zip(BinaryOp::Add, &t(&[3], &[0.0; 3])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v = t(&[2, 1], &[5.0, 7.0]);
        assert_eq!(eye.matmul(&v).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..20).map(|_| next()).collect();
        let b: Vec<f64> = (0..12).map(|_| next()).collect();
        let got = t(&[5, 4], &a).matmul(&t(&[4, 3], &b)).unwrap();
        // Naive triple loop, written independently of the implementation.
        for i in 0..5 {
            for j in 0..3 {
                let mut want = 0.0;
                for p in 0..4 {
                    want += a[i * 4 + p] * b[p * 3 + j];
                }
                assert!((got.data()[i * 3 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_inner_extent_mismatch() {
        let err = t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 2], &[0.0; 4])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn reduce_sum_and_mean() {
        let v = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(v.reduce(ReduceOp::Sum, None, false).unwrap().item(), 6.0);
        let c = Tensor::filled(&[4], 7.5);
        assert_eq!(c.reduce(ReduceOp::Mean, None, false).unwrap().item(), 7.5);
    }

    #[test]
    fn reduce_axis_matches_loop_oracle() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let data: Vec<f64> = (0..12).map(|_| next()).collect();
        let m = t(&[3, 4], &data);
        let rows = m.reduce(ReduceOp::Sum, Some(1), false).unwrap();
        for i in 0..3 {
            let want: f64 = data[i * 4..(i + 1) * 4].iter().sum();
            assert!((rows.data()[i] - want).abs() < 1e-12);
        }
        let cols = m.reduce(ReduceOp::Sum, Some(0), false).unwrap();
        for j in 0..4 {
            let want: f64 = (0..3).map(|i| data[i * 4 + j]).sum();
            assert!((cols.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let err = t(&[3], &[0.0; 3]).reduce(ReduceOp::Sum, Some(1), false).unwrap_err();
        assert_eq!(err, TensorError::AxisOutOfRange { axis: 1, rank: 1 });
    }

    #[test]
    fn reduce_keepdims_keeps_rank() {
        let m = t(&[2, 3], &[1.0; 6]);
        let kept = m.reduce(ReduceOp::Sum, Some(1), true).unwrap();
        assert_eq!(kept.shape(), &[2, 1]);
    }

    #[test]
    fn data_length_checked() {
        let err = Tensor::new(vec![2, 2], vec![1.0f32; 3]).unwrap_err();
        assert_eq!(err, TensorError::DataLength { expected: 4, got: 3 });
    }

    #[test]
    fn transpose_roundtrip() {
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tt = m.transpose2().unwrap().transpose2().unwrap();
        assert_eq!(m, tt);
    }

    #[test]
    fn grad_reduction_over_broadcast_axes() {
        let grad = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let reduced = reduce_broadcast_grad(&grad, &[1, 2]);
        assert_eq!(reduced.shape(), &[1, 2]);
        assert_eq!(reduced.data(), &[9.0, 12.0]);
        let to_scalar = reduce_broadcast_grad(&grad, &[]);
        assert_eq!(to_scalar.item(), 21.0);
    }
}
