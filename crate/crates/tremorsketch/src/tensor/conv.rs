//! im2col-based convolution and pooling kernels.
//!
//! These are pure functions over row-major buffers; the graph ops in
//! [`super::graph`] wrap them with shape checking and gradient bookkeeping.

use super::Scalar;

/// Geometry of one conv2d application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold the padded input into a `(patch_len, out_positions)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let positions = g.out_positions();
    let mut cols = vec![T::zero(); g.patch_len() * positions];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let out_row = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        out_row[oy * g.out_w + ox] = plane[iy as usize * g.width + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a `(patch_len, out_positions)` gradient matrix back onto the input,
/// accumulating overlapping patches.
pub(crate) fn col2im<T: Scalar>(cols_grad: &[T], g: &ConvGeom) -> Vec<T> {
    let positions = g.out_positions();
    let mut x_grad = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane_off = c * g.height * g.width;
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src_row = &cols_grad[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        x_grad[plane_off + iy as usize * g.width + ix as usize] +=
                            src_row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
    x_grad
}

/// `out = weights(F, R) x cols(R, P) + bias`, flattened row-major.
pub(crate) fn conv_forward_from_cols<T: Scalar>(
    cols: &[T],
    weights: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> Vec<T> {
    let positions = g.out_positions();
    let patch = g.patch_len();
    let mut out = vec![T::zero(); g.filters * positions];
    for f in 0..g.filters {
        let w_row = &weights[f * patch..(f + 1) * patch];
        let out_row = &mut out[f * positions..(f + 1) * positions];
        out_row.iter_mut().for_each(|v| *v = bias[f]);
        for (r, &w) in w_row.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let col_row = &cols[r * positions..(r + 1) * positions];
            for (o, &cv) in out_row.iter_mut().zip(col_row.iter()) {
                *o += w * cv;
            }
        }
    }
    out
}

/// Gradients of the conv output w.r.t. weights, bias, and the cols matrix.
pub(crate) fn conv_backward<T: Scalar>(
    out_grad: &[T],
    cols: &[T],
    weights: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let positions = g.out_positions();
    let patch = g.patch_len();

    let mut w_grad = vec![T::zero(); g.filters * patch];
    let mut b_grad = vec![T::zero(); g.filters];
    let mut cols_grad = vec![T::zero(); patch * positions];

    for f in 0..g.filters {
        let g_row = &out_grad[f * positions..(f + 1) * positions];
        let mut b_acc = T::zero();
        for &gv in g_row {
            b_acc += gv;
        }
        b_grad[f] = b_acc;

        let w_row = &weights[f * patch..(f + 1) * patch];
        let wg_row = &mut w_grad[f * patch..(f + 1) * patch];
        for r in 0..patch {
            let col_row = &cols[r * positions..(r + 1) * positions];
            let mut acc = T::zero();
            for (&gv, &cv) in g_row.iter().zip(col_row.iter()) {
                acc += gv * cv;
            }
            wg_row[r] = acc;

            let w = w_row[r];
            if w != T::zero() {
                let cg_row = &mut cols_grad[r * positions..(r + 1) * positions];
                for (cg, &gv) in cg_row.iter_mut().zip(g_row.iter()) {
                    *cg += w * gv;
                }
            }
        }
    }
    (w_grad, b_grad, cols_grad)
}

/// Max pooling forward; returns pooled values plus the flat source index of
/// the chosen maximum for each output cell (first maximum in row-major order).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let out_h = (height - window) / stride + 1;
    let out_w = (width - window) / stride + 1;
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane_off = c * height * width;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best_idx = plane_off + (oy * stride) * width + ox * stride;
                let mut best = x[best_idx];
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = plane_off + (oy * stride + ky) * width + (ox * stride + kx);
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax, out_h, out_w)
}
