//! Forward and backward kernels for the individual layer kinds.
//!
//! Activations are planar `[channels, height, width]` buffers. Convolutions
//! lower to GEMM through an im2col buffer which the forward pass hands back so
//! the backward pass can reuse it.

use crate::tensor::{gemm, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.in_h + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 2 * self.padding + 1 - self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds `input` into a `[C*k*k, out_h*out_w]` matrix with zero padding.
pub(crate) fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    let mut col = vec![0.0; g.patch_len() * npix];
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * npix..(row + 1) * npix];
                for y in 0..oh {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * g.in_w..(sy as usize + 1) * g.in_w];
                    let dst_row = &mut dst[y * ow..(y + 1) * ow];
                    for (x, d) in dst_row.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - pad;
                        if sx >= 0 && sx < g.in_w as isize {
                            *d = src_row[sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(g: &ConvGeom, col: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let npix = oh * ow;
    let mut out = vec![0.0; g.in_channels * g.in_h * g.in_w];
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * npix..(row + 1) * npix];
                for y in 0..oh {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= g.in_h as isize {
                        continue;
                    }
                    for x in 0..ow {
                        let sx = x as isize + kx as isize - pad;
                        if sx >= 0 && sx < g.in_w as isize {
                            plane[sy as usize * g.in_w + sx as usize] += src[y * ow + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-correlation. Returns the output and the im2col buffer.
pub(crate) fn conv_forward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let col = im2col(g, input);
    let npix = g.out_h() * g.out_w();
    let mut out = Vec::with_capacity(g.out_channels * npix);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, npix));
    }
    gemm(
        g.out_channels,
        g.patch_len(),
        npix,
        1.0,
        weight,
        Layout::RowMajor,
        &col,
        Layout::RowMajor,
        1.0,
        &mut out,
    );
    (out, col)
}

pub(crate) struct ConvGrads {
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub input: Option<Vec<f64>>,
}

pub(crate) fn conv_backward(
    g: &ConvGeom,
    col: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    want_params: bool,
    want_input: bool,
) -> ConvGrads {
    let npix = g.out_h() * g.out_w();
    let k = g.patch_len();
    let (weight_grad, bias_grad) = if want_params {
        let mut dw = vec![0.0; g.out_channels * k];
        // dW = dOut [F, P] * col^T [P, K]
        gemm(
            g.out_channels,
            npix,
            k,
            1.0,
            grad_out,
            Layout::RowMajor,
            col,
            Layout::Transposed,
            0.0,
            &mut dw,
        );
        let db = grad_out.chunks_exact(npix).map(|r| r.iter().sum()).collect();
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    let input_grad = want_input.then(|| {
        // dCol = W^T [K, F] * dOut [F, P]
        let mut dcol = vec![0.0; k * npix];
        gemm(
            k,
            g.out_channels,
            npix,
            1.0,
            weight,
            Layout::Transposed,
            grad_out,
            Layout::RowMajor,
            0.0,
            &mut dcol,
        );
        col2im(g, &dcol)
    });
    ConvGrads {
        weight: weight_grad,
        bias: bias_grad,
        input: input_grad,
    }
}

/// 2x2 max-pool with stride 2. Returns the pooled map and, per output cell,
/// the flat input index of the first (row-major) maximum.
pub(crate) fn maxpool_forward(
    channels: usize,
    h: usize,
    w: usize,
    input: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let candidates = [
                    base + (2 * y) * w + 2 * x,
                    base + (2 * y) * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool_backward(input_len: usize, argmax: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad[i] += g;
    }
    grad
}

pub(crate) fn dense_forward(inputs: usize, weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight
        .chunks_exact(inputs)
        .zip(bias)
        .map(|(row, &b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Returns `(weight_grad, input_grad)`; the bias gradient equals `grad_out`.
pub(crate) fn dense_backward(
    inputs: usize,
    weight: &[f64],
    x: &[f64],
    grad_out: &[f64],
    want_params: bool,
    want_input: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let dw = want_params.then(|| {
        let mut dw = Vec::with_capacity(grad_out.len() * inputs);
        for &g in grad_out {
            dw.extend(x.iter().map(|v| g * v));
        }
        dw
    });
    let dx = want_input.then(|| {
        let mut dx = vec![0.0; inputs];
        for (row, &g) in weight.chunks_exact(inputs).zip(grad_out) {
            if g != 0.0 {
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
        dx
    });
    (dw, dx)
}
