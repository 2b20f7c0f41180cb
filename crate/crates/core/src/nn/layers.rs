//! Forward and backward passes of the individual layer kinds.
//!
//! Backward functions that produce parameter gradients *add* into the
//! accumulators they are handed, so a mini-batch can be summed without
//! allocating per-sample gradient buffers.

use rand::Rng;

use super::{NnError, Tensor};

/// Dot product with four independent partial sums. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_shape(t: &Tensor, expected: &[usize], what: &str) -> Result<(), NnError> {
    if t.shape() != expected {
        return Err(NnError::ShapeMismatch(format!(
            "{what}: expected shape {expected:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Self, NnError> {
        let (channels, height, width) = input.chw()?;
        let (filters, kernel) = match weights.shape()[..] {
            [f, c, kh, kw] if c == channels && kh == kw && kh >= 1 => (f, kh),
            _ => {
                return Err(NnError::ShapeMismatch(format!(
                    "conv2d weights {:?} incompatible with input {:?}",
                    weights.shape(),
                    input.shape()
                )))
            }
        };
        check_shape(bias, &[filters], "conv2d bias")?;
        if height < kernel || width < kernel {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d input {height}x{width} smaller than the {kernel}x{kernel} kernel"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            filters,
            kernel,
            out_h: height - kernel + 1,
            out_w: width - kernel + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds the input into a `(C·K·K) × (OH·OW)` matrix.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_len() * p];
        for c in 0..self.channels {
            for i in 0..self.kernel {
                for j in 0..self.kernel {
                    let row = (c * self.kernel + i) * self.kernel + j;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for y in 0..self.out_h {
                        let src = (c * self.height + y + i) * self.width + j;
                        dst[y * self.out_w..(y + 1) * self.out_w]
                            .copy_from_slice(&input[src..src + self.out_w]);
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut out = vec![0.0; self.channels * self.height * self.width];
        for c in 0..self.channels {
            for i in 0..self.kernel {
                for j in 0..self.kernel {
                    let row = (c * self.kernel + i) * self.kernel + j;
                    let src = &cols[row * p..(row + 1) * p];
                    for y in 0..self.out_h {
                        let dst = (c * self.height + y + i) * self.width + j;
                        for (o, s) in out[dst..dst + self.out_w]
                            .iter_mut()
                            .zip(&src[y * self.out_w..(y + 1) * self.out_w])
                        {
                            *o += s;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Valid (unpadded) stride-1 convolution: `(C,H,W) ⊛ (F,C,K,K) → (F,H−K+1,W−K+1)`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let g = ConvGeometry::new(input, weights, bias)?;
    let cols = g.im2col(input.data());
    let (p, k) = (g.positions(), g.patch_len());
    let mut out = vec![0.0; g.filters * p];
    for f in 0..g.filters {
        let row = &mut out[f * p..(f + 1) * p];
        row.fill(bias.data()[f]);
        let w = &weights.data()[f * k..(f + 1) * k];
        for (kk, &wv) in w.iter().enumerate() {
            axpy(wv, &cols[kk * p..(kk + 1) * p], row);
        }
    }
    Tensor::new(vec![g.filters, g.out_h, g.out_w], out)
}

/// Adds the weight and bias gradients into `grad_w`/`grad_b` and returns the
/// input gradient when `want_input_grad` is set.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    let g = ConvGeometry::new(input, weights, grad_b)?;
    check_shape(
        grad_out,
        &[g.filters, g.out_h, g.out_w],
        "conv2d upstream gradient",
    )?;
    check_shape(grad_w, weights.shape(), "conv2d weight gradient")?;
    let cols = g.im2col(input.data());
    let (p, k) = (g.positions(), g.patch_len());
    let go = grad_out.data();
    for f in 0..g.filters {
        let gf = &go[f * p..(f + 1) * p];
        grad_b.data_mut()[f] += gf.iter().sum::<f64>();
        let gw = &mut grad_w.data_mut()[f * k..(f + 1) * k];
        for (kk, slot) in gw.iter_mut().enumerate() {
            *slot += dot(gf, &cols[kk * p..(kk + 1) * p]);
        }
    }
    if !want_input_grad {
        return Ok(None);
    }
    let mut grad_cols = vec![0.0; k * p];
    let w = weights.data();
    for kk in 0..k {
        let dst = &mut grad_cols[kk * p..(kk + 1) * p];
        for f in 0..g.filters {
            axpy(w[f * k + kk], &go[f * p..(f + 1) * p], dst);
        }
    }
    Tensor::new(input.shape().to_vec(), g.col2im(&grad_cols)).map(Some)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the upstream gradient where the forward input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    check_shape(grad_out, input.shape(), "relu upstream gradient")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2×2 stride-2 max pooling with floor semantics. Returns the pooled tensor
/// and, per output element, the flat input index that won (first maximum in
/// row-major window order).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let (c, h, w) = input.chw()?;
    if h < 2 || w < 2 {
        return Err(NnError::ShapeMismatch(format!(
            "max pooling needs at least 2x2 spatial extent, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xo;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pooling gradient has {} elements for {} windows",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted dropout. In training mode every element is zeroed with
/// probability `p` and survivors are scaled by `1/(1−p)`; the returned mask
/// holds those per-element factors. Inference is the identity.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    p: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidSpec(format!(
            "dropout rate {p} outside [0, 1)"
        )));
    }
    if mode == DropoutMode::Infer {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(mask: &[f64], grad_out: &Tensor) -> Result<Tensor, NnError> {
    if mask.len() != grad_out.len() {
        return Err(NnError::ShapeMismatch(format!(
            "dropout mask has {} entries for a gradient of {}",
            mask.len(),
            grad_out.len()
        )));
    }
    Ok(grad_out.map_indexed(|i, g| g * mask[i]))
}

pub fn flatten(input: Tensor) -> Tensor {
    let n = input.len();
    input.reshape(vec![n]).expect("same element count")
}

/// `out = W·x + b` with `W` shaped `(out, in)`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (out_f, in_f) = dense_dims(input, weights, bias)?;
    let w = weights.data();
    let x = input.data();
    let data = (0..out_f)
        .map(|o| bias.data()[o] + dot(&w[o * in_f..(o + 1) * in_f], x))
        .collect();
    Tensor::new(vec![out_f], data)
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize), NnError> {
    match (input.shape(), weights.shape()) {
        ([n], [o, i]) if n == i => {
            check_shape(bias, &[*o], "dense bias")?;
            Ok((*o, *i))
        }
        _ => Err(NnError::ShapeMismatch(format!(
            "dense weights {:?} incompatible with input {:?}",
            weights.shape(),
            input.shape()
        ))),
    }
}

/// Adds parameter gradients into the accumulators; returns the input
/// gradient when requested.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    let (out_f, in_f) = dense_dims(input, weights, grad_b)?;
    check_shape(grad_out, &[out_f], "dense upstream gradient")?;
    check_shape(grad_w, weights.shape(), "dense weight gradient")?;
    let x = input.data();
    let g = grad_out.data();
    {
        let gw = grad_w.data_mut();
        for o in 0..out_f {
            if g[o] != 0.0 {
                axpy(g[o], x, &mut gw[o * in_f..(o + 1) * in_f]);
            }
        }
    }
    for (b, gv) in grad_b.data_mut().iter_mut().zip(g) {
        *b += gv;
    }
    if !want_input_grad {
        return Ok(None);
    }
    let w = weights.data();
    let mut gx = vec![0.0; in_f];
    for o in 0..out_f {
        if g[o] != 0.0 {
            axpy(g[o], &w[o * in_f..(o + 1) * in_f], &mut gx);
        }
    }
    Tensor::new(vec![in_f], gx).map(Some)
}

/// Numerically stable softmax over a vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(
        logits.shape().to_vec(),
        exps.into_iter().map(|e| e / sum).collect(),
    )
    .expect("same shape")
}

/// Gradient of categorical cross-entropy with respect to the softmax
/// logits: `probs − onehot`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, onehot: &Tensor) -> Result<Tensor, NnError> {
    check_shape(onehot, probs.shape(), "one-hot target")?;
    Ok(probs.map_indexed(|i, p| p - onehot.data()[i]))
}

impl Tensor {
    pub(crate) fn map_indexed(&self, f: impl Fn(usize, f64) -> f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i, v))
            .collect();
        Tensor::new(self.shape().to_vec(), data).expect("same shape")
    }
}
