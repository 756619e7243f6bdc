//! Layer primitives: 3x3 convolution (Same/Valid), ReLU, 2x2 max pooling,
//! fully connected, softmax, cross-entropy and the batch MSE loss.
//!
//! Every forward has an exact analytical backward. Convolutions are
//! cross-correlations (no kernel flip), stride 1, kernel fixed at 3x3.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Zero-padding mode for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Pad by one pixel on each side; output spatial size equals input.
    Same,
    /// No padding; output loses two pixels per spatial dim.
    Valid,
}

/// Gradients of one layer application.
///
/// `d_params` is ordered like the layer's parameters (kernels/weight first,
/// then bias) and is empty for parameterless layers.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_params: Vec<Tensor>,
}

fn check_conv_shapes(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let ishape = input.shape();
    if ishape.len() != 3 {
        return Err(Error::Shape(format!(
            "conv2d input must be [C,H,W], got {:?}",
            ishape
        )));
    }
    let kshape = kernels.shape();
    if kshape.len() != 4 || kshape[2] != 3 || kshape[3] != 3 {
        return Err(Error::Shape(format!(
            "conv2d kernels must be [C_out,C_in,3,3], got {:?}",
            kshape
        )));
    }
    if kshape[1] != ishape[0] {
        return Err(Error::Shape(format!(
            "conv2d input has {} channels but kernels expect {}",
            ishape[0], kshape[1]
        )));
    }
    if bias.shape() != [kshape[0]] {
        return Err(Error::Shape(format!(
            "conv2d bias must be [{}], got {:?}",
            kshape[0],
            bias.shape()
        )));
    }
    Ok((kshape[0], ishape[0], ishape[1], ishape[2]))
}

fn conv_out_dims(h: usize, w: usize, padding: Padding) -> Result<(usize, usize, usize)> {
    match padding {
        Padding::Same => Ok((h, w, 1)),
        Padding::Valid => {
            if h < 3 || w < 3 {
                return Err(Error::Shape(format!(
                    "valid conv needs spatial dims >= 3, got {}x{}",
                    h, w
                )));
            }
            Ok((h - 2, w - 2, 0))
        }
    }
}

/// Copies `input` into a zero-padded [C, H+2p, W+2p] buffer.
fn pad_input(input: &Tensor, p: usize) -> Tensor {
    if p == 0 {
        return input.clone();
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros(&[c, ph, pw]);
    let src = input.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..h {
            let s = ch * h * w + i * w;
            let d = ch * ph * pw + (i + p) * pw + p;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

/// 3x3 convolution, stride 1.
///
/// `output[o,i,j] = bias[o] + sum_{c,u,v} kernels[o,c,u,v] * padded[c,i+u,j+v]`
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    let (c_out, c_in, h, w) = check_conv_shapes(input, kernels, bias)?;
    let (h_out, w_out, p) = conv_out_dims(h, w, padding)?;
    let padded = pad_input(input, p);
    let (ph, pw) = (h + 2 * p, w + 2 * p);

    let mut out = Tensor::zeros(&[c_out, h_out, w_out]);
    {
        let odata = out.data_mut();
        let pdata = padded.data();
        let kdata = kernels.data();
        let bdata = bias.data();
        for o in 0..c_out {
            let obase = o * h_out * w_out;
            odata[obase..obase + h_out * w_out].fill(bdata[o]);
            for c in 0..c_in {
                let cbase = c * ph * pw;
                for u in 0..3 {
                    let kbase = ((o * c_in + c) * 3 + u) * 3;
                    let (k0, k1, k2) = (kdata[kbase], kdata[kbase + 1], kdata[kbase + 2]);
                    for i in 0..h_out {
                        let irow = cbase + (i + u) * pw;
                        let in_row = &pdata[irow..irow + pw];
                        let orow = obase + i * w_out;
                        let out_row = &mut odata[orow..orow + w_out];
                        for j in 0..w_out {
                            out_row[j] += k0 * in_row[j] + k1 * in_row[j + 1] + k2 * in_row[j + 2];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] w.r.t. input, kernels and bias.
///
/// `d_params` is `[d_kernels, d_bias]`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
    d_output: &Tensor,
) -> Result<LayerGrads> {
    let (c_out, c_in, h, w) = check_conv_shapes(input, kernels, bias)?;
    let (h_out, w_out, p) = conv_out_dims(h, w, padding)?;
    if d_output.shape() != [c_out, h_out, w_out] {
        return Err(Error::Shape(format!(
            "conv2d d_output must be [{},{},{}], got {:?}",
            c_out,
            h_out,
            w_out,
            d_output.shape()
        )));
    }
    let padded = pad_input(input, p);
    let (ph, pw) = (h + 2 * p, w + 2 * p);

    let mut d_kernels = Tensor::zeros(kernels.shape());
    let mut d_bias = Tensor::zeros(&[c_out]);
    let mut d_padded = Tensor::zeros(&[c_in, ph, pw]);
    {
        let gdata = d_output.data();
        let pdata = padded.data();
        let kdata = kernels.data();
        let dk = d_kernels.data_mut();
        let db = d_bias.data_mut();
        let dp = d_padded.data_mut();
        for o in 0..c_out {
            let obase = o * h_out * w_out;
            db[o] = gdata[obase..obase + h_out * w_out].iter().sum();
            for c in 0..c_in {
                let cbase = c * ph * pw;
                for u in 0..3 {
                    let kbase = ((o * c_in + c) * 3 + u) * 3;
                    let (k0, k1, k2) = (kdata[kbase], kdata[kbase + 1], kdata[kbase + 2]);
                    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                    for i in 0..h_out {
                        let irow = cbase + (i + u) * pw;
                        let grow = obase + i * w_out;
                        let g_row = &gdata[grow..grow + w_out];
                        let in_row = &pdata[irow..irow + pw];
                        let dp_row = &mut dp[irow..irow + pw];
                        for j in 0..w_out {
                            let g = g_row[j];
                            a0 += g * in_row[j];
                            a1 += g * in_row[j + 1];
                            a2 += g * in_row[j + 2];
                            dp_row[j] += g * k0;
                            dp_row[j + 1] += g * k1;
                            dp_row[j + 2] += g * k2;
                        }
                    }
                    dk[kbase] += a0;
                    dk[kbase + 1] += a1;
                    dk[kbase + 2] += a2;
                }
            }
        }
    }

    // Crop the padding ring off d_padded.
    let d_input = if p == 0 {
        d_padded
    } else {
        let mut di = Tensor::zeros(&[c_in, h, w]);
        let src = d_padded.data();
        let dst = di.data_mut();
        for c in 0..c_in {
            for i in 0..h {
                let s = c * ph * pw + (i + p) * pw + p;
                let d = c * h * w + i * w;
                dst[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
        di
    };

    Ok(LayerGrads {
        d_input,
        d_params: vec![d_kernels, d_bias],
    })
}

/// Elementwise max(0, x).
pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes `d_output` where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    if input.shape() != d_output.shape() {
        return Err(Error::Shape(format!(
            "relu d_output shape {:?} does not match input {:?}",
            d_output.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(d_output.data().iter())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(LayerGrads {
        d_input: Tensor::from_vec(input.shape(), data)?,
        d_params: vec![],
    })
}

/// Argmax bookkeeping for the pooling backward pass.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    /// Flat input offset of the max of each output cell.
    argmax: Vec<usize>,
}

/// Disjoint 2x2 window max; odd trailing rows/columns are dropped.
///
/// Ties go to the first window position in row-major scan order.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "maxpool input must be [C,H,W], got {:?}",
            shape
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "maxpool needs spatial dims >= 2, got {}x{}",
            h, w
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let mut argmax = vec![0usize; c * ho * wo];
    let idata = input.data();
    let odata = out.data_mut();
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let base = ch * h * w + (2 * i) * w + 2 * j;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut best = candidates[0];
                let mut best_v = idata[best];
                for &cand in &candidates[1..] {
                    if idata[cand] > best_v {
                        best_v = idata[cand];
                        best = cand;
                    }
                }
                let o = ch * ho * wo + i * wo + j;
                odata[o] = best_v;
                argmax[o] = best;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: shape.to_vec(),
            argmax,
        },
    ))
}

/// Routes each `d_output` entry back to its stored argmax position.
pub fn maxpool2x2_backward(indices: &PoolIndices, d_output: &Tensor) -> Result<LayerGrads> {
    if d_output.len() != indices.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool d_output has {} entries, expected {}",
            d_output.len(),
            indices.argmax.len()
        )));
    }
    let mut d_input = Tensor::zeros(&indices.input_shape);
    let di = d_input.data_mut();
    for (&src, &g) in indices.argmax.iter().zip(d_output.data().iter()) {
        di[src] += g;
    }
    Ok(LayerGrads {
        d_input,
        d_params: vec![],
    })
}

fn check_linear_shapes(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    if input.rank() != 1 || weight.rank() != 2 || bias.rank() != 1 {
        return Err(Error::Shape(format!(
            "linear expects vector/matrix/vector, got {:?}/{:?}/{:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != n || bias.len() != m {
        return Err(Error::Shape(format!(
            "linear dims disagree: input {} vs weight [{},{}] vs bias {}",
            input.len(),
            m,
            n,
            bias.len()
        )));
    }
    Ok((m, n))
}

/// Fully connected layer: `weight * input + bias`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = check_linear_shapes(input, weight, bias)?;
    let x = input.data();
    let wd = weight.data();
    let mut out = bias.data().to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &wd[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * x[j];
        }
        *o += acc;
    }
    Tensor::from_vec(&[m], out)
}

/// Exact gradients of [`linear_forward`]; `d_params` is `[d_weight, d_bias]`.
pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    d_output: &Tensor,
) -> Result<LayerGrads> {
    let (m, n) = check_linear_shapes(input, weight, bias)?;
    if d_output.shape() != [m] {
        return Err(Error::Shape(format!(
            "linear d_output must be [{}], got {:?}",
            m,
            d_output.shape()
        )));
    }
    let x = input.data();
    let wd = weight.data();
    let g = d_output.data();
    let mut d_weight = Tensor::zeros(&[m, n]);
    let mut d_input = Tensor::zeros(&[n]);
    {
        let dw = d_weight.data_mut();
        let di = d_input.data_mut();
        for i in 0..m {
            let gi = g[i];
            let row = &wd[i * n..(i + 1) * n];
            let dw_row = &mut dw[i * n..(i + 1) * n];
            for j in 0..n {
                dw_row[j] = gi * x[j];
                di[j] += gi * row[j];
            }
        }
    }
    let d_bias = d_output.clone();
    Ok(LayerGrads {
        d_input,
        d_params: vec![d_weight, d_bias],
    })
}

/// Numerically stable softmax; output entries are positive and sum to one.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::from_vec(logits.shape(), exps.iter().map(|&e| e / sum).collect())
        .expect("softmax preserves shape")
}

/// Floor applied to predicted probabilities before the log.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

/// `H(y_hat, y) = -sum_c y_hat[c] * ln(max(y[c], 1e-12))`.
///
/// `y_hat` is the one-hot truth, `y` the predicted probability vector.
pub fn cross_entropy(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!(
            "cross_entropy lengths disagree: {} vs {}",
            y_hat.len(),
            y.len()
        )));
    }
    Ok(y_hat
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(&t, &p)| -t * p.max(CROSS_ENTROPY_CLAMP).ln())
        .sum())
}

/// Batch decomposition loss: `(1/2N) * sum_i ||x_bar_i - x_i||^2`.
pub fn mse_frobenius(x_bar: &[Tensor], x: &[Tensor]) -> Result<f64> {
    if x_bar.is_empty() || x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x_bar.len() != x.len() {
        return Err(Error::Shape(format!(
            "batch lengths disagree: {} vs {}",
            x_bar.len(),
            x.len()
        )));
    }
    let n = x_bar.len() as f64;
    let mut acc = 0.0;
    for (a, b) in x_bar.iter().zip(x.iter()) {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "batch item shapes disagree: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        acc += a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    Ok(acc / (2.0 * n))
}
