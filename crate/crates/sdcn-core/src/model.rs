//! The two-sub-network model: a Same-padded convolutional stack that maps a
//! noisy chip `x_tilde` to a latent clean chip `x_bar`, followed by a
//! Valid-padded convolutional + fully connected classifier that maps `x_bar`
//! to a 2-class probability vector.
//!
//! The joint loss is `(1/2N)||X_bar - X||_F^2 + gamma * (1/N) sum H(y_hat, y)`.
//! The ablated variant keeps the identical architecture but trains on the
//! cross-entropy term alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, cross_entropy, linear_backward, linear_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_forward, softmax, Padding, PoolIndices,
};
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Depth of the decomposition Conv+ReLU stack (a final conv without ReLU
    /// is always appended).
    pub d1: usize,
    /// Number of Conv+ReLU+MaxPool blocks in the classifier.
    pub d2: usize,
    /// Input polarization count (1, 2 or 3).
    pub channels: usize,
    pub chip_h: usize,
    pub chip_w: usize,
    /// Feature maps per convolution.
    pub filters: usize,
    /// First fully connected width.
    pub fc1: usize,
    /// Second fully connected width.
    pub fc2: usize,
    pub classes: usize,
    /// Joint-loss weight on the cross-entropy term.
    pub gamma: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            d1: 10,
            d2: 3,
            channels: 3,
            chip_h: 32,
            chip_w: 32,
            filters: 64,
            fc1: 512,
            fc2: 128,
            classes: 2,
            gamma: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d1 < 1 || self.d2 < 1 {
            return Err(Error::Config(format!(
                "d1 and d2 must be >= 1, got d1={} d2={}",
                self.d1, self.d2
            )));
        }
        if self.classes != 2 {
            return Err(Error::Config(format!(
                "this problem is two-class; classes={} unsupported",
                self.classes
            )));
        }
        if !(1..=3).contains(&self.channels) {
            return Err(Error::Config(format!(
                "channels must be 1..=3, got {}",
                self.channels
            )));
        }
        if self.filters < 1 || self.fc1 < 1 || self.fc2 < 1 {
            return Err(Error::Config("filters/fc widths must be >= 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        self.flatten_len()?;
        Ok(())
    }

    /// Spatial size after each classifier block, ending at the flatten length.
    ///
    /// Each block applies a Valid conv (-2 per dim) then a 2x2 pool (floor
    /// halving); the chip must survive all `d2` rounds with size >= 1.
    pub fn flatten_len(&self) -> Result<usize> {
        let (mut h, mut w) = (self.chip_h, self.chip_w);
        for round in 0..self.d2 {
            if h < 3 || w < 3 {
                return Err(Error::Config(format!(
                    "chip {}x{} too small for classifier block {} (needs >= 3x3 before conv)",
                    h, w, round
                )));
            }
            h -= 2;
            w -= 2;
            if h < 2 || w < 2 {
                return Err(Error::Config(format!(
                    "chip too small for pooling in classifier block {}",
                    round
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok(self.filters * h * w)
    }
}

/// Structural description of one instantiated layer, for introspection tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerDesc {
    SameConv { c_in: usize, c_out: usize },
    Relu,
    ValidConv { c_in: usize, c_out: usize },
    MaxPool2x2,
    Flatten,
    Linear { d_in: usize, d_out: usize },
    Softmax,
}

/// The exact layer sequence a config instantiates.
pub fn architecture(config: &NetworkConfig) -> Result<Vec<LayerDesc>> {
    config.validate()?;
    let mut layers = Vec::new();
    for i in 0..config.d1 {
        let c_in = if i == 0 { config.channels } else { config.filters };
        layers.push(LayerDesc::SameConv {
            c_in,
            c_out: config.filters,
        });
        layers.push(LayerDesc::Relu);
    }
    // Final decomposition conv maps back to the chip's channel count and has
    // no ReLU: clean signals can be negative.
    layers.push(LayerDesc::SameConv {
        c_in: config.filters,
        c_out: config.channels,
    });
    for j in 0..config.d2 {
        let c_in = if j == 0 { config.channels } else { config.filters };
        layers.push(LayerDesc::ValidConv {
            c_in,
            c_out: config.filters,
        });
        layers.push(LayerDesc::Relu);
        layers.push(LayerDesc::MaxPool2x2);
    }
    layers.push(LayerDesc::Flatten);
    layers.push(LayerDesc::Linear {
        d_in: config.flatten_len()?,
        d_out: config.fc1,
    });
    layers.push(LayerDesc::Relu);
    layers.push(LayerDesc::Linear {
        d_in: config.fc1,
        d_out: config.fc2,
    });
    layers.push(LayerDesc::Relu);
    layers.push(LayerDesc::Linear {
        d_in: config.fc2,
        d_out: config.classes,
    });
    layers.push(LayerDesc::Softmax);
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All trainable weights: `decomp` is theta_1, `class_convs` + `fc` theta_2.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    /// d1 Conv+ReLU layers plus one final conv without ReLU.
    pub decomp: Vec<ConvLayer>,
    /// d2 Valid-padded convolutions, each followed by ReLU and 2x2 pool.
    pub class_convs: Vec<ConvLayer>,
    /// Flatten -> fc1 (ReLU) -> fc2 (ReLU) -> classes (softmax).
    pub fc: Vec<LinearLayer>,
}

/// He-style fan-in uniform limit for a ReLU stack.
fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn init_conv(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize) -> ConvLayer {
    let limit = he_limit(c_in * 9);
    let data = (0..c_out * c_in * 9)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    ConvLayer {
        kernels: Tensor::from_vec(&[c_out, c_in, 3, 3], data).expect("conv init shape"),
        bias: Tensor::zeros(&[c_out]),
    }
}

fn init_linear(rng: &mut ChaCha8Rng, d_out: usize, d_in: usize) -> LinearLayer {
    let limit = he_limit(d_in);
    let data = (0..d_out * d_in)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    LinearLayer {
        weight: Tensor::from_vec(&[d_out, d_in], data).expect("linear init shape"),
        bias: Tensor::zeros(&[d_out]),
    }
}

/// Fan-in scaled uniform initialization, zero biases, deterministic per seed.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decomp = Vec::with_capacity(config.d1 + 1);
    for i in 0..config.d1 {
        let c_in = if i == 0 { config.channels } else { config.filters };
        decomp.push(init_conv(&mut rng, config.filters, c_in));
    }
    decomp.push(init_conv(&mut rng, config.channels, config.filters));

    let mut class_convs = Vec::with_capacity(config.d2);
    for j in 0..config.d2 {
        let c_in = if j == 0 { config.channels } else { config.filters };
        class_convs.push(init_conv(&mut rng, config.filters, c_in));
    }

    let flat = config.flatten_len()?;
    let fc = vec![
        init_linear(&mut rng, config.fc1, flat),
        init_linear(&mut rng, config.fc2, config.fc1),
        init_linear(&mut rng, config.classes, config.fc2),
    ];

    Ok(NetworkParams {
        config: config.clone(),
        decomp,
        class_convs,
        fc,
    })
}

impl NetworkParams {
    /// Parameter tensor names in canonical (checkpoint) order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.decomp.len() {
            names.push(format!("decomp.conv{}.kernels", i));
            names.push(format!("decomp.conv{}.bias", i));
        }
        for i in 0..self.class_convs.len() {
            names.push(format!("class.conv{}.kernels", i));
            names.push(format!("class.conv{}.bias", i));
        }
        for i in 0..self.fc.len() {
            names.push(format!("fc{}.weight", i));
            names.push(format!("fc{}.bias", i));
        }
        names
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.decomp {
            out.push(&layer.kernels);
            out.push(&layer.bias);
        }
        for layer in &self.class_convs {
            out.push(&layer.kernels);
            out.push(&layer.bias);
        }
        for layer in &self.fc {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.decomp {
            out.push(&mut layer.kernels);
            out.push(&mut layer.bias);
        }
        for layer in &mut self.class_convs {
            out.push(&mut layer.kernels);
            out.push(&mut layer.bias);
        }
        for layer in &mut self.fc {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }

    /// Number of parameter tensors in theta_1 (the decomposition stack).
    pub fn theta1_tensor_count(&self) -> usize {
        2 * self.decomp.len()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_chip_shape(&self, x: &Tensor) -> Result<()> {
        let want = [self.config.channels, self.config.chip_h, self.config.chip_w];
        if x.shape() != want {
            return Err(Error::Shape(format!(
                "chip shape {:?} does not match network input {:?}",
                x.shape(),
                want
            )));
        }
        Ok(())
    }
}

/// Gradients for every parameter tensor, aligned with
/// [`NetworkParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros_like(params: &NetworkParams) -> Grads {
        Grads(
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        )
    }

    fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            a.axpy(1.0, b);
        }
    }
}

struct DecompCache {
    /// Input to each decomposition conv; entries 1.. are ReLU outputs.
    conv_inputs: Vec<Tensor>,
}

struct ClassCache {
    /// Input to each classifier conv block; entry 0 is x_bar.
    block_inputs: Vec<Tensor>,
    /// ReLU output of each block (the pool input); doubles as the ReLU mask.
    relu_outs: Vec<Tensor>,
    pool_indices: Vec<PoolIndices>,
    /// Input to each fully connected layer; entry 0 is the flattened features.
    fc_inputs: Vec<Tensor>,
}

fn decompose_with_cache(params: &NetworkParams, x_tilde: &Tensor) -> Result<(Tensor, DecompCache)> {
    let d1 = params.config.d1;
    let mut conv_inputs = Vec::with_capacity(d1 + 1);
    let mut cur = x_tilde.clone();
    for layer in &params.decomp[..d1] {
        let z = conv2d_forward(&cur, &layer.kernels, &layer.bias, Padding::Same)?;
        conv_inputs.push(cur);
        cur = relu_forward(&z);
    }
    let last = &params.decomp[d1];
    let x_bar = conv2d_forward(&cur, &last.kernels, &last.bias, Padding::Same)?;
    conv_inputs.push(cur);
    Ok((x_bar, DecompCache { conv_inputs }))
}

fn classify_with_cache(params: &NetworkParams, x_bar: &Tensor) -> Result<(Tensor, ClassCache)> {
    let d2 = params.config.d2;
    let mut block_inputs = Vec::with_capacity(d2);
    let mut relu_outs = Vec::with_capacity(d2);
    let mut pool_indices = Vec::with_capacity(d2);
    let mut cur = x_bar.clone();
    for layer in &params.class_convs[..d2] {
        let z = conv2d_forward(&cur, &layer.kernels, &layer.bias, Padding::Valid)?;
        block_inputs.push(cur);
        let a = relu_forward(&z);
        let (pooled, idx) = maxpool2x2_forward(&a)?;
        relu_outs.push(a);
        pool_indices.push(idx);
        cur = pooled;
    }
    let flat = cur.reshape(&[cur.len()])?;

    let mut fc_inputs = Vec::with_capacity(3);
    let z1 = linear_forward(&flat, &params.fc[0].weight, &params.fc[0].bias)?;
    fc_inputs.push(flat);
    let a1 = relu_forward(&z1);
    let z2 = linear_forward(&a1, &params.fc[1].weight, &params.fc[1].bias)?;
    fc_inputs.push(a1);
    let a2 = relu_forward(&z2);
    let logits = linear_forward(&a2, &params.fc[2].weight, &params.fc[2].bias)?;
    fc_inputs.push(a2);
    let probs = softmax(&logits);

    Ok((
        probs,
        ClassCache {
            block_inputs,
            relu_outs,
            pool_indices,
            fc_inputs,
        },
    ))
}

/// ReLU backward using the forward *output* as the mask (output > 0 iff
/// input > 0 for the subgradient-0-at-0 convention).
fn relu_mask_backward(relu_out: &Tensor, d_out: &Tensor) -> Tensor {
    let data = relu_out
        .data()
        .iter()
        .zip(d_out.data().iter())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(d_out.shape(), data).expect("mask preserves shape")
}

/// Maps a noisy chip to the latent clean chip; output shape equals input.
pub fn decompose(params: &NetworkParams, x_tilde: &Tensor) -> Result<Tensor> {
    params.check_chip_shape(x_tilde)?;
    Ok(decompose_with_cache(params, x_tilde)?.0)
}

/// Maps a (latent clean) chip to the 2-class probability vector.
pub fn classify(params: &NetworkParams, x_bar: &Tensor) -> Result<Tensor> {
    params.check_chip_shape(x_bar)?;
    Ok(classify_with_cache(params, x_bar)?.0)
}

/// Class index for a noisy chip: argmax of the classifier on the decomposed
/// chip; exact probability ties resolve to class 0 (target).
pub fn predict_label(params: &NetworkParams, x_tilde: &Tensor) -> Result<usize> {
    let probs = classify(params, &decompose(params, x_tilde)?)?;
    Ok(argmax_first(probs.data()))
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate().skip(1) {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// One labeled training sample, borrowed from its dataset.
#[derive(Clone, Copy)]
pub struct TrainItem<'a> {
    pub noisy: &'a Tensor,
    pub clean: &'a Tensor,
    /// 0 = target, 1 = confuser.
    pub label: usize,
}

/// Which terms of the joint loss participate, and where gradients flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `l1 + gamma * l2`, gradients through both sub-networks.
    Joint { gamma: f64 },
    /// Cross-entropy only (the CNN ablation); identical architecture and
    /// gradient flow, but the decomposition term is absent. l1 reports 0.
    CrossEntropyOnly,
    /// Decomposition MSE only (two-step pre-training of theta_1).
    DecompositionOnly,
    /// Cross-entropy only with theta_1 frozen (two-step phase 2).
    ClassifierOnly,
}

/// Loss components of one batch. `total = l1 + gamma * l2` holds exactly as
/// written for the joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
}

/// Forward-only joint loss over a batch.
pub fn sdcn_loss(params: &NetworkParams, batch: &[TrainItem<'_>]) -> Result<LossBreakdown> {
    let gamma = params.config.gamma;
    let (loss, _, _) = batch_pass(params, batch, LossKind::Joint { gamma }, false)?;
    Ok(loss)
}

/// Loss, exact parameter gradients and correct-prediction count for a batch.
pub fn loss_and_grads(
    params: &NetworkParams,
    batch: &[TrainItem<'_>],
    kind: LossKind,
) -> Result<(LossBreakdown, Grads, usize)> {
    let (loss, grads, correct) = batch_pass(params, batch, kind, true)?;
    Ok((loss, grads.expect("grads requested"), correct))
}

struct ItemResult {
    grads: Option<Grads>,
    l1: f64,
    l2: f64,
    correct: bool,
}

fn item_pass(
    params: &NetworkParams,
    item: &TrainItem<'_>,
    kind: LossKind,
    n: f64,
    want_grads: bool,
) -> Result<ItemResult> {
    params.check_chip_shape(item.noisy)?;
    if item.clean.shape() != item.noisy.shape() {
        return Err(Error::Shape(format!(
            "clean chip shape {:?} does not match noisy {:?}",
            item.clean.shape(),
            item.noisy.shape()
        )));
    }
    if item.label >= params.config.classes {
        return Err(Error::Config(format!(
            "label {} out of range for {} classes",
            item.label, params.config.classes
        )));
    }

    let (x_bar, dcache) = decompose_with_cache(params, item.noisy)?;
    let (probs, ccache) = classify_with_cache(params, &x_bar)?;

    let needs_l1 = matches!(kind, LossKind::Joint { .. } | LossKind::DecompositionOnly);
    let l1_item = if needs_l1 {
        0.5 * x_bar
            .data()
            .iter()
            .zip(item.clean.data().iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
    } else {
        0.0
    };
    let mut y_hat = Tensor::zeros(&[params.config.classes]);
    y_hat.set(&[item.label], 1.0);
    let l2_item = cross_entropy(&y_hat, &probs)?;
    let correct = argmax_first(probs.data()) == item.label;

    if !want_grads {
        return Ok(ItemResult {
            grads: None,
            l1: l1_item,
            l2: l2_item,
            correct,
        });
    }

    // Weight on the per-item cross-entropy gradient.
    let ce_scale = match kind {
        LossKind::Joint { gamma } => gamma / n,
        LossKind::CrossEntropyOnly | LossKind::ClassifierOnly => 1.0 / n,
        LossKind::DecompositionOnly => 0.0,
    };
    let mse_scale = match kind {
        LossKind::Joint { .. } | LossKind::DecompositionOnly => 1.0 / n,
        _ => 0.0,
    };

    let mut grads = Grads::zeros_like(params);
    let d1 = params.config.d1;
    let theta2_offset = 2 * (d1 + 1);

    // --- classifier backward (also yields d x_bar from the CE term) ---
    let mut d_x_bar = Tensor::zeros(x_bar.shape());
    if ce_scale != 0.0 {
        let d_logits = Tensor::from_vec(
            &[params.config.classes],
            probs
                .data()
                .iter()
                .zip(y_hat.data().iter())
                .map(|(&p, &t)| ce_scale * (p - t))
                .collect(),
        )?;
        // fc stack, last to first; ReLU sits between fc layers.
        let mut d = d_logits;
        for i in (0..3).rev() {
            let gr = linear_backward(
                &ccache.fc_inputs[i],
                &params.fc[i].weight,
                &params.fc[i].bias,
                &d,
            )?;
            let slot = theta2_offset + 2 * params.config.d2 + 2 * i;
            grads.0[slot] = gr.d_params[0].clone();
            grads.0[slot + 1] = gr.d_params[1].clone();
            d = if i > 0 {
                relu_mask_backward(&ccache.fc_inputs[i], &gr.d_input)
            } else {
                gr.d_input
            };
        }
        // un-flatten to the last pool output shape
        let d2 = params.config.d2;
        let last_shape = {
            let (mut h, mut w) = (params.config.chip_h, params.config.chip_w);
            for _ in 0..d2 {
                h = (h - 2) / 2;
                w = (w - 2) / 2;
            }
            [params.config.filters, h, w]
        };
        let mut d_block = d.reshape(&last_shape)?;
        for j in (0..d2).rev() {
            let d_relu = maxpool2x2_backward(&ccache.pool_indices[j], &d_block)?.d_input;
            let d_conv = relu_mask_backward(&ccache.relu_outs[j], &d_relu);
            let gr = conv2d_backward(
                &ccache.block_inputs[j],
                &params.class_convs[j].kernels,
                &params.class_convs[j].bias,
                Padding::Valid,
                &d_conv,
            )?;
            let slot = theta2_offset + 2 * j;
            grads.0[slot] = gr.d_params[0].clone();
            grads.0[slot + 1] = gr.d_params[1].clone();
            d_block = gr.d_input;
        }
        d_x_bar = d_block;
    }

    // --- decomposition backward ---
    let freeze_theta1 = matches!(kind, LossKind::ClassifierOnly);
    if !freeze_theta1 {
        if mse_scale != 0.0 {
            for (dx, (&a, &b)) in d_x_bar
                .data_mut()
                .iter_mut()
                .zip(x_bar.data().iter().zip(item.clean.data().iter()))
            {
                *dx += mse_scale * (a - b);
            }
        }
        let mut d = d_x_bar;
        let last = &params.decomp[d1];
        let gr = conv2d_backward(
            &dcache.conv_inputs[d1],
            &last.kernels,
            &last.bias,
            Padding::Same,
            &d,
        )?;
        grads.0[2 * d1] = gr.d_params[0].clone();
        grads.0[2 * d1 + 1] = gr.d_params[1].clone();
        d = gr.d_input;
        for i in (0..d1).rev() {
            // conv_inputs[i+1] is the ReLU output of layer i.
            let d_conv = relu_mask_backward(&dcache.conv_inputs[i + 1], &d);
            let gr = conv2d_backward(
                &dcache.conv_inputs[i],
                &params.decomp[i].kernels,
                &params.decomp[i].bias,
                Padding::Same,
                &d_conv,
            )?;
            grads.0[2 * i] = gr.d_params[0].clone();
            grads.0[2 * i + 1] = gr.d_params[1].clone();
            d = gr.d_input;
        }
    }

    Ok(ItemResult {
        grads: Some(grads),
        l1: l1_item,
        l2: l2_item,
        correct,
    })
}

fn batch_pass(
    params: &NetworkParams,
    batch: &[TrainItem<'_>],
    kind: LossKind,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Grads>, usize)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;

    // Items run in parallel; the reduction below is in index order so the
    // result is bit-identical regardless of thread count.
    let results: Vec<Result<ItemResult>> = batch
        .par_iter()
        .map(|item| item_pass(params, item, kind, n, want_grads))
        .collect();

    let mut l1_sum = 0.0;
    let mut l2_sum = 0.0;
    let mut correct = 0usize;
    let mut grads = if want_grads {
        Some(Grads::zeros_like(params))
    } else {
        None
    };
    for r in results {
        let r = r?;
        l1_sum += r.l1;
        l2_sum += r.l2;
        if r.correct {
            correct += 1;
        }
        if let (Some(acc), Some(g)) = (grads.as_mut(), r.grads.as_ref()) {
            acc.accumulate(g);
        }
    }

    let l1 = match kind {
        LossKind::Joint { .. } | LossKind::DecompositionOnly => l1_sum / n,
        _ => 0.0,
    };
    let l2 = l2_sum / n;
    let total = match kind {
        LossKind::Joint { gamma } => l1 + gamma * l2,
        LossKind::CrossEntropyOnly | LossKind::ClassifierOnly => l2,
        LossKind::DecompositionOnly => l1,
    };
    Ok((LossBreakdown { total, l1, l2 }, grads, correct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_error};

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            d1: 2,
            d2: 1,
            channels: 1,
            chip_h: 8,
            chip_w: 8,
            filters: 4,
            fc1: 10,
            fc2: 6,
            classes: 2,
            gamma: 1.0,
        }
    }

    fn random_chip(seed: u64, config: &NetworkConfig) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = config.channels * config.chip_h * config.chip_w;
        Tensor::from_vec(
            &[config.channels, config.chip_h, config.chip_w],
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = tiny_config();
        let a = init_params(&config, 9).unwrap();
        let b = init_params(&config, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&config, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_default_first_conv_shape_and_zero_biases() {
        let params = init_params(&NetworkConfig::default(), 1).unwrap();
        assert_eq!(params.decomp[0].kernels.shape(), &[64, 3, 3, 3]);
        for t in params.tensors() {
            if t.rank() == 1 {
                assert!(t.data().iter().all(|&b| b == 0.0), "bias not zero at init");
            }
        }
    }

    #[test]
    fn flatten_len_default_is_256() {
        // 32 -> 30 -> 15 -> 13 -> 6 -> 4 -> 2; 64 * 2 * 2 = 256.
        assert_eq!(NetworkConfig::default().flatten_len().unwrap(), 256);
    }

    #[test]
    fn config_rejects_shape_chain_violation() {
        let mut config = tiny_config();
        config.chip_h = 4;
        config.chip_w = 4;
        config.d2 = 2;
        assert!(config.validate().is_err());
    }

    #[test]
    fn architecture_for_defaults_matches_the_documented_stack() {
        let layers = architecture(&NetworkConfig::default()).unwrap();
        let mut want = Vec::new();
        want.push(LayerDesc::SameConv { c_in: 3, c_out: 64 });
        want.push(LayerDesc::Relu);
        for _ in 1..10 {
            want.push(LayerDesc::SameConv { c_in: 64, c_out: 64 });
            want.push(LayerDesc::Relu);
        }
        want.push(LayerDesc::SameConv { c_in: 64, c_out: 3 });
        want.push(LayerDesc::ValidConv { c_in: 3, c_out: 64 });
        want.push(LayerDesc::Relu);
        want.push(LayerDesc::MaxPool2x2);
        for _ in 1..3 {
            want.push(LayerDesc::ValidConv { c_in: 64, c_out: 64 });
            want.push(LayerDesc::Relu);
            want.push(LayerDesc::MaxPool2x2);
        }
        want.push(LayerDesc::Flatten);
        want.push(LayerDesc::Linear { d_in: 256, d_out: 512 });
        want.push(LayerDesc::Relu);
        want.push(LayerDesc::Linear { d_in: 512, d_out: 128 });
        want.push(LayerDesc::Relu);
        want.push(LayerDesc::Linear { d_in: 128, d_out: 2 });
        want.push(LayerDesc::Softmax);
        assert_eq!(layers, want);
    }

    #[test]
    fn decompose_preserves_shape_and_zero_maps_to_zero() {
        let config = tiny_config();
        let params = init_params(&config, 3).unwrap();
        let x = random_chip(1, &config);
        let x_bar = decompose(&params, &x).unwrap();
        assert_eq!(x_bar.shape(), x.shape());

        let zero = Tensor::zeros(x.shape());
        let out = decompose(&params, &zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_rejects_wrong_shape() {
        let config = tiny_config();
        let params = init_params(&config, 3).unwrap();
        let bad = Tensor::zeros(&[1, 9, 8]);
        assert!(decompose(&params, &bad).is_err());
    }

    #[test]
    fn classify_outputs_probability_vector_and_is_pure() {
        let config = tiny_config();
        let params = init_params(&config, 4).unwrap();
        let x = random_chip(2, &config);
        let p = classify(&params, &x).unwrap();
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.data().iter().all(|&v| v > 0.0));
        assert_eq!(p, classify(&params, &x).unwrap());
    }

    #[test]
    fn predict_label_tie_goes_to_target() {
        assert_eq!(argmax_first(&[0.7, 0.3]), 0);
        assert_eq!(argmax_first(&[0.5, 0.5]), 0);
        assert_eq!(argmax_first(&[0.3, 0.7]), 1);
    }

    #[test]
    fn joint_loss_additivity_and_gamma_degeneracy() {
        let mut config = tiny_config();
        let params = init_params(&config, 5).unwrap();
        let noisy = random_chip(3, &config);
        let clean = random_chip(4, &config);
        let item = TrainItem {
            noisy: &noisy,
            clean: &clean,
            label: 0,
        };

        let loss = sdcn_loss(&params, &[item]).unwrap();
        assert_eq!(loss.total, loss.l1 + config.gamma * loss.l2);

        config.gamma = 0.0;
        let params0 = NetworkParams {
            config: config.clone(),
            ..params.clone()
        };
        let loss0 = sdcn_loss(&params0, &[item]).unwrap();
        assert_eq!(loss0.total, loss0.l1);
        assert_eq!(loss0.l1, loss.l1);
    }

    #[test]
    fn duplicated_item_batch_equals_single_item_loss() {
        let config = tiny_config();
        let params = init_params(&config, 6).unwrap();
        let noisy = random_chip(5, &config);
        let clean = random_chip(6, &config);
        let item = TrainItem {
            noisy: &noisy,
            clean: &clean,
            label: 1,
        };
        let single = sdcn_loss(&params, &[item]).unwrap();
        let double = sdcn_loss(&params, &[item, item]).unwrap();
        assert!((single.total - double.total).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let params = init_params(&tiny_config(), 6).unwrap();
        assert!(matches!(sdcn_loss(&params, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn theta2_grads_agree_between_joint_and_ce_only() {
        let config = tiny_config();
        let params = init_params(&config, 7).unwrap();
        let noisy = random_chip(7, &config);
        let clean = random_chip(8, &config);
        let batch = [TrainItem {
            noisy: &noisy,
            clean: &clean,
            label: 0,
        }];
        let (_, g_joint, _) =
            loss_and_grads(&params, &batch, LossKind::Joint { gamma: 1.0 }).unwrap();
        let (_, g_ce, _) = loss_and_grads(&params, &batch, LossKind::CrossEntropyOnly).unwrap();
        let start = params.theta1_tensor_count();
        for slot in start..g_joint.0.len() {
            assert_eq!(
                g_joint.0[slot], g_ce.0[slot],
                "theta2 slot {} differs between modes",
                slot
            );
        }
    }

    #[test]
    fn classifier_only_mode_freezes_theta1() {
        let config = tiny_config();
        let params = init_params(&config, 8).unwrap();
        let noisy = random_chip(9, &config);
        let clean = random_chip(10, &config);
        let batch = [TrainItem {
            noisy: &noisy,
            clean: &clean,
            label: 1,
        }];
        let (_, grads, _) = loss_and_grads(&params, &batch, LossKind::ClassifierOnly).unwrap();
        for slot in 0..params.theta1_tensor_count() {
            assert!(grads.0[slot].data().iter().all(|&g| g == 0.0));
        }
    }

    /// End-to-end joint-loss gradient vs. central differences on a sampled
    /// weight subset, tiny config.
    #[test]
    fn joint_loss_gradient_matches_finite_differences() {
        let config = tiny_config();
        let params = init_params(&config, 11).unwrap();
        // Inputs off zero so no ReLU kink sits inside a difference bracket.
        let noisy = random_chip(11, &config).map(|v| v + 0.05 * v.signum());
        let clean = random_chip(12, &config);
        let batch = [TrainItem {
            noisy: &noisy,
            clean: &clean,
            label: 0,
        }];
        let (_, grads, _) =
            loss_and_grads(&params, &batch, LossKind::Joint { gamma: 1.0 }).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let names = params.param_names();
        for (slot, name) in names.iter().enumerate() {
            let len = params.tensors()[slot].len();
            // Sample a few coordinates per tensor.
            let picks: Vec<usize> = (0..3.min(len))
                .map(|_| rng.random_range(0..len))
                .collect();
            for &coord in &picks {
                let mut probe = params.clone();
                let orig = probe.tensors()[slot].data()[coord];
                let x = [orig];
                let numeric = central_diff(
                    |v| {
                        probe.tensors_mut()[slot].data_mut()[coord] = v[0];
                        let loss = sdcn_loss(&probe, &batch).unwrap();
                        probe.tensors_mut()[slot].data_mut()[coord] = orig;
                        loss.total
                    },
                    &x,
                    1e-4,
                );
                let analytic = [grads.0[slot].data()[coord]];
                let err = max_rel_error(&analytic, &numeric);
                assert!(
                    err < 1e-3,
                    "gradient mismatch at {}[{}]: analytic {} numeric {} err {}",
                    name,
                    coord,
                    analytic[0],
                    numeric[0],
                    err
                );
            }
        }
    }
}
