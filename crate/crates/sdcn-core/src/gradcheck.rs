//! Finite-difference gradient verification.
//!
//! The correctness oracle for every backward pass: analytical gradients are
//! compared coordinate-wise against central differences
//! `(f(x+h) - f(x-h)) / 2h` in double precision.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    conv2d_backward, conv2d_forward, cross_entropy, linear_backward, linear_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, softmax, Padding,
};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Central-difference gradient of a scalar map, coordinate by coordinate.
pub fn central_diff<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst relative discrepancy between two gradient vectors.
///
/// The denominator is floored at 1e-6 so near-zero coordinates compare
/// absolutely instead of blowing up.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Checks an analytical gradient of `f` at `x` against central differences;
/// returns the max relative error.
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_diff(f, x, step);
    max_rel_error(analytic, &numeric)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random values bounded away from zero, so ReLU kinks and pool ties cannot
/// sit inside a finite-difference bracket.
fn random_vec_off_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.2..1.2)
        })
        .collect()
}

/// Scalar probe functional: weighted sum of the output entries.
/// Weights are fixed per instance so the backward sees a generic upstream.
fn probe_weights(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        })
        .collect()
}

fn weighted_sum(out: &Tensor, w: &[f64]) -> f64 {
    out.data().iter().zip(w.iter()).map(|(&o, &c)| o * c).sum()
}

/// One layer-suite entry: name plus measured max relative error.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: f64,
}

/// Gradient check of the convolution: input, kernels and bias all probed.
pub fn check_conv2d(padding: Padding, seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_in, c_out, h, w) = (2, 2, 5, 5);
    let input = Tensor::from_vec(&[c_in, h, w], random_vec(&mut rng, c_in * h * w)).unwrap();
    let kernels =
        Tensor::from_vec(&[c_out, c_in, 3, 3], random_vec(&mut rng, c_out * c_in * 9)).unwrap();
    let bias = Tensor::from_vec(&[c_out], random_vec(&mut rng, c_out)).unwrap();
    let out = conv2d_forward(&input, &kernels, &bias, padding).unwrap();
    let pw = probe_weights(&mut rng, out.len());
    let d_out = Tensor::from_vec(out.shape(), pw.clone()).unwrap();
    let grads = conv2d_backward(&input, &kernels, &bias, padding, &d_out).unwrap();

    let e_input = grad_check(
        |x| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            weighted_sum(&conv2d_forward(&t, &kernels, &bias, padding).unwrap(), &pw)
        },
        input.data(),
        grads.d_input.data(),
        step,
    );
    let e_kernels = grad_check(
        |k| {
            let t = Tensor::from_vec(kernels.shape(), k.to_vec()).unwrap();
            weighted_sum(&conv2d_forward(&input, &t, &bias, padding).unwrap(), &pw)
        },
        kernels.data(),
        grads.d_params[0].data(),
        step,
    );
    let e_bias = grad_check(
        |b| {
            let t = Tensor::from_vec(bias.shape(), b.to_vec()).unwrap();
            weighted_sum(&conv2d_forward(&input, &kernels, &t, padding).unwrap(), &pw)
        },
        bias.data(),
        grads.d_params[1].data(),
        step,
    );
    e_input.max(e_kernels).max(e_bias)
}

/// Gradient check of the fully connected layer.
pub fn check_linear(seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (3, 4);
    let input = Tensor::from_vec(&[n], random_vec_off_zero(&mut rng, n)).unwrap();
    let weight = Tensor::from_vec(&[m, n], random_vec_off_zero(&mut rng, m * n)).unwrap();
    let bias = Tensor::from_vec(&[m], random_vec(&mut rng, m)).unwrap();
    let pw = probe_weights(&mut rng, m);
    let d_out = Tensor::from_vec(&[m], pw.clone()).unwrap();
    let grads = linear_backward(&input, &weight, &bias, &d_out).unwrap();

    let e_input = grad_check(
        |x| {
            let t = Tensor::from_vec(&[n], x.to_vec()).unwrap();
            weighted_sum(&linear_forward(&t, &weight, &bias).unwrap(), &pw)
        },
        input.data(),
        grads.d_input.data(),
        step,
    );
    let e_weight = grad_check(
        |wd| {
            let t = Tensor::from_vec(&[m, n], wd.to_vec()).unwrap();
            weighted_sum(&linear_forward(&input, &t, &bias).unwrap(), &pw)
        },
        weight.data(),
        grads.d_params[0].data(),
        step,
    );
    let e_bias = grad_check(
        |b| {
            let t = Tensor::from_vec(&[m], b.to_vec()).unwrap();
            weighted_sum(&linear_forward(&input, &weight, &t).unwrap(), &pw)
        },
        bias.data(),
        grads.d_params[1].data(),
        step,
    );
    e_input.max(e_weight).max(e_bias)
}

/// Gradient check of ReLU at inputs nudged off zero.
pub fn check_relu(seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_vec(&[12], random_vec_off_zero(&mut rng, 12)).unwrap();
    let pw = probe_weights(&mut rng, 12);
    let d_out = Tensor::from_vec(&[12], pw.clone()).unwrap();
    let grads = relu_backward(&input, &d_out).unwrap();
    grad_check(
        |x| {
            let t = Tensor::from_vec(&[12], x.to_vec()).unwrap();
            weighted_sum(&crate::layers::relu_forward(&t), &pw)
        },
        input.data(),
        grads.d_input.data(),
        step,
    )
}

/// Gradient check of max pooling. Inputs are spread out so no window ties
/// within the difference step.
pub fn check_maxpool(seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = random_vec(&mut rng, 2 * 4 * 4);
    // Separate all values by more than 2*step.
    for (i, v) in data.iter_mut().enumerate() {
        *v += i as f64 * 0.01;
    }
    let input = Tensor::from_vec(&[2, 4, 4], data).unwrap();
    let (out, idx) = maxpool2x2_forward(&input).unwrap();
    let pw = probe_weights(&mut rng, out.len());
    let d_out = Tensor::from_vec(out.shape(), pw.clone()).unwrap();
    let grads = maxpool2x2_backward(&idx, &d_out).unwrap();
    grad_check(
        |x| {
            let t = Tensor::from_vec(&[2, 4, 4], x.to_vec()).unwrap();
            let (o, _) = maxpool2x2_forward(&t).unwrap();
            weighted_sum(&o, &pw)
        },
        input.data(),
        grads.d_input.data(),
        step,
    )
}

/// Gradient check of softmax + cross-entropy against the true class,
/// using the fused analytic gradient `p - y_hat`.
pub fn check_softmax_cross_entropy(seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = Tensor::from_vec(&[4], random_vec(&mut rng, 4)).unwrap();
    let true_class = rng.random_range(0..4usize);
    let mut y_hat = Tensor::zeros(&[4]);
    y_hat.set(&[true_class], 1.0);

    let p = softmax(&logits);
    let analytic: Vec<f64> = p
        .data()
        .iter()
        .zip(y_hat.data().iter())
        .map(|(&pi, &ti)| pi - ti)
        .collect();
    grad_check(
        |x| {
            let t = Tensor::from_vec(&[4], x.to_vec()).unwrap();
            cross_entropy(&y_hat, &softmax(&t)).unwrap()
        },
        logits.data(),
        &analytic,
        step,
    )
}

/// End-to-end joint-loss gradient check on a tiny network (d1 = 2, d2 = 1,
/// 8x8 chips): a few sampled coordinates of every parameter tensor are
/// compared against central differences. Inputs are nudged off zero so no
/// ReLU kink sits inside a difference bracket.
pub fn check_end_to_end(seed: u64, step: f64) -> f64 {
    use crate::model::{init_params, loss_and_grads, sdcn_loss, LossKind, NetworkConfig, TrainItem};

    let config = NetworkConfig {
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
    };
    let params = init_params(&config, seed).expect("tiny config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let noisy = Tensor::from_vec(&[1, 8, 8], random_vec_off_zero(&mut rng, 64)).unwrap();
    let clean = Tensor::from_vec(&[1, 8, 8], random_vec_off_zero(&mut rng, 64)).unwrap();
    let batch = [TrainItem {
        noisy: &noisy,
        clean: &clean,
        label: 0,
    }];
    let (_, grads, _) =
        loss_and_grads(&params, &batch, LossKind::Joint { gamma: 1.0 }).expect("tiny batch");

    let mut worst = 0.0f64;
    let n_tensors = params.tensors().len();
    for slot in 0..n_tensors {
        let len = params.tensors()[slot].len();
        for _ in 0..2.min(len) {
            let coord = rng.random_range(0..len);
            let mut probe = params.clone();
            let orig = probe.tensors()[slot].data()[coord];
            let numeric = central_diff(
                |v| {
                    probe.tensors_mut()[slot].data_mut()[coord] = v[0];
                    let loss = sdcn_loss(&probe, &batch).expect("probe loss");
                    probe.tensors_mut()[slot].data_mut()[coord] = orig;
                    loss.total
                },
                &[orig],
                step,
            );
            let analytic = [grads.0[slot].data()[coord]];
            worst = worst.max(max_rel_error(&analytic, &numeric));
        }
    }
    worst
}

/// Runs every layer check once for each of `rounds` seeds; returns the worst
/// error per layer.
pub fn layer_suite(seed: u64, rounds: u64, step: f64) -> Vec<LayerCheck> {
    let mut results = Vec::new();
    let worst = |f: &dyn Fn(u64) -> f64| -> f64 {
        (0..rounds)
            .map(|r| f(seed.wrapping_add(r)))
            .fold(0.0, f64::max)
    };
    results.push(LayerCheck {
        layer: "conv2d_same".into(),
        max_rel_error: worst(&|s| check_conv2d(Padding::Same, s, step)),
    });
    results.push(LayerCheck {
        layer: "conv2d_valid".into(),
        max_rel_error: worst(&|s| check_conv2d(Padding::Valid, s, step)),
    });
    results.push(LayerCheck {
        layer: "linear".into(),
        max_rel_error: worst(&|s| check_linear(s, step)),
    });
    results.push(LayerCheck {
        layer: "relu".into(),
        max_rel_error: worst(&|s| check_relu(s, step)),
    });
    results.push(LayerCheck {
        layer: "maxpool2x2".into(),
        max_rel_error: worst(&|s| check_maxpool(s, step)),
    });
    results.push(LayerCheck {
        layer: "softmax_cross_entropy".into(),
        max_rel_error: worst(&|s| check_softmax_cross_entropy(s, step)),
    });
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_quadratic_is_exact_to_truncation() {
        // f(x) = sum x_i^2, grad = 2x. Central differences are exact for
        // quadratics up to rounding.
        let x = vec![1.0, -2.0, 3.0];
        let g = central_diff(|v| v.iter().map(|&t| t * t).sum(), &x, 1e-4);
        for (gi, xi) in g.iter().zip(x.iter()) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_layer_passes_below_1e6() {
        for seed in 0..5 {
            let e = check_linear(seed, DEFAULT_STEP);
            assert!(e < 1e-6, "linear grad error {} at seed {}", e, seed);
        }
    }

    #[test]
    fn conv_layers_pass_below_1e4() {
        for seed in 0..5 {
            for padding in [Padding::Same, Padding::Valid] {
                let e = check_conv2d(padding, seed, DEFAULT_STEP);
                assert!(e < 1e-4, "conv {:?} grad error {} at seed {}", padding, e, seed);
            }
        }
    }

    #[test]
    fn parameterless_layers_pass() {
        for seed in 0..5 {
            assert!(check_relu(seed, DEFAULT_STEP) < 1e-6);
            assert!(check_maxpool(seed, DEFAULT_STEP) < 1e-6);
            assert!(check_softmax_cross_entropy(seed, DEFAULT_STEP) < 1e-4);
        }
    }

    #[test]
    fn suite_runs_twenty_random_instances_per_layer() {
        for check in layer_suite(7, 20, DEFAULT_STEP) {
            assert!(
                check.max_rel_error < 1e-4,
                "{} failed with {}",
                check.layer,
                check.max_rel_error
            );
        }
    }
}
