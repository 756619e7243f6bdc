//! Parameter update rules: plain SGD, SGD with momentum, and Adam.

use crate::model::{Grads, NetworkParams};
use crate::tensor::Tensor;

/// Optimizer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    /// Heavy-ball momentum, coefficient 0.9.
    Momentum,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

impl std::str::FromStr for OptKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptKind::Sgd),
            "momentum" | "sgd-momentum" => Ok(OptKind::Momentum),
            "adam" => Ok(OptKind::Adam),
            other => Err(format!("unknown optimizer '{}'", other)),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Stateful optimizer; state buffers are lazily shaped on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptKind,
    lr: f64,
    /// Momentum velocity or Adam first moment.
    m: Vec<Tensor>,
    /// Adam second moment.
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptKind, lr: f64) -> Optimizer {
        Optimizer {
            kind,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn kind(&self) -> OptKind {
        self.kind
    }

    fn ensure_state(&mut self, params: &NetworkParams) {
        if self.m.is_empty() {
            self.m = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            if self.kind == OptKind::Adam {
                self.v = self.m.clone();
            }
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Grads) {
        self.ensure_state(params);
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.0.iter()) {
                    p.axpy(-lr, g);
                }
            }
            OptKind::Momentum => {
                for ((p, g), m) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.0.iter())
                    .zip(self.m.iter_mut())
                {
                    for (mi, &gi) in m.data_mut().iter_mut().zip(g.data().iter()) {
                        *mi = MOMENTUM * *mi + gi;
                    }
                    p.axpy(-lr, m);
                }
            }
            OptKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.0.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    let pd = p.data_mut();
                    let md = m.data_mut();
                    let vd = v.data_mut();
                    for i in 0..pd.len() {
                        let gi = g.data()[i];
                        md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gi;
                        vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = md[i] / bc1;
                        let v_hat = vd[i] / bc2;
                        pd[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, NetworkConfig};

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            d1: 1,
            d2: 1,
            channels: 1,
            chip_h: 6,
            chip_w: 6,
            filters: 2,
            fc1: 4,
            fc2: 3,
            classes: 2,
            gamma: 1.0,
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut params = init_params(&tiny(), 0).unwrap();
        let before = params.clone();
        let grads = Grads(
            params
                .tensors()
                .iter()
                .map(|t| crate::tensor::Tensor::filled(t.shape(), 1.0))
                .collect(),
        );
        for kind in [OptKind::Sgd, OptKind::Momentum, OptKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.0);
            opt.step(&mut params, &grads);
            assert_eq!(params, before);
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = init_params(&tiny(), 1).unwrap();
        let w0 = params.tensors()[0].data()[0];
        let grads = Grads(
            params
                .tensors()
                .iter()
                .map(|t| crate::tensor::Tensor::filled(t.shape(), 2.0))
                .collect(),
        );
        let mut opt = Optimizer::new(OptKind::Sgd, 0.5);
        opt.step(&mut params, &grads);
        assert!((params.tensors()[0].data()[0] - (w0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_size_is_lr() {
        // With constant gradient g, the bias-corrected first Adam step is
        // lr * g/|g| (up to eps).
        let mut params = init_params(&tiny(), 2).unwrap();
        let w0 = params.tensors()[0].data()[0];
        let grads = Grads(
            params
                .tensors()
                .iter()
                .map(|t| crate::tensor::Tensor::filled(t.shape(), 0.3))
                .collect(),
        );
        let mut opt = Optimizer::new(OptKind::Adam, 1e-3);
        opt.step(&mut params, &grads);
        let moved = w0 - params.tensors()[0].data()[0];
        assert!((moved - 1e-3).abs() < 1e-6, "moved {}", moved);
    }
}
