//! Mini-batch training loop over the joint loss and its ablations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    init_params, loss_and_grads, LossBreakdown, LossKind, NetworkConfig, NetworkParams, TrainItem,
};
use crate::optim::{OptKind, Optimizer};
use crate::seeds;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptKind,
    pub seed: u64,
    /// Overrides the network config's joint-loss weight when set.
    pub gamma: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptKind::Adam,
            seed: 0,
            gamma: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::Config(format!("gamma override must be finite and >= 0, got {}", g)));
            }
        }
        Ok(())
    }
}

/// Training objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Joint decomposition + classification loss, end to end.
    Sdcn,
    /// Cross-entropy only through the identical architecture.
    CnnOnly,
    /// Pre-train the decomposition alone, then the classifier on its frozen
    /// output (the sequential scheme the joint loss replaces).
    TwoStep,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sdcn" => Ok(TrainMode::Sdcn),
            "cnn-only" | "cnn_only" | "cnn" => Ok(TrainMode::CnnOnly),
            "two-step" | "two_step" => Ok(TrainMode::TwoStep),
            other => Err(format!("unknown train mode '{}'", other)),
        }
    }
}

/// Per-epoch loss components and training accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub train_acc: f64,
}

/// One optimizer update on a batch; returns the pre-update loss record.
pub fn train_step(
    params: &mut NetworkParams,
    optimizer: &mut Optimizer,
    batch: &[TrainItem<'_>],
    kind: LossKind,
) -> Result<LossBreakdown> {
    let (loss, grads, _) = loss_and_grads(params, batch, kind)?;
    if !loss.total.is_finite() {
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    optimizer.step(params, &grads);
    Ok(loss)
}

fn loss_kind_for_epoch(mode: TrainMode, gamma: f64, epoch: usize, epochs: usize) -> LossKind {
    match mode {
        TrainMode::Sdcn => LossKind::Joint { gamma },
        TrainMode::CnnOnly => LossKind::CrossEntropyOnly,
        TrainMode::TwoStep => {
            // Phase 1 (decomposition pre-training) takes the first half,
            // rounded up; phase 2 trains the classifier on frozen theta_1.
            if epoch < epochs.div_ceil(2) {
                LossKind::DecompositionOnly
            } else {
                LossKind::ClassifierOnly
            }
        }
    }
}

/// Trains a fresh network on `items`, calling `on_epoch` after each epoch.
///
/// Data is reshuffled per epoch with a seeded RNG; the whole run is
/// bit-reproducible given (seed, configs, data).
pub fn train_with_progress(
    items: &[TrainItem<'_>],
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    mode: TrainMode,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(NetworkParams, Vec<EpochStats>)> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    net_config.validate()?;
    train_config.validate()?;

    let gamma = train_config.gamma.unwrap_or(net_config.gamma);
    let mut params = init_params(net_config, train_config.seed)?;
    let mut optimizer = Optimizer::new(train_config.optimizer, train_config.learning_rate);
    let mut history = Vec::with_capacity(train_config.epochs);

    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..train_config.epochs {
        let kind = loss_kind_for_epoch(mode, gamma, epoch, train_config.epochs);
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(train_config.seed, 0x5348 + epoch as u64));
        order.shuffle(&mut rng);

        let n = items.len() as f64;
        let (mut l1_sum, mut l2_sum, mut total_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<TrainItem<'_>> = chunk.iter().map(|&i| items[i]).collect();
            let (loss, grads, n_correct) = loss_and_grads(&params, &batch, kind)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            optimizer.step(&mut params, &grads);
            let w = batch.len() as f64;
            l1_sum += loss.l1 * w;
            l2_sum += loss.l2 * w;
            total_sum += loss.total * w;
            correct += n_correct;
        }
        let stats = EpochStats {
            epoch,
            l1: l1_sum / n,
            l2: l2_sum / n,
            total: total_sum / n,
            train_acc: correct as f64 / n,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((params, history))
}

/// [`train_with_progress`] without an observer.
pub fn train(
    items: &[TrainItem<'_>],
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    mode: TrainMode,
) -> Result<(NetworkParams, Vec<EpochStats>)> {
    train_with_progress(items, net_config, train_config, mode, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sdcn_loss;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            d1: 1,
            d2: 1,
            channels: 1,
            chip_h: 6,
            chip_w: 6,
            filters: 3,
            fc1: 8,
            fc2: 4,
            classes: 2,
            gamma: 1.0,
        }
    }

    fn random_chips(seed: u64, n: usize, config: &NetworkConfig) -> Vec<(Tensor, Tensor, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = config.channels * config.chip_h * config.chip_w;
        (0..n)
            .map(|i| {
                let noisy = Tensor::from_vec(
                    &[config.channels, config.chip_h, config.chip_w],
                    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let clean = Tensor::from_vec(
                    &[config.channels, config.chip_h, config.chip_w],
                    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                (noisy, clean, i % 2)
            })
            .collect()
    }

    fn as_items(data: &[(Tensor, Tensor, usize)]) -> Vec<TrainItem<'_>> {
        data.iter()
            .map(|(noisy, clean, label)| TrainItem {
                noisy,
                clean,
                label: *label,
            })
            .collect()
    }

    #[test]
    fn default_epochs_is_50() {
        assert_eq!(TrainConfig::default().epochs, 50);
    }

    #[test]
    fn history_length_equals_epochs() {
        let config = tiny_config();
        let data = random_chips(1, 6, &config);
        let items = as_items(&data);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        };
        let (_, history) = train(&items, &config, &tc, TrainMode::Sdcn).unwrap();
        assert_eq!(history.len(), 3);
        assert_eq!(history[2].epoch, 2);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let config = tiny_config();
        let data = random_chips(2, 8, &config);
        let items = as_items(&data);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            ..Default::default()
        };
        let (p1, h1) = train(&items, &config, &tc, TrainMode::Sdcn).unwrap();
        let (p2, h2) = train(&items, &config, &tc, TrainMode::Sdcn).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn single_sgd_step_decreases_loss_for_small_lr() {
        let config = tiny_config();
        for seed in 0..10 {
            let data = random_chips(100 + seed, 1, &config);
            let items = as_items(&data);
            let params = init_params(&config, seed).unwrap();
            let before = sdcn_loss(&params, &items).unwrap().total;

            let mut updated = params.clone();
            let mut opt = Optimizer::new(OptKind::Sgd, 1e-5);
            train_step(
                &mut updated,
                &mut opt,
                &items,
                LossKind::Joint { gamma: 1.0 },
            )
            .unwrap();
            let after = sdcn_loss(&updated, &items).unwrap().total;
            assert!(
                after < before,
                "seed {}: loss went {} -> {}",
                seed,
                before,
                after
            );
        }
    }

    #[test]
    fn zero_lr_is_rejected_by_config_but_step_keeps_params_with_sgd() {
        let tc = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(tc.validate().is_err());
    }

    #[test]
    fn cnn_only_history_reports_zero_l1() {
        let config = tiny_config();
        let data = random_chips(3, 6, &config);
        let items = as_items(&data);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..Default::default()
        };
        let (_, history) = train(&items, &config, &tc, TrainMode::CnnOnly).unwrap();
        assert!(history.iter().all(|e| e.l1 == 0.0));
        assert!(history.iter().all(|e| e.total == e.l2));
    }

    #[test]
    fn divergence_aborts_with_epoch_index() {
        let config = tiny_config();
        let data = random_chips(4, 4, &config);
        let items = as_items(&data);
        // An absurd learning rate reliably blows the loss up to NaN/inf.
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e12,
            optimizer: OptKind::Sgd,
            ..Default::default()
        };
        match train(&items, &config, &tc, TrainMode::Sdcn) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn two_step_mode_trains_both_phases() {
        let config = tiny_config();
        let data = random_chips(5, 6, &config);
        let items = as_items(&data);
        let tc = TrainConfig {
            epochs: 4,
            batch_size: 3,
            ..Default::default()
        };
        let (_, history) = train(&items, &config, &tc, TrainMode::TwoStep).unwrap();
        // Phase 1 reports the decomposition loss as total, phase 2 the CE.
        assert_eq!(history.len(), 4);
        assert_eq!(history[0].total, history[0].l1);
        assert_eq!(history[3].total, history[3].l2);
    }
}
