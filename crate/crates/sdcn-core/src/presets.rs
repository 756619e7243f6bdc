//! Canonical parameter presets.
//!
//! `paper` carries the published protocol: 10,000 training samples per class
//! mixed at lambda ~ U[0.5, 5.5], test noise levels {1..5} at 100 random
//! aspect angles, depths D1 = 10 / D2 = 3 with 64 filters, fully connected
//! widths 512/128, gamma = 1 and 50 training epochs.
//!
//! `desk` is the fast CI-friendly scale: 1,000 samples per class on 16x16
//! chips through a slimmer network, minutes instead of hours on a laptop
//! core.

use crate::model::NetworkConfig;
use crate::optim::OptKind;
use crate::synth::{GenConfig, Pol};
use crate::train::TrainConfig;

pub const PAPER_LAMBDA_RANGE: (f64, f64) = (0.5, 5.5);
pub const PAPER_TEST_LAMBDAS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const PAPER_N_PER_CLASS: usize = 10_000;
pub const PAPER_TEST_ANGLES: usize = 100;
pub const PAPER_CHIP: usize = 32;

pub const DESK_N_PER_CLASS: usize = 1_000;
pub const DESK_TEST_ANGLES: usize = 20;
pub const DESK_CHIP: usize = 16;

/// Ground smoothing width used by both presets, pixels.
pub const GROUND_CORR: f64 = 0.8;

pub fn paper_gen(seed: u64) -> GenConfig {
    GenConfig {
        channels: Pol::ALL.to_vec(),
        chip_h: PAPER_CHIP,
        chip_w: PAPER_CHIP,
        ground_corr: GROUND_CORR,
        lambda_range: PAPER_LAMBDA_RANGE,
        n_per_class: PAPER_N_PER_CLASS,
        test_lambdas: PAPER_TEST_LAMBDAS.to_vec(),
        test_angles: PAPER_TEST_ANGLES,
        seed,
    }
}

pub fn desk_gen(seed: u64) -> GenConfig {
    GenConfig {
        channels: Pol::ALL.to_vec(),
        chip_h: DESK_CHIP,
        chip_w: DESK_CHIP,
        ground_corr: GROUND_CORR,
        lambda_range: PAPER_LAMBDA_RANGE,
        n_per_class: DESK_N_PER_CLASS,
        test_lambdas: PAPER_TEST_LAMBDAS.to_vec(),
        test_angles: DESK_TEST_ANGLES,
        seed,
    }
}

/// The published architecture for a given polarization count.
pub fn paper_net(channels: usize) -> NetworkConfig {
    NetworkConfig {
        channels,
        chip_h: PAPER_CHIP,
        chip_w: PAPER_CHIP,
        ..NetworkConfig::default()
    }
}

/// Slim desk-scale architecture on 16x16 chips.
pub fn desk_net(channels: usize) -> NetworkConfig {
    NetworkConfig {
        d1: 4,
        d2: 2,
        channels,
        chip_h: DESK_CHIP,
        chip_w: DESK_CHIP,
        filters: 16,
        fc1: 64,
        fc2: 32,
        classes: 2,
        gamma: 1.0,
    }
}

pub fn paper_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

pub fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 32,
        learning_rate: 1e-3,
        optimizer: OptKind::Adam,
        seed,
        gamma: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_counts() {
        let gen = paper_gen(0);
        assert_eq!(gen.n_per_class, 10_000);
        assert_eq!(gen.lambda_range, (0.5, 5.5));
        assert_eq!(gen.test_lambdas, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(gen.test_angles, 100);
        let net = paper_net(3);
        assert_eq!((net.d1, net.d2, net.filters, net.fc1, net.fc2), (10, 3, 64, 512, 128));
        assert_eq!(net.gamma, 1.0);
        assert_eq!(paper_train(0).epochs, 50);
    }

    #[test]
    fn desk_preset_is_shape_valid_and_small() {
        let net = desk_net(3);
        assert!(net.validate().is_ok());
        let gen = desk_gen(0);
        assert_eq!(2 * gen.n_per_class, 2_000);
        // 10 classes x 20 angles x 5 levels.
        assert_eq!(10 * gen.test_angles * gen.test_lambdas.len(), 1_000);
    }
}
