#![allow(dead_code)]

use wdunet_al::dataset::{build_pool, Case, DataConfig};
use wdunet_al::experiment::{ExperimentConfig, LoopConfig, NetworkConfig};
use wdunet_al::{Learner, TrainConfig};
use wdunet_core::seed::derive_seed;
use wdunet_core::{generate_phantom, PhantomSpec, Pool};

pub fn small_cases(count: usize, dim: usize) -> Vec<Case> {
    (0..count)
        .map(|i| {
            let ph = generate_phantom(&PhantomSpec {
                dims: [dim; 3],
                depth: 1 + (i % 2) as u32,
                trunk_radius_vox: 2.0,
                segment_length_vox: dim as f64 * 0.45,
                seed: derive_seed(11, "phantom", i as u64),
                ..PhantomSpec::default()
            })
            .unwrap();
            Case {
                id: format!("case_{i:03}"),
                image: ph.image,
                mask: ph.mask,
                labels: ph.branch_labels,
                tree: ph.tree,
            }
        })
        .collect()
}

pub fn small_config(dim: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig {
            patch_shape: [dim; 3],
            stride: [dim; 3],
            ..DataConfig::default()
        },
        model: NetworkConfig {
            base_channels: 2,
            fx_channels: 2,
            feature_channels: 2,
            critic_channels: 2,
            ..NetworkConfig::default()
        },
        train: TrainConfig {
            epochs_per_round: 1,
            batch_size: 2,
            lr: 1e-2,
            ..TrainConfig::default()
        },
        experiment: LoopConfig {
            record_wall_time: false,
            ..LoopConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

pub fn small_pool(count: usize, dim: usize, seed: u64) -> Pool {
    let cfg = small_config(dim);
    build_pool(&small_cases(count, dim), &cfg.data, seed).unwrap()
}

pub fn small_learner(cfg: &ExperimentConfig) -> Learner {
    let s = cfg.experiment.seed;
    Learner::new(&cfg.model.segmenter(s), &cfg.model.extractor(s), &cfg.model.critic(s), &cfg.train).unwrap()
}
