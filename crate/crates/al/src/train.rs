//! The alternating critic / segmenter training loop over a pool.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wdunet_core::Pool;
use wdunet_nn::objective::{critic_step, generator_step, StepBatch};
use wdunet_nn::{
    build_segmenter, Adam, AdamConfig, CriticConfig, Discriminator, FeatureConfig, FeatureExtractor, LossReport,
    LossWeights, ModelConfig, Persist, SegModel, Tensor,
};

use crate::error::{AlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    /// Adam step size for the segmenter and the feature extractor.
    pub lr: f64,
    pub lr_critic: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 2,
            batch_size: 2,
            critic_steps: 1,
            lr: 1e-3,
            lr_critic: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (k, v) in [
            ("epochs_per_round", self.epochs_per_round),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
        ] {
            if v == 0 {
                errs.push(format!("train.{k} must be positive"));
            }
        }
        for (k, v) in [("lr", self.lr), ("lr_critic", self.lr_critic)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("train.{k} = {v} must be positive"));
            }
        }
        errs
    }
}

/// The three networks and their optimizer states.
#[derive(Debug, Clone)]
pub struct Learner {
    pub seg: SegModel,
    pub fx: FeatureExtractor,
    pub critic: Discriminator,
    pub opt_seg: Adam,
    pub opt_fx: Adam,
    pub opt_critic: Adam,
}

const FILES: [&str; 6] = [
    "segmenter.bin",
    "extractor.bin",
    "critic.bin",
    "adam_segmenter.bin",
    "adam_extractor.bin",
    "adam_critic.bin",
];

impl Learner {
    pub fn new(model: &ModelConfig, fx: &FeatureConfig, critic: &CriticConfig, train: &TrainConfig) -> Result<Self> {
        let seg = build_segmenter(model)?;
        let fx = FeatureExtractor::new(fx)?;
        let critic = Discriminator::new(critic)?;
        Ok(Self {
            opt_seg: Adam::new(AdamConfig::with_lr(train.lr), seg.params()),
            opt_fx: Adam::new(AdamConfig::with_lr(train.lr), fx.params()),
            opt_critic: Adam::new(AdamConfig::with_lr(train.lr_critic), critic.params()),
            seg,
            fx,
            critic,
        })
    }

    pub fn file_names() -> &'static [&'static str] {
        &FILES
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.seg.save(&dir.join(FILES[0]))?;
        self.fx.save(&dir.join(FILES[1]))?;
        self.critic.save(&dir.join(FILES[2]))?;
        self.opt_seg.save(&dir.join(FILES[3]))?;
        self.opt_fx.save(&dir.join(FILES[4]))?;
        self.opt_critic.save(&dir.join(FILES[5]))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            seg: SegModel::load(&dir.join(FILES[0]))?,
            fx: FeatureExtractor::load(&dir.join(FILES[1]))?,
            critic: Discriminator::load(&dir.join(FILES[2]))?,
            opt_seg: Adam::load(&dir.join(FILES[3]))?,
            opt_fx: Adam::load(&dir.join(FILES[4]))?,
            opt_critic: Adam::load(&dir.join(FILES[5]))?,
        })
    }
}

fn image_batch(pool: &Pool, idx: &[usize]) -> Result<Tensor> {
    let imgs = idx.iter().map(|&i| pool.training_image(i)).collect::<Result<Vec<_>, _>>()?;
    let dims = imgs[0].dims();
    Ok(Tensor::from_volumes(dims, imgs.iter().map(|g| g.as_slice()))?)
}

fn target_batch(pool: &Pool, idx: &[usize]) -> Result<(Vec<u8>, Vec<u32>)> {
    let (mut masks, mut labels) = (Vec::new(), Vec::new());
    for &i in idx {
        let p = pool.training_target(i)?;
        masks.extend_from_slice(p.mask.as_slice());
        labels.extend_from_slice(p.branch_labels.as_slice());
    }
    Ok((masks, labels))
}

fn accumulate(acc: &mut LossReport, r: &LossReport) {
    acc.dice += r.dice;
    acc.bce += r.bce;
    acc.branch += r.branch;
    acc.wasserstein += r.wasserstein;
    acc.penalty += r.penalty;
    acc.total += r.total;
}

fn scaled(r: LossReport, s: f64) -> LossReport {
    LossReport {
        dice: r.dice * s,
        bce: r.bce * s,
        branch: r.branch * s,
        wasserstein: r.wasserstein * s,
        penalty: r.penalty * s,
        total: r.total * s,
    }
}

/// Trains for `epochs` passes over L. Each step makes `critic_steps` critic
/// updates on frozen features, then one segmenter + extractor update with
/// the critic frozen. Returns the mean report of the final epoch, or `None`
/// when `epochs` is 0. With U empty the Wasserstein terms are switched off.
pub fn train_epochs(
    learner: &mut Learner,
    pool: &Pool,
    weights: &LossWeights,
    train: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<Option<LossReport>> {
    if pool.labeled().is_empty() {
        return Err(AlError::EmptyLabeled);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adversarial = !pool.unlabeled().is_empty();
    let weights = if adversarial {
        weights.clone()
    } else {
        LossWeights {
            w_wd: 0.0,
            ..weights.clone()
        }
    };
    let mut last = None;
    for _ in 0..epochs {
        let mut order = pool.labeled().to_vec();
        order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        let mut steps = 0usize;
        for chunk in order.chunks(train.batch_size.max(1)) {
            let labeled = image_batch(pool, chunk)?;
            let (masks, labels) = target_batch(pool, chunk)?;
            let unlabeled = if adversarial {
                let u = pool.unlabeled();
                let picks: Vec<usize> = index::sample(&mut rng, u.len(), chunk.len().min(u.len()))
                    .into_iter()
                    .map(|k| u[k])
                    .collect();
                image_batch(pool, &picks)?
            } else {
                labeled.clone()
            };

            if adversarial {
                let fl = learner.fx.extract_features(&labeled)?;
                let fu = learner.fx.extract_features(&unlabeled)?;
                for _ in 0..train.critic_steps {
                    let cs = critic_step(&learner.critic, &fl, &fu, &weights, rng.random())?;
                    learner.opt_critic.step(learner.critic.params_mut(), &cs.grads)?;
                }
            }

            let batch = StepBatch {
                labeled: &labeled,
                masks: &masks,
                labels: &labels,
                unlabeled: &unlabeled,
            };
            let step = generator_step(&learner.seg, &learner.fx, &learner.critic, &batch, &weights, rng.random())?;
            learner.opt_seg.step(learner.seg.params_mut(), &step.seg_grads)?;
            if adversarial {
                learner.opt_fx.step(learner.fx.params_mut(), &step.fx_grads)?;
            }
            let mut report = step.report;
            if !adversarial {
                report.wasserstein = 0.0;
                report.penalty = 0.0;
            }
            accumulate(&mut acc, &report);
            steps += 1;
        }
        last = Some(scaled(acc, 1.0 / steps as f64));
    }
    Ok(last)
}
