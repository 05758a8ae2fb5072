//! The two alternating training objectives with their gradients: the
//! segmenter + extractor objective (weighted total loss, critic frozen)
//! and the critic objective (`-W + gp_lambda * penalty`, features frozen).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::losses::{
    bce_loss_grad, branch_loss_grad, dice_loss_grad, gradient_penalty, match_batches, total_loss,
    wasserstein_estimate, LossReport, LossWeights,
};
use crate::models::{Discriminator, FeatureExtractor, SegModel};
use crate::params::Grads;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One optimization batch. `masks` and `labels` are the flattened targets of
/// `labeled` (sample-major).
pub struct StepBatch<'a> {
    pub labeled: &'a Tensor,
    pub masks: &'a [u8],
    pub labels: &'a [u32],
    pub unlabeled: &'a Tensor,
}

impl StepBatch<'_> {
    fn check(&self) -> Result<()> {
        if self.labeled.batch() == 0 || self.unlabeled.batch() == 0 {
            return Err(NnError::EmptyBatch);
        }
        let n = self.labeled.len();
        if self.masks.len() != n || self.labels.len() != n {
            return Err(NnError::Shape(format!(
                "{} mask and {} label values for {n} image voxels",
                self.masks.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }
}

pub struct GeneratorStep {
    pub report: LossReport,
    pub seg_grads: Grads,
    pub fx_grads: Grads,
    /// Some sample had no branch voxels, so its branch term was skipped.
    pub branch_degenerate: bool,
}

fn finite(component: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NnError::NonFinite { component, value })
    }
}

/// Supervised losses averaged over samples, with dL/dprob.
fn supervised(probs: &Tensor, batch: &StepBatch, weights: &LossWeights) -> Result<(f64, f64, f64, bool, Tensor)> {
    let b = probs.batch();
    let v = probs.len() / b;
    let mut grad = Tensor::zeros(probs.shape());
    let (mut dice, mut bce, mut branch) = (0.0, 0.0, 0.0);
    let mut degenerate = false;
    let mut branch_samples = 0usize;
    let mut branch_grads = Vec::with_capacity(b);
    for s in 0..b {
        let p = probs.sample(s);
        let m = &batch.masks[s * v..(s + 1) * v];
        let l = &batch.labels[s * v..(s + 1) * v];
        let (d, gd) = dice_loss_grad(p, m, weights.smooth)?;
        let (c, gc) = bce_loss_grad(p, m)?;
        let (br, gb) = branch_loss_grad(p, l, weights.smooth, weights.branch_mean_per_branch)?;
        dice += d / b as f64;
        bce += c / b as f64;
        for ((o, x), y) in grad.sample_mut(s).iter_mut().zip(&gd).zip(&gc) {
            *o = (weights.w_dice * x + weights.w_bce * y) / b as f64;
        }
        if br.degenerate {
            degenerate = true;
        } else {
            branch += br.value;
            branch_samples += 1;
        }
        branch_grads.push((br.degenerate, gb));
    }
    if branch_samples > 0 {
        branch /= branch_samples as f64;
        for (s, (deg, gb)) in branch_grads.into_iter().enumerate() {
            if !deg {
                for (o, g) in grad.sample_mut(s).iter_mut().zip(gb) {
                    *o += weights.w_branch * g / branch_samples as f64;
                }
            }
        }
    }
    Ok((dice, bce, branch, degenerate, grad))
}

/// Loss report and gradients of the weighted total loss with respect to the
/// segmenter and the feature extractor. The penalty enters the report; its
/// gradient with respect to the features vanishes because the critic is
/// piecewise linear (its input gradient is locally constant).
pub fn generator_step(
    seg: &SegModel,
    fx: &FeatureExtractor,
    critic: &Discriminator,
    batch: &StepBatch,
    weights: &LossWeights,
    gp_seed: u64,
) -> Result<GeneratorStep> {
    batch.check()?;
    let mut tape = Tape::new(seg.params());
    let x = tape.input(batch.labeled.clone());
    let p = seg.forward(&mut tape, x)?;
    let (dice, bce, branch, branch_degenerate, dprob) = supervised(tape.value(p), batch, weights)?;
    let seg_grads = tape.backward(vec![(p, dprob)])?.params;

    let mut ftape = Tape::new(fx.params());
    let xl = ftape.input(batch.labeled.clone());
    let xu = ftape.input(batch.unlabeled.clone());
    let fl = fx.forward(&mut ftape, xl)?;
    let fu = fx.forward(&mut ftape, xu)?;
    let cl = critic.forward(ftape.value(fl))?;
    let cu = critic.forward(ftape.value(fu))?;
    let wasserstein = wasserstein_estimate(&cl.scores, &cu.scores)?;

    let mut rng = ChaCha8Rng::seed_from_u64(gp_seed);
    let (mu, ml) = match_batches(ftape.value(fu), ftape.value(fl), &mut rng);
    let penalty = gradient_penalty(critic, &mu, &ml, weights.gp_max_norm, &mut rng)?.penalty;

    let report_parts = LossReport {
        dice: finite("dice", dice)?,
        bce: finite("bce", bce)?,
        branch: finite("branch", branch)?,
        wasserstein: finite("wasserstein", wasserstein)?,
        penalty: finite("penalty", penalty)?,
        total: 0.0,
    };
    let total = total_loss(&report_parts, weights)?;

    let (bl, bu) = (cl.scores.len() as f64, cu.scores.len() as f64);
    let dl = vec![-weights.w_wd / bl; cl.scores.len()];
    let du = vec![weights.w_wd / bu; cu.scores.len()];
    let gl = critic.backward(&cl, &dl, true)?.1.expect("input gradient");
    let gu = critic.backward(&cu, &du, true)?.1.expect("input gradient");
    let fx_grads = ftape.backward(vec![(fl, gl), (fu, gu)])?.params;

    Ok(GeneratorStep {
        report: LossReport { total, ..report_parts },
        seg_grads,
        fx_grads,
        branch_degenerate,
    })
}

pub struct CriticStep {
    /// `-W + gp_lambda * penalty`, the quantity the critic minimizes.
    pub objective: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub grads: Grads,
}

/// Critic objective on frozen features of the two batches.
pub fn critic_step(
    critic: &Discriminator,
    labeled_features: &Tensor,
    unlabeled_features: &Tensor,
    weights: &LossWeights,
    gp_seed: u64,
) -> Result<CriticStep> {
    let cl = critic.forward(labeled_features)?;
    let cu = critic.forward(unlabeled_features)?;
    let wasserstein = finite("wasserstein", wasserstein_estimate(&cl.scores, &cu.scores)?)?;
    let (bl, bu) = (cl.scores.len() as f64, cu.scores.len() as f64);
    let mut grads = critic.backward(&cl, &vec![1.0 / bl; cl.scores.len()], false)?.0;
    let gu = critic.backward(&cu, &vec![-1.0 / bu; cu.scores.len()], false)?.0;
    grads.add_assign(&gu);

    let mut rng = ChaCha8Rng::seed_from_u64(gp_seed);
    let (mu, ml) = match_batches(unlabeled_features, labeled_features, &mut rng);
    let gp = gradient_penalty(critic, &mu, &ml, weights.gp_max_norm, &mut rng)?;
    let penalty = finite("penalty", gp.penalty)?;
    if weights.gp_lambda > 0.0 {
        let cache = critic.forward(&gp.interpolates)?;
        let mut pg = critic.input_gradient_param_grads(&cache, &gp.dpenalty_dgrad)?;
        pg.scale(weights.gp_lambda);
        grads.add_assign(&pg);
    }
    Ok(CriticStep {
        objective: -wasserstein + weights.gp_lambda * penalty,
        wasserstein,
        penalty,
        grads,
    })
}
