//! Segmentation losses, the Wasserstein estimate and the critic gradient
//! penalty. Each differentiable loss also has a `*_grad` form returning
//! dL/dpred.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::models::{Critic, FeatureExtractor};
use crate::tensor::Tensor;

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_dice: f64,
    pub w_bce: f64,
    pub w_branch: f64,
    pub w_wd: f64,
    pub smooth: f64,
    pub gp_lambda: f64,
    pub gp_max_norm: f64,
    /// Average per-branch recall instead of the pooled ratio.
    pub branch_mean_per_branch: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_dice: 1.0,
            w_bce: 1.0,
            w_branch: 1.0,
            w_wd: 1.0,
            smooth: 1e-5,
            gp_lambda: 1.0,
            gp_max_norm: 10.0,
            branch_mean_per_branch: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_dice", self.w_dice),
            ("w_bce", self.w_bce),
            ("w_branch", self.w_branch),
            ("w_wd", self.w_wd),
            ("gp_lambda", self.gp_lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NnError::Config(format!("{name} = {v} must be a non-negative number")));
            }
        }
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return Err(NnError::Config(format!("smooth = {} must be positive", self.smooth)));
        }
        if !(self.gp_max_norm > 0.0 && self.gp_max_norm.is_finite()) {
            return Err(NnError::Config(format!("gp_max_norm = {} must be positive", self.gp_max_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dice: f64,
    pub bce: f64,
    pub branch: f64,
    pub wasserstein: f64,
    pub penalty: f64,
    pub total: f64,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(NnError::Shape(format!("prediction has {a} voxels, target has {b}")));
    }
    Ok(())
}

/// `1 - (2 sum(p g) + s) / (sum p + sum g + s)`.
pub fn dice_loss(pred: &[f64], gt: &[u8], smooth: f64) -> Result<f64> {
    Ok(dice_loss_grad(pred, gt, smooth)?.0)
}

pub fn dice_loss_grad(pred: &[f64], gt: &[u8], smooth: f64) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), gt.len())?;
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        let g = f64::from(g);
        inter += p * g;
        total += p + g;
    }
    let (num, den) = (2.0 * inter + smooth, total + smooth);
    let grad = gt
        .iter()
        .map(|&g| -(2.0 * f64::from(g) * den - num) / (den * den))
        .collect();
    Ok((1.0 - num / den, grad))
}

/// Voxel-mean binary cross-entropy with predictions clamped to [eps, 1-eps].
pub fn bce_loss(pred: &[f64], gt: &[u8]) -> Result<f64> {
    Ok(bce_loss_grad(pred, gt)?.0)
}

pub fn bce_loss_grad(pred: &[f64], gt: &[u8]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), gt.len())?;
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &g) in pred.iter().zip(gt) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let g = f64::from(g);
        sum -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        let inside = p > BCE_EPS && p < 1.0 - BCE_EPS;
        grad.push(if inside { -(g / pc - (1.0 - g) / (1.0 - pc)) / n } else { 0.0 });
    }
    Ok((sum / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchLoss {
    pub value: f64,
    /// The label map had no branch voxels; the value is 0 by convention.
    pub degenerate: bool,
}

/// Recall-style loss over branch-labelled voxels:
/// `1 - (sum_b sum_v p_v [l_v = b] + s) / (sum_b sum_v [l_v = b] + s)`, or with
/// `mean_per_branch` the mean over branches of the per-branch ratio.
pub fn branch_loss(pred: &[f64], labels: &[u32], smooth: f64, mean_per_branch: bool) -> Result<BranchLoss> {
    Ok(branch_loss_grad(pred, labels, smooth, mean_per_branch)?.0)
}

pub fn branch_loss_grad(
    pred: &[f64],
    labels: &[u32],
    smooth: f64,
    mean_per_branch: bool,
) -> Result<(BranchLoss, Vec<f64>)> {
    check_len(pred.len(), labels.len())?;
    let mut grad = vec![0.0; pred.len()];
    let count = labels.iter().filter(|&&l| l > 0).count();
    if count == 0 {
        let loss = BranchLoss {
            value: 0.0,
            degenerate: true,
        };
        return Ok((loss, grad));
    }
    if !mean_per_branch {
        let hit: f64 = pred.iter().zip(labels).filter(|(_, &l)| l > 0).map(|(p, _)| p).sum();
        let den = count as f64 + smooth;
        for (g, &l) in grad.iter_mut().zip(labels) {
            if l > 0 {
                *g = -1.0 / den;
            }
        }
        let loss = BranchLoss {
            value: 1.0 - (hit + smooth) / den,
            degenerate: false,
        };
        return Ok((loss, grad));
    }
    let mut per: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
    for (&p, &l) in pred.iter().zip(labels) {
        if l > 0 {
            let e = per.entry(l).or_default();
            e.0 += p;
            e.1 += 1;
        }
    }
    let nb = per.len() as f64;
    let mean_ratio = per.values().map(|&(hit, n)| (hit + smooth) / (n as f64 + smooth)).sum::<f64>() / nb;
    for (g, &l) in grad.iter_mut().zip(labels) {
        if l > 0 {
            *g = -1.0 / (nb * (per[&l].1 as f64 + smooth));
        }
    }
    let loss = BranchLoss {
        value: 1.0 - mean_ratio,
        degenerate: false,
    };
    Ok((loss, grad))
}

/// `mean(unlabeled) - mean(labeled)`.
pub fn wasserstein_estimate(labeled: &[f64], unlabeled: &[f64]) -> Result<f64> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(mean(unlabeled) - mean(labeled))
}

/// Weighted composition of the loss components; `components.total` is ignored.
pub fn total_loss(components: &LossReport, weights: &LossWeights) -> Result<f64> {
    for (component, value) in [
        ("dice", components.dice),
        ("bce", components.bce),
        ("branch", components.branch),
        ("wasserstein", components.wasserstein),
        ("penalty", components.penalty),
    ] {
        if !value.is_finite() {
            return Err(NnError::NonFinite { component, value });
        }
    }
    Ok(weights.w_dice * components.dice
        + weights.w_bce * components.bce
        + weights.w_branch * components.branch
        + weights.w_wd * (components.wasserstein + weights.gp_lambda * components.penalty))
}

#[derive(Debug, Clone)]
pub struct PenaltyReport {
    pub penalty: f64,
    /// Per-sample gradient norms before clipping.
    pub norms: Vec<f64>,
    pub alphas: Vec<f64>,
    pub interpolates: Tensor,
    /// dPenalty / d(critic input gradient), for the critic's own update.
    pub dpenalty_dgrad: Tensor,
}

/// Mean over samples of `(min(||g_b||, max_norm) - 1)^2` and its derivative
/// with respect to `g`.
pub fn penalty_from_gradients(g: &Tensor, max_norm: f64) -> (f64, Vec<f64>, Tensor) {
    let b = g.batch();
    let mut d = Tensor::zeros(g.shape());
    let mut norms = Vec::with_capacity(b);
    let mut total = 0.0;
    for i in 0..b {
        let n = g.sample(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        let clipped = if n > max_norm { max_norm } else { n };
        total += (clipped - 1.0).powi(2);
        if n <= max_norm && n > 0.0 {
            let k = 2.0 * (n - 1.0) / (n * b as f64);
            for (o, &v) in d.sample_mut(i).iter_mut().zip(g.sample(i)) {
                *o = k * v;
            }
        }
    }
    (total / b as f64, norms, d)
}

/// Gradient penalty on random interpolates between two feature batches of
/// equal size: one `alpha ~ U[0, 1)` per sample,
/// `x = alpha * unlabeled + (1 - alpha) * labeled`.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    unlabeled: &Tensor,
    labeled: &Tensor,
    max_norm: f64,
    rng: &mut impl Rng,
) -> Result<PenaltyReport> {
    if unlabeled.batch() == 0 || labeled.batch() == 0 {
        return Err(NnError::EmptyBatch);
    }
    if unlabeled.shape() != labeled.shape() {
        return Err(NnError::Shape(format!(
            "interpolation needs equal shapes, got {:?} and {:?}",
            unlabeled.shape(),
            labeled.shape()
        )));
    }
    let alphas: Vec<f64> = (0..unlabeled.batch()).map(|_| rng.random::<f64>()).collect();
    let mut x = Tensor::zeros(unlabeled.shape());
    for (b, &a) in alphas.iter().enumerate() {
        let (u, l) = (unlabeled.sample(b), labeled.sample(b));
        for ((o, &uu), &ll) in x.sample_mut(b).iter_mut().zip(u).zip(l) {
            *o = a * uu + (1.0 - a) * ll;
        }
    }
    let g = critic.input_gradients(&x)?;
    let (penalty, norms, dpenalty_dgrad) = penalty_from_gradients(&g, max_norm);
    Ok(PenaltyReport {
        penalty,
        norms,
        alphas,
        interpolates: x,
        dpenalty_dgrad,
    })
}

/// Subsamples the larger batch (seeded, order kept) so both have the same size.
pub fn match_batches(a: &Tensor, b: &Tensor, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let n = a.batch().min(b.batch());
    let pick = |t: &Tensor, rng: &mut dyn rand::RngCore| {
        if t.batch() == n {
            return t.clone();
        }
        let mut idx = index::sample(rng, t.batch(), n).into_vec();
        idx.sort_unstable();
        t.select(&idx)
    };
    let a2 = pick(a, rng);
    let b2 = pick(b, rng);
    (a2, b2)
}

/// Penalty computed from image batches: both pass through the shared
/// feature extractor, the larger batch is subsampled, and the critic is
/// probed on feature-space interpolates.
pub fn gradient_penalty_images<C: Critic + ?Sized>(
    critic: &C,
    fx: &FeatureExtractor,
    unlabeled_images: &Tensor,
    labeled_images: &Tensor,
    max_norm: f64,
    seed: u64,
) -> Result<PenaltyReport> {
    if unlabeled_images.batch() == 0 || labeled_images.batch() == 0 {
        return Err(NnError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, l) = match_batches(unlabeled_images, labeled_images, &mut rng);
    let fu = fx.extract_features(&u)?;
    let fl = fx.extract_features(&l)?;
    gradient_penalty(critic, &fu, &fl, max_norm, &mut rng)
}
