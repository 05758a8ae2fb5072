//! Patch scoring and batch selection for the random, least-confidence,
//! entropy and Wasserstein-discriminative (wd) strategies.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wdunet_core::Pool;
use wdunet_nn::{Critic, FeatureExtractor, SegModel, Tensor};

use crate::error::{AlError, Result};
use crate::train::Learner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    LeastConfidence,
    Entropy,
    Wd,
}

impl StrategyName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::LeastConfidence => "least_confidence",
            Self::Entropy => "entropy",
            Self::Wd => "wd",
        }
    }
}

/// Batch size and seed are supplied per round by the experiment loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub name: StrategyName,
    pub c_sel: f64,
    pub w_l2: f64,
    pub w_l1: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            name: StrategyName::Wd,
            c_sel: 1.0,
            w_l2: 0.5,
            w_l1: 0.5,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.c_sel > 0.0 && self.c_sel.is_finite()) {
            errs.push(format!("strategy.c_sel = {} must be positive", self.c_sel));
        }
        for (k, v) in [("w_l2", self.w_l2), ("w_l1", self.w_l1)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("strategy.{k} = {v} must be non-negative"));
            }
        }
        if self.name == StrategyName::Wd && !(self.w_l2 + self.w_l1 > 0.0) {
            errs.push("strategy.w_l2 + strategy.w_l1 must be positive for the wd strategy".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub index: usize,
    pub uncertainty: f64,
    pub diversity: f64,
    pub total: f64,
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AlError::Config(format!("probability {p} outside [0, 1]")))
    }
}

/// `w_l2 (1 - ||q||^2) + w_l1 (1 - max q)` for `q = (p, 1 - p)`.
pub fn voxel_uncertainty(p: f64, w_l2: f64, w_l1: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(w_l2 * 2.0 * p * (1.0 - p) + w_l1 * p.min(1.0 - p))
}

fn voxel_mean(probs: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(AlError::Config("cannot score an empty patch".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        check_probability(p)?;
        sum += f(p);
    }
    Ok(sum / probs.len() as f64)
}

pub fn score_uncertainty(probs: &[f64], w_l2: f64, w_l1: f64) -> Result<f64> {
    voxel_mean(probs, |p| w_l2 * 2.0 * p * (1.0 - p) + w_l1 * p.min(1.0 - p))
}

pub fn score_entropy(probs: &[f64]) -> Result<f64> {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    voxel_mean(probs, |p| h(p) + h(1.0 - p))
}

pub fn score_least_confidence(probs: &[f64]) -> Result<f64> {
    voxel_mean(probs, |p| 1.0 - p.max(1.0 - p))
}

/// Critic score of the patch's extracted features.
pub fn score_diversity<C: Critic + ?Sized>(critic: &C, fx: &FeatureExtractor, image: &Tensor) -> Result<f64> {
    let f = fx.extract_features(image)?;
    Ok(critic.scores(&f)?[0])
}

/// Indices of `scores` ordered by descending total, ties by ascending patch index.
pub fn rank(scores: &[QueryScore]) -> Vec<QueryScore> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| {
        b.total
            .partial_cmp(&a.total)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen indices in selection order.
    pub indices: Vec<usize>,
    /// Every scored candidate (empty for the random strategy).
    pub scores: Vec<QueryScore>,
}

fn segment_probs(seg: &SegModel, image: &Tensor) -> Result<Vec<f64>> {
    Ok(seg.segment(image)?.into_vec())
}

/// Chooses `batch_size` unlabeled indices.
pub fn select_batch(
    strategy: &StrategyConfig,
    batch_size: usize,
    seed: u64,
    pool: &Pool,
    learner: &Learner,
) -> Result<Selection> {
    let u = pool.unlabeled();
    if u.is_empty() {
        return Err(AlError::EmptyUnlabeled);
    }
    if batch_size > u.len() {
        return Err(AlError::BatchTooLarge {
            requested: batch_size,
            available: u.len(),
        });
    }
    if strategy.name == StrategyName::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = index::sample(&mut rng, u.len(), batch_size);
        return Ok(Selection {
            indices: picks.into_iter().map(|k| u[k]).collect(),
            scores: Vec::new(),
        });
    }
    let mut scores = Vec::with_capacity(u.len());
    for &i in u {
        let img = pool.query_image(i)?;
        let x = Tensor::from_volumes(img.dims(), [img.as_slice()])?;
        let probs = segment_probs(&learner.seg, &x)?;
        let s = match strategy.name {
            StrategyName::LeastConfidence => {
                let v = score_least_confidence(&probs)?;
                QueryScore { index: i, uncertainty: v, diversity: 0.0, total: v }
            }
            StrategyName::Entropy => {
                let v = score_entropy(&probs)?;
                QueryScore { index: i, uncertainty: v, diversity: 0.0, total: v }
            }
            StrategyName::Wd => {
                let unc = score_uncertainty(&probs, strategy.w_l2, strategy.w_l1)?;
                let div = score_diversity(&learner.critic, &learner.fx, &x)?;
                QueryScore {
                    index: i,
                    uncertainty: unc,
                    diversity: div,
                    total: strategy.c_sel * unc - div,
                }
            }
            StrategyName::Random => unreachable!("handled above"),
        };
        scores.push(s);
    }
    let indices = rank(&scores).iter().take(batch_size).map(|s| s.index).collect();
    Ok(Selection { indices, scores })
}

/// `index,uncertainty,diversity,total`, one row per candidate in index order.
pub fn scores_csv(scores: &[QueryScore]) -> String {
    let mut rows: Vec<&QueryScore> = scores.iter().collect();
    rows.sort_by_key(|s| s.index);
    let mut out = String::from("index,uncertainty,diversity,total\n");
    for s in rows {
        let _ = writeln!(out, "{},{},{},{}", s.index, s.uncertainty, s.diversity, s.total);
    }
    out
}

pub fn write_scores_csv(path: &Path, scores: &[QueryScore]) -> Result<()> {
    std::fs::write(path, scores_csv(scores)).map_err(AlError::io(path))
}
