use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{conv3d, conv3d_input_grad, conv3d_weight_grad, ConvSpec};
use crate::error::{NnError, Result};
use crate::params::{Grads, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Anything that maps a feature batch to one score per sample and can
/// differentiate the summed score with respect to its input.
pub trait Critic {
    fn scores(&self, features: &Tensor) -> Result<Vec<f64>>;
    /// d(sum of scores)/d(features).
    fn input_gradients(&self, features: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            in_channels: 8,
            channels: 8,
            seed: 0,
        }
    }
}

/// Five convolutions, ReLU after the first four (all stride 2), then a
/// global mean to one scalar per sample. Piecewise linear in its input.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: CriticConfig,
    params: ParamSet,
    layers: Vec<(ConvSpec, ParamId, ParamId)>,
}

/// Forward state kept for the backward passes.
#[derive(Debug, Clone)]
pub struct CriticCache {
    /// Inputs of each layer (h0 = features, h1..h4 post-ReLU).
    inputs: Vec<Tensor>,
    /// Sign pattern of the first four pre-activations.
    masks: Vec<Vec<bool>>,
    out_shape: [usize; 5],
    pub scores: Vec<f64>,
}

impl Discriminator {
    pub fn new(config: &CriticConfig) -> Result<Self> {
        if config.in_channels == 0 || config.channels == 0 {
            return Err(NnError::Config("critic widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let c = config.channels;
        let widths = [config.in_channels, c, 2 * c, 4 * c, 4 * c, 1];
        let mut layers = Vec::with_capacity(5);
        for k in 0..5 {
            let mut spec = ConvSpec::new(widths[k], widths[k + 1], 3);
            if k < 4 {
                spec = spec.stride(2);
            }
            let w = ps.kaiming(
                &mut rng,
                &format!("critic.conv{}.w", k + 1),
                vec![spec.cout, spec.cin, 3, 3, 3],
                spec.k_len(),
            );
            let b = ps.constant(&format!("critic.conv{}.b", k + 1), vec![spec.cout], 0.0);
            layers.push((spec, w, b));
        }
        Ok(Self {
            config: config.clone(),
            params: ps,
            layers,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, features: &Tensor) -> Result<CriticCache> {
        if features.batch() == 0 {
            return Err(NnError::EmptyBatch);
        }
        let mut inputs = vec![features.clone()];
        let mut masks = Vec::with_capacity(4);
        let mut h = features.clone();
        for (k, &(spec, w, b)) in self.layers.iter().enumerate() {
            let mut a = conv3d(&h, self.params.get(w), Some(self.params.get(b)), spec)?;
            if k < 4 {
                masks.push(a.data().iter().map(|&v| v > 0.0).collect());
                for v in a.data_mut() {
                    *v = v.max(0.0);
                }
                inputs.push(a.clone());
            }
            h = a;
        }
        let n = h.voxels() as f64;
        let scores = (0..h.batch()).map(|b| h.sample(b).iter().sum::<f64>() / n).collect();
        Ok(CriticCache {
            inputs,
            masks,
            out_shape: h.shape(),
            scores,
        })
    }

    /// dS/d(last pre-activation) for per-sample score weights `dscore`.
    fn head_seed(&self, cache: &CriticCache, dscore: &[f64]) -> Tensor {
        let mut u = Tensor::zeros(cache.out_shape);
        let n = u.voxels() as f64;
        for (b, &d) in dscore.iter().enumerate() {
            u.sample_mut(b).fill(d / n);
        }
        u
    }

    fn apply_mask(t: &mut Tensor, mask: &[bool]) {
        for (v, &m) in t.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
    }

    /// Backpropagates per-sample score weights. Returns parameter gradients
    /// and, if requested, the gradient with respect to the features.
    pub fn backward(&self, cache: &CriticCache, dscore: &[f64], want_input: bool) -> Result<(Grads, Option<Tensor>)> {
        let mut grads = self.params.zero_grads();
        let mut u = self.head_seed(cache, dscore);
        for k in (0..5).rev() {
            let (spec, w, b) = self.layers[k];
            let x = &cache.inputs[k];
            let mut gb = std::mem::take(&mut grads.values[b.0]);
            conv3d_weight_grad(x, &u, spec, grads.get_mut(w), Some(&mut gb))?;
            grads.values[b.0] = gb;
            if k == 0 && !want_input {
                return Ok((grads, None));
            }
            let mut gx = conv3d_input_grad(&u, self.params.get(w), spec, x.shape())?;
            if k == 0 {
                return Ok((grads, Some(gx)));
            }
            Self::apply_mask(&mut gx, &cache.masks[k - 1]);
            u = gx;
        }
        unreachable!("loop returns at the first layer")
    }

    /// Gradient of the summed score with respect to the features.
    pub fn input_gradient(&self, cache: &CriticCache) -> Result<Tensor> {
        let ones = vec![1.0; cache.scores.len()];
        Ok(self.backward(cache, &ones, true)?.1.expect("input gradient requested"))
    }

    /// Parameter gradient of L(g), where g = d(sum of scores)/d(features)
    /// and `dl_dg` = dL/dg. The activation pattern is locally constant, so
    /// g is multilinear in the layer weights and biases do not enter it.
    pub fn input_gradient_param_grads(&self, cache: &CriticCache, dl_dg: &Tensor) -> Result<Grads> {
        let ones = vec![1.0; cache.scores.len()];
        // u[k] = d(sum of scores)/d(pre-activation of layer k+1).
        let mut u = vec![self.head_seed(cache, &ones)];
        for k in (1..5).rev() {
            let (spec, w, _) = self.layers[k];
            let mut gx = conv3d_input_grad(u.last().unwrap(), self.params.get(w), spec, cache.inputs[k].shape())?;
            Self::apply_mask(&mut gx, &cache.masks[k - 1]);
            u.push(gx);
        }
        u.reverse();
        let mut grads = self.params.zero_grads();
        let mut a = dl_dg.clone();
        for k in 0..5 {
            let (spec, w, _) = self.layers[k];
            conv3d_weight_grad(&a, &u[k], spec, grads.get_mut(w), None)?;
            if k < 4 {
                let mut next = conv3d(&a, self.params.get(w), None, spec)?;
                Self::apply_mask(&mut next, &cache.masks[k]);
                a = next;
            }
        }
        Ok(grads)
    }

    pub(crate) fn from_parts(config: CriticConfig, params: ParamSet) -> Result<Self> {
        let mut m = Self::new(&config)?;
        m.params.replace_values(params)?;
        Ok(m)
    }
}

impl Critic for Discriminator {
    fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.scores)
    }

    fn input_gradients(&self, features: &Tensor) -> Result<Tensor> {
        let cache = self.forward(features)?;
        self.input_gradient(&cache)
    }
}

/// f(x) = <w, x> per sample; the analytic reference critic.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCritic {
    pub weights: Vec<f64>,
}

impl LinearCritic {
    fn check(&self, features: &Tensor) -> Result<()> {
        if features.batch() == 0 {
            return Err(NnError::EmptyBatch);
        }
        if features.sample(0).len() != self.weights.len() {
            return Err(NnError::Shape(format!(
                "linear critic has {} weights for samples of {} values",
                self.weights.len(),
                features.sample(0).len()
            )));
        }
        Ok(())
    }
}

impl Critic for LinearCritic {
    fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        self.check(features)?;
        Ok((0..features.batch())
            .map(|b| features.sample(b).iter().zip(&self.weights).map(|(x, w)| x * w).sum())
            .collect())
    }

    fn input_gradients(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        let mut g = Tensor::zeros(features.shape());
        for b in 0..features.batch() {
            g.sample_mut(b).copy_from_slice(&self.weights);
        }
        Ok(g)
    }
}
