use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Conv;
use crate::conv::ConvSpec;
use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Width of the full-resolution stage; the downsampled stage uses twice this.
    pub channels: usize,
    pub feature_channels: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            feature_channels: 8,
            seed: 0,
        }
    }
}

/// One downsampling stage, one upsampling stage and a skip connection,
/// projected to `feature_channels` by a 1x1 convolution.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    params: ParamSet,
    stages: [(ConvSpec, ParamId, ParamId, ParamId); 2],
    out: Conv,
}

impl FeatureExtractor {
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        if config.channels == 0 || config.feature_channels == 0 {
            return Err(NnError::Config("feature extractor widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let c = config.channels;
        let mut stage = |name: &str, cin: usize, cout: usize| {
            let spec = ConvSpec::new(cin, cout, 3);
            let w = ps.kaiming(&mut rng, &format!("{name}.w"), vec![cout, cin, 3, 3, 3], spec.k_len());
            let g = ps.constant(&format!("{name}.gamma"), vec![cout], 1.0);
            let b = ps.constant(&format!("{name}.beta"), vec![cout], 0.0);
            (spec, w, g, b)
        };
        let stages = [stage("fx.full", 1, c), stage("fx.down", c, 2 * c)];
        let out = Conv::new(&mut ps, &mut rng, "fx.out", ConvSpec::new(3 * c, config.feature_channels, 1));
        Ok(Self {
            config: config.clone(),
            params: ps,
            stages,
            out,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn stage(&self, tape: &mut Tape, x: Var, i: usize) -> Result<Var> {
        let (spec, w, g, b) = self.stages[i];
        let c = tape.conv(x, w, None, spec)?;
        let n = tape.instance_norm(c, g, b);
        Ok(tape.relu(n))
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape[1] != 1 || shape[0] == 0 {
            return Err(NnError::Shape(format!("feature extractor expects (B>0, 1, z, y, x), got {shape:?}")));
        }
        let dims = [shape[2], shape[3], shape[4]];
        if dims.iter().any(|&d| d % 2 != 0) {
            return Err(NnError::Divisibility { dims, factor: 2 });
        }
        let full = self.stage(tape, x, 0)?;
        let pooled = tape.max_pool(full, [2; 3])?;
        let down = self.stage(tape, pooled, 1)?;
        let up = tape.upsample(down, dims);
        let cat = tape.concat(&[full, up])?;
        self.out.forward(tape, cat)
    }

    /// Feature maps of shape (B, feature_channels, z, y, x).
    pub fn extract_features(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let x = tape.input(images.clone());
        let f = self.forward(&mut tape, x)?;
        Ok(tape.value(f).clone())
    }

    pub(crate) fn from_parts(config: FeatureConfig, params: ParamSet) -> Result<Self> {
        let mut m = Self::new(&config)?;
        m.params.replace_values(params)?;
        Ok(m)
    }
}
