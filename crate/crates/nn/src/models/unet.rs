use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conv, ConvBlock};
use crate::conv::ConvSpec;
use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet3d,
    Ceunet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub base_channels: usize,
    pub depth_levels: usize,
    pub dac_dilations: Vec<usize>,
    pub rmp_pool_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Unet3d,
            base_channels: 8,
            depth_levels: 3,
            dac_dilations: vec![1, 3, 5],
            rmp_pool_sizes: vec![2, 3, 5, 6],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.base_channels == 0 {
            return bad("base_channels must be positive");
        }
        if self.depth_levels == 0 {
            return bad("depth_levels must be positive");
        }
        if self.depth_levels > 8 {
            return bad("depth_levels must be at most 8");
        }
        if self.arch == Arch::Ceunet {
            if self.dac_dilations.is_empty() || self.dac_dilations.contains(&0) {
                return bad("dac_dilations must be a non-empty list of positive integers");
            }
            if self.rmp_pool_sizes.is_empty() || self.rmp_pool_sizes.contains(&0) {
                return bad("rmp_pool_sizes must be a non-empty list of positive integers");
            }
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth_levels - 1)
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let f = self.divisor();
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(NnError::Divisibility { dims, factor: f });
        }
        Ok(())
    }
}

/// Parallel dilated convolutions summed onto a residual path.
#[derive(Debug, Clone)]
struct Dac {
    branches: Vec<Conv>,
}

impl Dac {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut acc = x;
        for conv in &self.branches {
            let y = conv.forward(tape, x)?;
            let r = tape.relu(y);
            acc = tape.add(acc, r)?;
        }
        Ok(acc)
    }
}

/// Multi-size max pooling, each reduced to one channel, upsampled back and
/// concatenated after the input.
#[derive(Debug, Clone)]
struct Rmp {
    sizes: Vec<usize>,
    reducers: Vec<Conv>,
}

impl Rmp {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let dims = tape.value(x).spatial();
        let mut parts = vec![x];
        for (&s, conv) in self.sizes.iter().zip(&self.reducers) {
            let k = [s.min(dims[0]), s.min(dims[1]), s.min(dims[2])];
            let p = tape.max_pool(x, k)?;
            let r = conv.forward(tape, p)?;
            parts.push(tape.upsample(r, dims));
        }
        tape.concat(&parts)
    }
}

/// 3D U-Net (optionally with the context-encoder bottleneck).
#[derive(Debug, Clone)]
pub struct SegModel {
    config: ModelConfig,
    params: ParamSet,
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    dac: Option<Dac>,
    rmp: Option<Rmp>,
    head: Conv,
}

pub fn build_segmenter(config: &ModelConfig) -> Result<SegModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = ParamSet::new();
    let width = |i: usize| config.base_channels << i;
    let levels = config.depth_levels;

    let mut encoder = Vec::with_capacity(levels);
    for i in 0..levels {
        let cin = if i == 0 { 1 } else { width(i - 1) };
        encoder.push(ConvBlock::new(&mut ps, &mut rng, &format!("enc{i}"), cin, width(i)));
    }
    let mut bottom = width(levels - 1);
    let (mut dac, mut rmp) = (None, None);
    if config.arch == Arch::Ceunet {
        dac = Some(Dac {
            branches: config
                .dac_dilations
                .iter()
                .map(|&d| {
                    let spec = ConvSpec::new(bottom, bottom, 3).dilated(d);
                    Conv::new(&mut ps, &mut rng, &format!("dac.d{d}"), spec)
                })
                .collect(),
        });
        rmp = Some(Rmp {
            sizes: config.rmp_pool_sizes.clone(),
            reducers: config
                .rmp_pool_sizes
                .iter()
                .map(|&s| Conv::new(&mut ps, &mut rng, &format!("rmp.p{s}"), ConvSpec::new(bottom, 1, 1)))
                .collect(),
        });
        bottom += config.rmp_pool_sizes.len();
    }
    let mut decoder = Vec::with_capacity(levels.saturating_sub(1));
    let mut below = bottom;
    for i in (0..levels - 1).rev() {
        decoder.push(ConvBlock::new(&mut ps, &mut rng, &format!("dec{i}"), below + width(i), width(i)));
        below = width(i);
    }
    let head = Conv::new(&mut ps, &mut rng, "head", ConvSpec::new(below, 1, 1));
    Ok(SegModel {
        config: config.clone(),
        params: ps,
        encoder,
        decoder,
        dac,
        rmp,
        head,
    })
}

impl SegModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Weight and bias of the final 1x1 convolution.
    pub fn head_params(&self) -> [ParamId; 2] {
        [self.head.w, self.head.b]
    }

    fn check_input(&self, shape: [usize; 5]) -> Result<()> {
        if shape[1] != 1 {
            return Err(NnError::Shape(format!("segmenter expects 1 input channel, got {}", shape[1])));
        }
        if shape[0] == 0 {
            return Err(NnError::EmptyBatch);
        }
        self.config.check_dims([shape[2], shape[3], shape[4]])
    }

    /// Pre-sigmoid output on a tape built over [`Self::params`].
    pub fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut skips = Vec::new();
        let mut h = x;
        for (i, block) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = tape.max_pool(h, [2; 3])?;
            }
            h = block.forward(tape, h)?;
            skips.push(h);
        }
        skips.pop();
        if let Some(dac) = &self.dac {
            h = dac.forward(tape, h)?;
        }
        if let Some(rmp) = &self.rmp {
            h = rmp.forward(tape, h)?;
        }
        for block in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = tape.upsample(h, tape.value(skip).spatial());
            let cat = tape.concat(&[up, skip])?;
            h = block.forward(tape, cat)?;
        }
        self.head.forward(tape, h)
    }

    /// Foreground probabilities on a tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = self.logits(tape, x)?;
        Ok(tape.sigmoid(z))
    }

    /// Per-voxel foreground probability for a (B, 1, z, y, x) batch.
    pub fn segment(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.params);
        let x = tape.input(images.clone());
        let p = self.forward(&mut tape, x)?;
        Ok(tape.value(p).clone())
    }

    /// Output of the DAC stage alone, for shape checks.
    pub fn dac_output(&self, features: &Tensor) -> Result<Option<Tensor>> {
        let Some(dac) = &self.dac else { return Ok(None) };
        let mut tape = Tape::new(&self.params);
        let x = tape.input(features.clone());
        let y = dac.forward(&mut tape, x)?;
        Ok(Some(tape.value(y).clone()))
    }

    /// Channels entering the bottleneck stage.
    pub fn bottleneck_channels(&self) -> usize {
        self.config.base_channels << (self.config.depth_levels - 1)
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut m = build_segmenter(&config)?;
        m.params.replace_values(params)?;
        Ok(m)
    }
}
