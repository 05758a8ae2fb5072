//! Segmenter, feature extractor and critic networks.

mod critic;
mod fx;
mod unet;

use rand::Rng;

use crate::conv::ConvSpec;
use crate::error::Result;
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};

pub use critic::{Critic, CriticCache, CriticConfig, Discriminator, LinearCritic};
pub use fx::{FeatureConfig, FeatureExtractor};
pub use unet::{build_segmenter, Arch, ModelConfig, SegModel};

/// conv3 -> instance norm -> ReLU, twice.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    layers: [(ConvSpec, ParamId, ParamId, ParamId); 2],
}

impl ConvBlock {
    pub(crate) fn new(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Self {
        let mut layer = |i: usize, cin: usize| {
            let spec = ConvSpec::new(cin, cout, 3);
            let w = ps.kaiming(rng, &format!("{name}.conv{i}.w"), vec![cout, cin, 3, 3, 3], spec.k_len());
            let g = ps.constant(&format!("{name}.norm{i}.gamma"), vec![cout], 1.0);
            let b = ps.constant(&format!("{name}.norm{i}.beta"), vec![cout], 0.0);
            (spec, w, g, b)
        };
        let first = layer(1, cin);
        let second = layer(2, cout);
        Self {
            layers: [first, second],
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for &(spec, w, g, b) in &self.layers {
            let c = tape.conv(x, w, None, spec)?;
            let n = tape.instance_norm(c, g, b);
            x = tape.relu(n);
        }
        Ok(x)
    }
}

/// A convolution with bias and no normalization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub spec: ConvSpec,
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub(crate) fn new(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, spec: ConvSpec) -> Self {
        let w = ps.kaiming(
            rng,
            &format!("{name}.w"),
            vec![spec.cout, spec.cin, spec.kernel, spec.kernel, spec.kernel],
            spec.k_len(),
        );
        let b = ps.constant(&format!("{name}.b"), vec![spec.cout], 0.0);
        Self { spec, w, b }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv(x, self.w, Some(self.b), self.spec)
    }
}
