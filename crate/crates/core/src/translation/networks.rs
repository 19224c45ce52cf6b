//! Encoder–decoder generator with skip connections and patch discriminator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Graph, Init, ParamStore, Var};

const LEAK: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Instance,
    /// Statistics over batch and space. Identical to `Instance` at batch size 1.
    Batch,
}

fn normalize(g: &mut Graph, x: Var, norm: Normalization) -> Var {
    match norm {
        Normalization::Instance => g.instance_norm(x),
        Normalization::Batch => g.batch_norm(x),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    /// Number of stride-2 down levels (mirrored by as many up levels).
    pub depth: usize,
    pub base_filters: usize,
    pub normalization: Normalization,
    pub channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_filters: 64,
            normalization: Normalization::Instance,
            channels: 3,
        }
    }
}

impl GeneratorSpec {
    /// Default depth for a given image side: 4 at 64 px, 6 at 256 px.
    pub fn for_side(side: usize) -> Self {
        let depth = if side >= 256 { 6 } else { 4 };
        Self { depth, ..Self::default() }
    }

    fn level_filters(&self, level: usize) -> usize {
        self.base_filters << level.min(3)
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 {
            return Err(Error::Config("generator depth and base_filters must be ≥ 1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("generator channels must be 1 or 3, got {}", self.channels)));
        }
        if !side.is_multiple_of(1 << self.depth) {
            return Err(Error::Config(format!(
                "image side {side} is not divisible by 2^{} required by generator depth",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Maps an image in `[−1, 1]` to an image of the same size in `[−1, 1]`.
///
/// Stride-2 encoder levels are mirrored by nearest-upsample + 3×3 decoder
/// levels; every decoder level is concatenated with the encoder activation at
/// the same resolution before moving up.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetGenerator {
    pub spec: GeneratorSpec,
    pub params: ParamStore,
    encoder: Vec<Conv2d>,
    decoder: Vec<Conv2d>,
    output: Conv2d,
}

impl UNetGenerator {
    pub fn new<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Self {
        let init = Init::Normal(0.02);
        let mut params = ParamStore::new();
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut in_c = spec.channels;
        for level in 0..spec.depth {
            let out_c = spec.level_filters(level);
            let bias = level == 0;
            encoder.push(Conv2d::new(&mut params, &format!("enc{level}"), in_c, out_c, 4, 2, 1, bias, init, rng));
            in_c = out_c;
        }
        let mut decoder = Vec::with_capacity(spec.depth - 1);
        for level in (0..spec.depth - 1).rev() {
            let out_c = spec.level_filters(level);
            decoder.push(Conv2d::new(&mut params, &format!("dec{level}"), in_c, out_c, 3, 1, 1, false, init, rng));
            in_c = 2 * out_c;
        }
        let output = Conv2d::new(&mut params, "out", in_c, spec.channels, 3, 1, 1, true, init, rng);
        Self {
            spec: spec.clone(),
            params,
            encoder,
            decoder,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let norm = self.spec.normalization;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (level, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(g, &self.params, h, trainable);
            if level > 0 {
                h = normalize(g, h, norm);
            }
            h = g.leaky_relu(h, LEAK);
            skips.push(h);
        }
        skips.pop();
        for conv in &self.decoder {
            let up = g.upsample2(h);
            let c = conv.forward(g, &self.params, up, trainable);
            let c = normalize(g, c, norm);
            let c = g.relu(c);
            h = g.concat(c, skips.pop().expect("one skip per decoder level"));
        }
        let up = g.upsample2(h);
        let out = self.output.forward(g, &self.params, up, trainable);
        g.tanh(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    /// Stride-2 layers; 3 gives the usual 70-pixel receptive field.
    pub n_layers: usize,
    pub base_filters: usize,
    pub channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            n_layers: 3,
            base_filters: 64,
            channels: 3,
        }
    }
}

impl DiscriminatorSpec {
    /// Receptive field in input pixels of one output score.
    pub fn receptive_field(&self) -> usize {
        // Two stride-1 4×4 layers on top of n_layers stride-2 4×4 layers.
        let mut rf = 1;
        for _ in 0..2 {
            rf += 3;
        }
        for _ in 0..self.n_layers {
            rf = (rf - 1) * 2 + 4;
        }
        rf
    }

    /// Side of the score map for a square input.
    pub fn score_side(&self, side: usize) -> usize {
        let mut s = side;
        for _ in 0..self.n_layers {
            s = (s + 2 - 4) / 2 + 1;
        }
        s - 2
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.n_layers == 0 || self.base_filters == 0 {
            return Err(Error::Config("discriminator n_layers and base_filters must be ≥ 1".into()));
        }
        if side >> self.n_layers < 3 {
            return Err(Error::Config(format!(
                "image side {side} too small for a {}-layer patch discriminator",
                self.n_layers
            )));
        }
        Ok(())
    }
}

/// Scores each receptive-field patch of an image as real (→1) or generated (→0).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore,
    layers: Vec<Conv2d>,
}

impl PatchDiscriminator {
    pub fn new<R: Rng>(spec: &DiscriminatorSpec, rng: &mut R) -> Self {
        let init = Init::Normal(0.02);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut in_c = spec.channels;
        for i in 0..spec.n_layers {
            let out_c = spec.base_filters << i.min(3);
            layers.push(Conv2d::new(&mut params, &format!("conv{i}"), in_c, out_c, 4, 2, 1, i == 0, init, rng));
            in_c = out_c;
        }
        let out_c = spec.base_filters << spec.n_layers.min(3);
        layers.push(Conv2d::new(&mut params, &format!("conv{}", spec.n_layers), in_c, out_c, 4, 1, 1, false, init, rng));
        layers.push(Conv2d::new(&mut params, "score", out_c, 1, 4, 1, 1, true, init, rng));
        Self {
            spec: spec.clone(),
            params,
            layers,
        }
    }

    /// Patch scores in `(0, 1)`, shape `[n, 1, s, s]`.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, conv) in self.layers.iter().enumerate() {
            h = conv.forward(g, &self.params, h, trainable);
            if i == last {
                break;
            }
            if i > 0 {
                h = g.instance_norm(h);
            }
            h = g.leaky_relu(h, LEAK);
        }
        g.sigmoid(h)
    }
}
