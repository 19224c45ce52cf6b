use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::tensor::Tensor;

/// Square-kernel convolution whose weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub stride: usize,
    pub pad: usize,
}

/// How fresh convolution weights are drawn.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f32),
    /// He initialization for ReLU networks, σ = sqrt(2 / fan_in).
    He,
}

impl Init {
    fn std(self, fan_in: usize) -> f32 {
        match self {
            Init::Normal(s) => s,
            Init::He => (2.0 / fan_in as f32).sqrt(),
        }
    }
}

pub fn normal_tensor<R: Rng>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let std = init.std(in_c * kernel * kernel);
        let weight = store.push(format!("{name}.weight"), normal_tensor(&[out_c, in_c, kernel, kernel], std, rng));
        let bias = bias.then(|| store.push(format!("{name}.bias"), Tensor::zeros(&[out_c])));
        Self { weight, bias, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Var {
        let w = g.param(store, self.weight, trainable);
        let b = self.bias.map(|b| g.param(store, b, trainable));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Fully connected layer `[n, in] -> [n, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        // Glorot-style scale keeps initial logits near zero.
        let std = (1.0 / inputs as f32).sqrt();
        let weight = store.push(format!("{name}.weight"), normal_tensor(&[outputs, inputs], std, rng));
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Var {
        let w = g.param(store, self.weight, trainable);
        let b = g.param(store, self.bias, trainable);
        g.linear(x, w, b)
    }
}
