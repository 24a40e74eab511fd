//! Parameterized layers and the parameter-visiting protocol.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Conv2dOptions, ConvTranspose2dOptions, Tensor};

/// Anything that owns named parameters.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Flattened `(name, tensor)` list in visiting order.
pub fn named_params(m: &dyn Module, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit_params(prefix, &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn set_trainable(m: &dyn Module, on: bool) {
    m.visit_params("", &mut |_, t| t.set_requires_grad(on));
}

pub fn zero_grads(m: &dyn Module) {
    m.visit_params("", &mut |_, t| t.zero_grad());
}

/// Copies parameter values from `src` into the identically named and shaped
/// parameters of `dst`.
pub fn copy_params(src: &dyn Module, dst: &dyn Module) -> Result<()> {
    let from = named_params(src, "");
    let to = named_params(dst, "");
    if from.len() != to.len() {
        return Err(Error::Config(format!("parameter count differs: {} vs {}", from.len(), to.len())));
    }
    for ((na, a), (nb, b)) in from.iter().zip(&to) {
        if na != nb || a.shape() != b.shape() {
            return Err(Error::Config(format!("cannot copy {na} {:?} into {nb} {:?}", a.shape(), b.shape())));
        }
        b.data_mut().copy_from_slice(&a.data());
    }
    Ok(())
}

/// `√(3·gain²/fan_in)` with `gain² = 2/(1 + 0.2²)`.
fn he_bound(fan_in: usize) -> f64 {
    (3.0 * 2.0 / (1.0 + 0.04) / fan_in as f64).sqrt()
}

fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub opts: Conv2dOptions,
}

impl Conv2d {
    /// He-uniform weights (gain for leaky-relu 0.2), zero bias.
    pub fn new(rng: &mut Rng, cin: usize, cout: usize, k: usize, opts: Conv2dOptions) -> Result<Self> {
        let fan_in = cin / opts.groups.max(1) * k * k;
        let weight = Tensor::param(uniform(rng, cout * fan_in, he_bound(fan_in)), &[cout, cin / opts.groups.max(1), k, k])?;
        let bias = Some(Tensor::param(vec![0.0; cout], &[cout])?);
        Ok(Self { weight, bias, opts })
    }

    /// Multiplies the weights by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Same-padded `k×k` convolution, stride 1.
    pub fn same(rng: &mut Rng, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Self::new(rng, cin, cout, k, Conv2dOptions::padded(k / 2))
    }

    pub fn pointwise(rng: &mut Rng, cin: usize, cout: usize) -> Result<Self> {
        Self::new(rng, cin, cout, 1, Conv2dOptions::default())
    }

    /// Depthwise `k×k` convolution with optional dilation, same padding.
    pub fn depthwise(rng: &mut Rng, channels: usize, k: usize, dilation: usize) -> Result<Self> {
        let opts = Conv2dOptions {
            stride: 1,
            padding: dilation * (k - 1) / 2,
            dilation,
            groups: channels,
        };
        Self::new(rng, channels, channels, k, opts)
    }

    pub fn zero_init(self) -> Self {
        self.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = &self.bias {
            b.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.opts.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.opts)
    }
}

impl Module for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Stride-2 `4×4` transposed convolution that doubles resolution.
#[derive(Debug)]
pub struct Upsample2x {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Upsample2x {
    pub fn new(rng: &mut Rng, cin: usize, cout: usize) -> Result<Self> {
        // Each output pixel of a stride-2 4×4 transpose sees 4 taps per input channel.
        let bound = he_bound(cin * 4);
        Ok(Self {
            weight: Tensor::param(uniform(rng, cin * cout * 16, bound), &[cin, cout, 4, 4])?,
            bias: Tensor::param(vec![0.0; cout], &[cout])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let opts = ConvTranspose2dOptions {
            stride: 2,
            padding: 1,
            output_padding: 0,
        };
        x.conv_transpose2d(&self.weight, Some(&self.bias), opts)
    }
}

impl Module for Upsample2x {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}

/// Layer normalization over `(C, H, W)` with per-channel affine.
#[derive(Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::param(vec![1.0; channels], &[channels])?,
            beta: Tensor::param(vec![0.0; channels], &[channels])?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
}

/// Initial weight scale of the last convolution in a residual branch.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

/// Two 3×3 convolutions with leaky-relu and an identity shortcut.
#[derive(Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new(rng: &mut Rng, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::same(rng, channels, channels, 3)?,
            conv2: Conv2d::same(rng, channels, channels, 3)?.scaled(RESIDUAL_INIT_SCALE),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&x.leaky_relu(0.2))?;
        let h = self.conv2.forward(&h.leaky_relu(0.2))?;
        x.add(&h)
    }
}

impl Module for ResBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }
}
