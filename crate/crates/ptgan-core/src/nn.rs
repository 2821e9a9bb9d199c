//! Layer containers: parameter storage plus graph-building forward passes.
//!
//! A network owns plain tensors. For each pass the parameters are bound into
//! the graph once ([`Sequential::bind`]), and the bound variables can then be
//! fed any number of inputs; gradients for a parameter used in several
//! forward applications accumulate on its single leaf. Parameter traversal
//! order is defined by layer order and is shared by `bind`,
//! `for_each_param`, and `for_each_param_mut`.

use crate::conv::{ConvGeom, PadMode};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// Gaussian weight init scale used by every network here.
pub const WEIGHT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub geom: ConvGeom,
}

impl ConvLayer {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
        rng: &mut R,
    ) -> Self {
        Self::with_std(in_channels, out_channels, kernel, stride, pad, pad_mode, WEIGHT_INIT_STD, rng)
    }

    /// He-scaled init for relu classifiers; the adversarial networks keep the
    /// fixed 0.02 convention.
    pub fn he<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (in_channels * kernel * kernel) as f64).sqrt();
        Self::with_std(in_channels, out_channels, kernel, stride, pad, pad_mode, std, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn with_std<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
        std: f64,
        rng: &mut R,
    ) -> Self {
        ConvLayer {
            weight: Tensor::randn(&[out_channels, in_channels, kernel, kernel], std, rng),
            bias: Tensor::zeros(&[out_channels]),
            geom: ConvGeom {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                pad_mode,
            },
        }
    }
}

/// Fractionally-strided convolution layer. The weight is stored in the
/// orientation of the ordinary convolution it is the adjoint of:
/// `[in_channels, out_channels, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTransposeLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub geom: ConvGeom,
}

impl ConvTransposeLayer {
    /// Maps `in_channels` to `out_channels` while doubling the spatial
    /// extent (stride-1/2, 3x3 kernels).
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        ConvTransposeLayer {
            weight: Tensor::randn(&[in_channels, out_channels, 3, 3], WEIGHT_INIT_STD, rng),
            bias: Tensor::zeros(&[out_channels]),
            geom: ConvGeom {
                in_channels: out_channels,
                out_channels: in_channels,
                kernel: 3,
                stride: 2,
                pad: 1,
                pad_mode: PadMode::Zeros,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl InstanceNormLayer {
    pub fn new(channels: usize) -> Self {
        InstanceNormLayer {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        LinearLayer {
            weight: Tensor::randn(&[in_dim, out_dim], WEIGHT_INIT_STD, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn he<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        LinearLayer {
            weight: Tensor::randn(&[in_dim, out_dim], (2.0 / in_dim as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool, vars: &mut Vec<Var>) {
        let w = if trainable { g.param(self.weight.clone()) } else { g.constant(self.weight.clone()) };
        let b = if trainable { g.param(self.bias.clone()) } else { g.constant(self.bias.clone()) };
        vars.push(w);
        vars.push(b);
    }

    pub fn forward_bound(&self, g: &mut Graph, vars: &[Var], cursor: &mut usize, x: Var) -> Var {
        let w = vars[*cursor];
        let b = vars[*cursor + 1];
        *cursor += 2;
        g.linear(x, w, b)
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(&Tensor)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    ConvTranspose(ConvTransposeLayer),
    InstanceNorm(InstanceNormLayer),
    Relu,
    LeakyRelu(f64),
    Tanh,
    /// y = x + body(x); the body must preserve shape.
    Residual(Vec<Layer>),
}

impl Layer {
    fn bind(&self, g: &mut Graph, trainable: bool, vars: &mut Vec<Var>) {
        let mut push = |g: &mut Graph, t: &Tensor| {
            let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            vars.push(v);
            v
        };
        match self {
            Layer::Conv(c) => {
                push(g, &c.weight);
                push(g, &c.bias);
            }
            Layer::ConvTranspose(c) => {
                push(g, &c.weight);
                push(g, &c.bias);
            }
            Layer::InstanceNorm(n) => {
                push(g, &n.gamma);
                push(g, &n.beta);
            }
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => {}
            Layer::Residual(body) => {
                for layer in body {
                    layer.bind(g, trainable, vars);
                }
            }
        }
    }

    fn forward_bound(&self, g: &mut Graph, vars: &[Var], cursor: &mut usize, x: Var) -> Var {
        match self {
            Layer::Conv(c) => {
                let w = vars[*cursor];
                let b = vars[*cursor + 1];
                *cursor += 2;
                g.conv2d(x, w, b, c.geom)
            }
            Layer::ConvTranspose(c) => {
                let w = vars[*cursor];
                let b = vars[*cursor + 1];
                *cursor += 2;
                g.conv2d_transpose(x, w, b, c.geom)
            }
            Layer::InstanceNorm(_) => {
                let gamma = vars[*cursor];
                let beta = vars[*cursor + 1];
                *cursor += 2;
                g.instance_norm(x, gamma, beta)
            }
            Layer::Relu => g.relu(x),
            Layer::LeakyRelu(slope) => g.leaky_relu(x, *slope),
            Layer::Tanh => g.tanh(x),
            Layer::Residual(body) => {
                let mut h = x;
                for layer in body {
                    h = layer.forward_bound(g, vars, cursor, h);
                }
                g.add(x, h)
            }
        }
    }

    fn for_each_param(&self, f: &mut impl FnMut(&Tensor)) {
        match self {
            Layer::Conv(c) => {
                f(&c.weight);
                f(&c.bias);
            }
            Layer::ConvTranspose(c) => {
                f(&c.weight);
                f(&c.bias);
            }
            Layer::InstanceNorm(n) => {
                f(&n.gamma);
                f(&n.beta);
            }
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => {}
            Layer::Residual(body) => {
                for layer in body {
                    layer.for_each_param(f);
                }
            }
        }
    }

    fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        match self {
            Layer::Conv(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::ConvTranspose(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::InstanceNorm(n) => {
                f(&mut n.gamma);
                f(&mut n.beta);
            }
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => {}
            Layer::Residual(body) => {
                for layer in body {
                    layer.for_each_param_mut(f);
                }
            }
        }
    }
}

/// Parameter variables of one network bound into a graph.
pub struct BoundNet {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet {
        let mut vars = Vec::new();
        for layer in &self.layers {
            layer.bind(g, trainable, &mut vars);
        }
        BoundNet { vars }
    }

    pub fn forward_bound(&self, g: &mut Graph, bound: &BoundNet, x: Var) -> Var {
        let mut cursor = 0;
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward_bound(g, &bound.vars, &mut cursor, h);
        }
        debug_assert_eq!(cursor, bound.vars.len(), "binding and forward disagree");
        h
    }

    /// One-shot inference: binds non-trainable parameters and runs forward.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let bound = self.bind(g, false);
        self.forward_bound(g, &bound, x)
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(&Tensor)) {
        for layer in &self.layers {
            layer.for_each_param(f);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for layer in &mut self.layers {
            layer.for_each_param_mut(f);
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        self.for_each_param(&mut |t| shapes.push(t.dims().to_vec()));
        shapes
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |t| n += t.len());
        n
    }

    /// Flattened copy of all parameters, in traversal order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_param(&mut |t| out.extend_from_slice(t.data()));
        out
    }
}

/// Collects gradients for a bound network after `backward`, in the same
/// order as `for_each_param`. Parameters that did not influence the loss get
/// zero gradients.
pub fn collect_grads(g: &Graph, net: &Sequential, bound: &BoundNet) -> Vec<Tensor> {
    let mut shapes = Vec::new();
    net.for_each_param(&mut |t| shapes.push(t.dims().to_vec()));
    assert_eq!(shapes.len(), bound.vars.len());
    bound
        .vars
        .iter()
        .zip(shapes.iter())
        .map(|(&v, shape)| match g.grad(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        })
        .collect()
}
