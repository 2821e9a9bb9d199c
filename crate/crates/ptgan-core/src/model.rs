//! The four transfer networks: two generators and two patch discriminators.

use crate::conv::PadMode;
use crate::error::ModelError;
use crate::graph::{Graph, Var};
use crate::nn::{BoundNet, ConvLayer, ConvTransposeLayer, InstanceNormLayer, Layer, Sequential};
use crate::rf::{receptive_field, ConvLayerDesc};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator architecture: a stem convolution, two stride-2 downsampling
/// convolutions, a stack of residual blocks, two stride-1/2 fractionally
/// strided convolutions, and a tanh-ranged output convolution, with
/// instance normalization throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub input_size: usize,
    pub base_channels: usize,
    pub num_residual_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            input_size: 256,
            base_channels: 64,
            num_residual_blocks: 9,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size % 4 != 0 {
            return Err(ModelError::InvalidSpec(format!(
                "input_size {} is not divisible by 4 (two stride-2 downsamplings)",
                self.input_size
            )));
        }
        if self.input_size < 16 {
            return Err(ModelError::InvalidSpec(format!(
                "input_size {} is below the minimum of 16",
                self.input_size
            )));
        }
        if self.num_residual_blocks < 1 {
            return Err(ModelError::InvalidSpec(
                "num_residual_blocks must be at least 1".into(),
            ));
        }
        if self.base_channels < 1 {
            return Err(ModelError::InvalidSpec("base_channels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Patch discriminator architecture. The canonical stack is three stride-2
/// and two stride-1 convolutions with 4x4 kernels, which scores overlapping
/// 70x70 patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub patch_receptive_field: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            patch_receptive_field: 70,
            base_channels: 64,
        }
    }
}

impl DiscriminatorSpec {
    /// Spatial geometry of the score stack, used for receptive-field checks.
    pub fn conv_stack(&self) -> Vec<ConvLayerDesc> {
        vec![
            ConvLayerDesc { kernel: 4, stride: 2, pad: 1 },
            ConvLayerDesc { kernel: 4, stride: 2, pad: 1 },
            ConvLayerDesc { kernel: 4, stride: 2, pad: 1 },
            ConvLayerDesc { kernel: 4, stride: 1, pad: 1 },
            ConvLayerDesc { kernel: 4, stride: 1, pad: 1 },
        ]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_channels < 1 {
            return Err(ModelError::InvalidSpec("base_channels must be at least 1".into()));
        }
        let rf = receptive_field(&self.conv_stack());
        if rf != self.patch_receptive_field {
            return Err(ModelError::InvalidSpec(format!(
                "score stack has receptive field {rf}, spec asks for {}",
                self.patch_receptive_field
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub net: Sequential,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = spec.base_channels;
        let mut layers = vec![
            Layer::Conv(ConvLayer::new(3, g, 7, 1, 3, PadMode::Reflect, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(g)),
            Layer::Relu,
            Layer::Conv(ConvLayer::new(g, 2 * g, 3, 2, 1, PadMode::Zeros, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(2 * g)),
            Layer::Relu,
            Layer::Conv(ConvLayer::new(2 * g, 4 * g, 3, 2, 1, PadMode::Zeros, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(4 * g)),
            Layer::Relu,
        ];
        for _ in 0..spec.num_residual_blocks {
            layers.push(Layer::Residual(vec![
                Layer::Conv(ConvLayer::new(4 * g, 4 * g, 3, 1, 1, PadMode::Reflect, &mut rng)),
                Layer::InstanceNorm(InstanceNormLayer::new(4 * g)),
                Layer::Relu,
                Layer::Conv(ConvLayer::new(4 * g, 4 * g, 3, 1, 1, PadMode::Reflect, &mut rng)),
                Layer::InstanceNorm(InstanceNormLayer::new(4 * g)),
            ]));
        }
        layers.extend([
            Layer::ConvTranspose(ConvTransposeLayer::new(4 * g, 2 * g, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(2 * g)),
            Layer::Relu,
            Layer::ConvTranspose(ConvTransposeLayer::new(2 * g, g, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(g)),
            Layer::Relu,
            Layer::Conv(ConvLayer::new(g, 3, 7, 1, 3, PadMode::Reflect, &mut rng)),
            Layer::Tanh,
        ]);
        Ok(Generator {
            spec,
            net: Sequential { layers },
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet {
        self.net.bind(g, trainable)
    }

    pub fn forward_bound(&self, g: &mut Graph, bound: &BoundNet, x: Var) -> Var {
        self.net.forward_bound(g, bound, x)
    }

    /// Spatial-size check for an incoming batch.
    pub fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        let d = x.dims();
        if d.len() != 4 || d[1] != 3 {
            return Err(ModelError::ShapeMismatch {
                expected: "[B,3,H,W]".into(),
                got: format!("{d:?}"),
            });
        }
        if d[2] % 4 != 0 || d[3] % 4 != 0 {
            return Err(ModelError::ShapeMismatch {
                expected: "spatial size divisible by 4".into(),
                got: format!("{}x{}", d[2], d[3]),
            });
        }
        Ok(())
    }

    /// Inference on a frozen generator.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let out = self.net.forward(&mut g, input);
        Ok(g.value(out).clone())
    }
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub spec: DiscriminatorSpec,
    pub net: Sequential,
}

impl PatchDiscriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.base_channels;
        let layers = vec![
            Layer::Conv(ConvLayer::new(3, d, 4, 2, 1, PadMode::Zeros, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(ConvLayer::new(d, 2 * d, 4, 2, 1, PadMode::Zeros, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(2 * d)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(ConvLayer::new(2 * d, 4 * d, 4, 2, 1, PadMode::Zeros, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(4 * d)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(ConvLayer::new(4 * d, 8 * d, 4, 1, 1, PadMode::Zeros, &mut rng)),
            Layer::InstanceNorm(InstanceNormLayer::new(8 * d)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(ConvLayer::new(8 * d, 1, 4, 1, 1, PadMode::Zeros, &mut rng)),
        ];
        Ok(PatchDiscriminator {
            spec,
            net: Sequential { layers },
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNet {
        self.net.bind(g, trainable)
    }

    pub fn forward_bound(&self, g: &mut Graph, bound: &BoundNet, x: Var) -> Var {
        self.net.forward_bound(g, bound, x)
    }

    /// Inference: the patch score grid for a batch.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let out = self.net.forward(&mut g, input);
        g.value(out).clone()
    }
}

/// The full transfer model: `g_ab` maps domain A to B, `g_ba` maps B to A,
/// and `d_a`/`d_b` score how well an image matches each domain's style.
/// All four parameter sets are disjoint.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: PatchDiscriminator,
    pub d_b: PatchDiscriminator,
}

impl TransferModel {
    pub fn new(gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, seed: u64) -> Result<Self, ModelError> {
        // Distinct derived seeds keep the four parameter sets independent.
        Ok(TransferModel {
            g_ab: Generator::new(gen_spec, seed.wrapping_add(0x67656e_ab))?,
            g_ba: Generator::new(gen_spec, seed.wrapping_add(0x67656e_ba))?,
            d_a: PatchDiscriminator::new(disc_spec, seed.wrapping_add(0x64697363_0a))?,
            d_b: PatchDiscriminator::new(disc_spec, seed.wrapping_add(0x64697363_0b))?,
        })
    }

    pub fn generator(&self, direction: TransferDirection) -> &Generator {
        match direction {
            TransferDirection::AtoB => &self.g_ab,
            TransferDirection::BtoA => &self.g_ba,
        }
    }

    /// Flat copies of every parameter, one vector per network.
    pub fn param_vectors(&self) -> [Vec<f64>; 4] {
        [
            self.g_ab.net.flat_params(),
            self.g_ba.net.flat_params(),
            self.d_a.net.flat_params(),
            self.d_b.net.flat_params(),
        ]
    }

    /// Adds `delta` to one parameter element addressed by network index
    /// (model order: g_ab, g_ba, d_a, d_b) and position in that network's
    /// flattened parameter vector. Finite-difference probes use this.
    pub fn perturb_param(&mut self, net: usize, flat_index: usize, delta: f64) {
        let target = match net {
            0 => &mut self.g_ab.net,
            1 => &mut self.g_ba.net,
            2 => &mut self.d_a.net,
            3 => &mut self.d_b.net,
            _ => panic!("network index {net} out of range"),
        };
        let mut offset = 0usize;
        let mut applied = false;
        target.for_each_param_mut(&mut |t| {
            if !applied && flat_index < offset + t.len() {
                t.data_mut()[flat_index - offset] += delta;
                applied = true;
            }
            offset += t.len();
        });
        assert!(applied, "flat index {flat_index} out of range for network {net}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferDirection {
    AtoB,
    BtoA,
}

impl std::fmt::Display for TransferDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferDirection::AtoB => write!(f, "a_to_b"),
            TransferDirection::BtoA => write!(f, "b_to_a"),
        }
    }
}
