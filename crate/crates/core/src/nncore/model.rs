use rand::Rng;

use super::layers::*;
use super::Tensor;
use crate::error::{Error, Result};
use crate::patches::PATCH_SIZE;
use crate::stream_rng;

pub const HEAD_COUNT: usize = 3;
pub const HEAD_DIM: usize = 3;
pub const OUTPUTS: usize = HEAD_COUNT * HEAD_DIM;

/// Network shape. The default is the reference three-headed net:
///
/// ```text
/// 64x64x3 -> gray-world branch -> 64x64x6
///   -> [conv3x3 -> relu -> maxpool2x2] x (16, 32, 64) -> 8x8x64
///   -> global average pool -> 64 -> dense 64 + relu
///   -> three dense heads 64 -> 3   (dominant, left, right)
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub input_size: usize,
    pub grayworld: bool,
    pub conv_widths: Vec<usize>,
    pub hidden: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: PATCH_SIZE,
            grayworld: true,
            conv_widths: vec![16, 32, 64],
            hidden: Some(64),
        }
    }
}

impl ArchConfig {
    /// Stable identifier written into checkpoints.
    pub fn tag(&self) -> String {
        let convs: Vec<String> = self.conv_widths.iter().map(usize::to_string).collect();
        format!(
            "cerberus-v1;in={};gw={};conv={};hidden={}",
            self.input_size,
            u8::from(self.grayworld),
            convs.join(","),
            self.hidden.unwrap_or(0)
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_size == 0 {
            return bad("input size must be positive".into());
        }
        let pools = self.conv_widths.len() as u32;
        if pools >= usize::BITS || !self.input_size.is_multiple_of(1usize << pools) {
            return bad(format!(
                "input size {} is not divisible by 2^{pools} for {pools} pooling stages",
                self.input_size
            ));
        }
        if self.conv_widths.contains(&0) || self.hidden == Some(0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    GrayWorld,
    Conv3x3 {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    /// Parallel dense heads over the same input; outputs are concatenated.
    Heads {
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    },
}

impl Layer {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv3x3 { weight, bias } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Heads { weights, biases } => weights.iter().zip(biases).flat_map(|(w, b)| [w, b]).collect(),
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv3x3 { weight, bias } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Heads { weights, biases } => weights
                .iter_mut()
                .zip(biases.iter_mut())
                .flat_map(|(w, b)| [w, b])
                .collect(),
            _ => vec![],
        }
    }
}

/// Name and role of one parameter tensor, in [`Model::params`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub is_weight: bool,
}

enum Cache {
    None,
    Cols(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Intermediate values of one forward pass, consumed by [`Model::backward`].
pub struct Trace {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchConfig,
    layers: Vec<Layer>,
    info: Vec<ParamInfo>,
}

impl Model {
    /// Builds the network with He-uniform weights drawn from `seed`.
    /// Biases start at zero except the heads, which start at 1/3 (the
    /// gray illuminant after normalization).
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream_rng(seed, 0);
        let mut he = |shape: Vec<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
        };
        let mut layers = Vec::new();
        let mut channels = 3;
        if arch.grayworld {
            layers.push(Layer::GrayWorld);
            channels *= 2;
        }
        for &width in &arch.conv_widths {
            layers.push(Layer::Conv3x3 {
                weight: he(vec![3, 3, channels, width], 9 * channels),
                bias: Tensor::zeros(vec![width]),
            });
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2x2);
            channels = width;
        }
        layers.push(Layer::GlobalAvgPool);
        if let Some(hidden) = arch.hidden {
            layers.push(Layer::Dense {
                weight: he(vec![hidden, channels], channels),
                bias: Tensor::zeros(vec![hidden]),
            });
            layers.push(Layer::Relu);
            channels = hidden;
        }
        let weights = (0..HEAD_COUNT)
            .map(|_| he(vec![HEAD_DIM, channels], channels))
            .collect();
        let biases = (0..HEAD_COUNT)
            .map(|_| Tensor::new(vec![HEAD_DIM], vec![1.0 / 3.0; HEAD_DIM]).unwrap())
            .collect();
        layers.push(Layer::Heads { weights, biases });

        let mut model = Self {
            info: Vec::new(),
            arch,
            layers,
        };
        model.info = model.describe_params();
        model.round_params_to_f32();
        Ok(model)
    }

    fn describe_params(&self) -> Vec<ParamInfo> {
        let mut info = Vec::new();
        let (mut conv, mut dense) = (0, 0);
        let mut push = |name: String, is_weight| info.push(ParamInfo { name, is_weight });
        for layer in &self.layers {
            match layer {
                Layer::Conv3x3 { .. } => {
                    push(format!("conv{conv}.weight"), true);
                    push(format!("conv{conv}.bias"), false);
                    conv += 1;
                }
                Layer::Dense { .. } => {
                    push(format!("dense{dense}.weight"), true);
                    push(format!("dense{dense}.bias"), false);
                    dense += 1;
                }
                Layer::Heads { weights, .. } => {
                    for h in 0..weights.len() {
                        push(format!("head{h}.weight"), true);
                        push(format!("head{h}.bias"), false);
                    }
                }
                _ => {}
            }
        }
        info
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect()
    }

    /// Parameters live at f32 precision so checkpoints round-trip exactly.
    pub fn round_params_to_f32(&mut self) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.arch.input_size, self.arch.input_size, 3]
    }

    /// Forward pass on a `size x size x 3` input; returns the 9 raw outputs.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = Self::layer_forward(layer, &x)?.0;
            debug_assert!(x.all_finite(), "non-finite activation");
        }
        Ok(x.into_data())
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = Self::layer_forward(layer, &x)?;
            debug_assert!(y.all_finite(), "non-finite activation");
            inputs.push(x);
            caches.push(cache);
            x = y;
        }
        Ok(Trace {
            inputs,
            caches,
            output: x.into_data(),
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape().to_vec(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Cache)> {
        Ok(match layer {
            Layer::GrayWorld => (grayworld_branch_forward(x)?, Cache::None),
            Layer::Conv3x3 { weight, bias } => {
                let (y, cols) = conv3x3_forward(x, weight, bias)?;
                (y, Cache::Cols(cols))
            }
            Layer::Relu => (relu_forward(x), Cache::None),
            Layer::MaxPool2x2 => {
                let (y, idx) = maxpool2x2_forward(x)?;
                (y, Cache::Argmax(idx))
            }
            Layer::GlobalAvgPool => (global_avg_pool_forward(x)?, Cache::None),
            Layer::Dense { weight, bias } => (dense_forward(x, weight, bias)?, Cache::None),
            Layer::Heads { weights, biases } => {
                let mut out = Vec::with_capacity(OUTPUTS);
                for (w, b) in weights.iter().zip(biases) {
                    out.extend_from_slice(dense_forward(x, w, b)?.data());
                }
                (Tensor::new(vec![out.len()], out)?, Cache::None)
            }
        })
    }

    /// Accumulates parameter gradients of `sum_i grad_out[i] * output[i]`
    /// into `grads` (aligned with [`Model::params`]). Returns the input
    /// gradient when `need_input` is set.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [Tensor], need_input: bool) -> Option<Tensor> {
        assert_eq!(grad_out.len(), trace.output.len(), "output gradient size");
        assert_eq!(grads.len(), self.info.len(), "gradient buffer count");
        let mut g = Tensor::new(vec![grad_out.len()], grad_out.to_vec()).unwrap();
        let mut slot = grads.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            let want_input = i > 0 || need_input;
            g = match (layer, &trace.caches[i]) {
                (Layer::GrayWorld, _) => {
                    if !want_input {
                        return None;
                    }
                    grayworld_branch_backward(x.shape(), &g).unwrap()
                }
                (Layer::Conv3x3 { weight, .. }, Cache::Cols(cols)) => {
                    slot -= 2;
                    let (gw, gb) = pair_mut(grads, slot);
                    conv3x3_backward_acc(x.hwc().unwrap(), cols, weight, &g, gw, gb, want_input)?
                }
                (Layer::Relu, _) => relu_backward(x, &g).unwrap(),
                (Layer::MaxPool2x2, Cache::Argmax(idx)) => maxpool2x2_backward(x.shape(), idx, &g).unwrap(),
                (Layer::GlobalAvgPool, _) => global_avg_pool_backward(x.shape(), &g).unwrap(),
                (Layer::Dense { weight, .. }, _) => {
                    slot -= 2;
                    let (gw, gb) = pair_mut(grads, slot);
                    dense_backward_acc(x, weight, g.data(), gw, gb)
                }
                (Layer::Heads { weights, .. }, _) => {
                    let mut gi = Tensor::zeros(x.shape().to_vec());
                    for (h, w) in weights.iter().enumerate().rev() {
                        slot -= 2;
                        let (gw, gb) = pair_mut(grads, slot);
                        let part = dense_backward_acc(x, w, &g.data()[h * HEAD_DIM..(h + 1) * HEAD_DIM], gw, gb);
                        gi.data_mut().iter_mut().zip(part.data()).for_each(|(a, b)| *a += b);
                    }
                    gi
                }
                _ => unreachable!("cache does not match layer"),
            };
        }
        Some(g)
    }

    /// Replaces every parameter, in [`Model::params`] order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![params.len()],
                got: vec![values.len()],
            });
        }
        for (p, v) in params.iter().zip(&values) {
            if p.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    got: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in params.iter_mut().zip(values) {
            **p = v;
        }
        Ok(())
    }
}

fn pair_mut(grads: &mut [Tensor], i: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = grads[i..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
