//! Parameterized layers, weight initialization and the two model stacks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{
    activation, batchnorm2d, conv2d, conv_transpose2d, Activation, BatchNormMode, ConvSpec, Real,
    Tensor, DEFAULT_EPS, DEFAULT_MOMENTUM,
};

pub const LATENT_DIM: usize = 1000;
pub const IMAGE_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    BatchNorm,
    Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()).expect("positive channel count"),
            beta: Tensor::zeros(&[channels]).expect("positive channel count"),
            running_mean: Tensor::zeros(&[channels]).expect("positive channel count"),
            running_var: Tensor::full(&[channels], T::one()).expect("positive channel count"),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Real> {
    /// Direct or transposed convolution, per `spec.transposed`. No bias.
    Conv {
        spec: ConvSpec,
        weight: Tensor<T>,
    },
    BatchNorm(BatchNorm<T>),
    Activation(Activation),
}

/// Parameter-free description of a layer, used to compare architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Activation(Activation),
}

impl<T: Real> Layer<T> {
    pub fn conv(spec: ConvSpec) -> Self {
        let weight = Tensor::zeros(&spec.weight_shape()).expect("positive conv extents");
        Layer::Conv { spec, weight }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { spec, .. } if spec.transposed => LayerKind::ConvTranspose,
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Activation(_) => LayerKind::Activation,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv { spec, .. } => LayerSpec::Conv(*spec),
            Layer::BatchNorm(bn) => LayerSpec::BatchNorm {
                channels: bn.channels(),
                eps: bn.eps,
                momentum: bn.momentum,
            },
            Layer::Activation(a) => LayerSpec::Activation(*a),
        }
    }

    fn describe(&self) -> String {
        match self {
            Layer::Conv { spec, .. } => format!(
                "{}({}, {}, kernel_size={:?}, stride={:?}, padding={:?}, bias=False)",
                if spec.transposed {
                    "ConvTranspose2d"
                } else {
                    "Conv2d"
                },
                spec.in_channels,
                spec.out_channels,
                spec.kernel,
                spec.stride,
                spec.padding
            ),
            Layer::BatchNorm(bn) => format!(
                "BatchNorm2d({}, eps={:e}, momentum={})",
                bn.channels(),
                bn.eps,
                bn.momentum
            ),
            Layer::Activation(Activation::Relu) => "ReLU()".into(),
            Layer::Activation(Activation::LeakyRelu { slope }) => {
                format!("LeakyReLU(negative_slope={slope})")
            }
            Layer::Activation(Activation::Tanh) => "Tanh()".into(),
            Layer::Activation(Activation::Sigmoid) => "Sigmoid()".into(),
        }
    }
}

/// Layers applied in order. Parameter names are `{prefix}.{index}.{field}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T: Real> {
    prefix: String,
    layers: Vec<Layer<T>>,
}

fn at_layer(index: usize, kind: LayerKind) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Shape(m) => Error::Shape(format!("layer {index} ({kind:?}): {m}")),
        Error::Spec(m) => Error::Shape(format!("layer {index} ({kind:?}): {m}")),
        Error::Statistics(m) => Error::Statistics(format!("layer {index} ({kind:?}): {m}")),
        other => other,
    }
}

impl<T: Real> Sequential<T> {
    pub fn new(prefix: impl Into<String>, layers: Vec<Layer<T>>) -> Self {
        Sequential {
            prefix: prefix.into(),
            layers,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Listing in the style of a framework model summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{}(\n", self.prefix);
        for (i, layer) in self.layers.iter().enumerate() {
            s.push_str(&format!("  ({i}): {}\n", layer.describe()));
        }
        s.push(')');
        s
    }

    /// Trainable tensors in layer order: conv weights, batchnorm gamma and beta.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { weight, .. } => {
                    out.push((format!("{}.{i}.weight", self.prefix), weight))
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{}.{i}.gamma", self.prefix), &bn.gamma));
                    out.push((format!("{}.{i}.beta", self.prefix), &bn.beta));
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { weight, .. } => {
                    out.push((format!("{}.{i}.weight", self.prefix), weight))
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{}.{i}.gamma", self.prefix), &mut bn.gamma));
                    out.push((format!("{}.{i}.beta", self.prefix), &mut bn.beta));
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    /// Non-trainable state: batchnorm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((
                    format!("{}.{i}.running_mean", self.prefix),
                    &bn.running_mean,
                ));
                out.push((format!("{}.{i}.running_var", self.prefix), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                out.push((
                    format!("{}.{i}.running_mean", self.prefix),
                    &mut bn.running_mean,
                ));
                out.push((
                    format!("{}.{i}.running_var", self.prefix),
                    &mut bn.running_var,
                ));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn param_set(&self) -> ParamSet<T> {
        self.parameters()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Replaces every parameter named in `params`; shapes must match.
    pub fn load_params(&mut self, params: &ParamSet<T>) -> Result<()> {
        for (name, slot) in self.parameters_mut() {
            if let Some(value) = params.get(&name) {
                if value.shape() != slot.shape() {
                    return Err(Error::Shape(format!(
                        "{name}: shape {:?} does not match {:?}",
                        value.shape(),
                        slot.shape()
                    )));
                }
                *slot = value.clone();
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { spec, weight } => Layer::Conv {
                    spec: *spec,
                    weight: weight.cast(),
                },
                Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
                    gamma: bn.gamma.cast(),
                    beta: bn.beta.cast(),
                    running_mean: bn.running_mean.cast(),
                    running_var: bn.running_var.cast(),
                    eps: bn.eps,
                    momentum: bn.momentum,
                }),
                Layer::Activation(a) => Layer::Activation(*a),
            })
            .collect();
        Sequential::new(self.prefix.clone(), layers)
    }

    /// Forward pass without recording. Train mode updates batchnorm
    /// running statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: BatchNormMode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            x = match layer {
                Layer::Conv { spec, weight } if spec.transposed => {
                    conv_transpose2d(&x, weight, spec)
                }
                Layer::Conv { spec, weight } => conv2d(&x, weight, spec),
                Layer::BatchNorm(bn) => batchnorm2d(
                    &x,
                    &bn.gamma,
                    &bn.beta,
                    &mut bn.running_mean,
                    &mut bn.running_var,
                    mode,
                    T::from_f64(bn.eps),
                    T::from_f64(bn.momentum),
                ),
                Layer::Activation(a) => Ok(activation(&x, *a)),
            }
            .map_err(at_layer(i, kind))?;
        }
        Ok(x)
    }

    /// Eval-mode forward on an immutable model.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer.kind();
            x = match layer {
                Layer::Conv { spec, weight } if spec.transposed => {
                    conv_transpose2d(&x, weight, spec)
                }
                Layer::Conv { spec, weight } => conv2d(&x, weight, spec),
                Layer::BatchNorm(bn) => {
                    let (mut rm, mut rv) = (bn.running_mean.clone(), bn.running_var.clone());
                    batchnorm2d(
                        &x,
                        &bn.gamma,
                        &bn.beta,
                        &mut rm,
                        &mut rv,
                        BatchNormMode::Eval,
                        T::from_f64(bn.eps),
                        T::from_f64(bn.momentum),
                    )
                }
                Layer::Activation(a) => Ok(activation(&x, *a)),
            }
            .map_err(at_layer(i, kind))?;
        }
        Ok(x)
    }

    /// Records the forward pass on `tape`. With `trainable == false` the
    /// parameters enter as constants and receive no gradient.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut Tape<T>,
        input: Var,
        mode: BatchNormMode,
        trainable: bool,
    ) -> Result<Var> {
        let prefix = self.prefix.clone();
        let register = |tape: &mut Tape<T>, name: String, value: &Tensor<T>| {
            if trainable {
                tape.param(name, value.clone())
            } else {
                tape.constant(value.clone())
            }
        };
        let mut x = input;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            x = match layer {
                Layer::Conv { spec, weight } => {
                    let w = register(tape, format!("{prefix}.{i}.weight"), weight);
                    if spec.transposed {
                        tape.conv_transpose2d(x, w, spec)
                    } else {
                        tape.conv2d(x, w, spec)
                    }
                }
                Layer::BatchNorm(bn) => {
                    let g = register(tape, format!("{prefix}.{i}.gamma"), &bn.gamma);
                    let b = register(tape, format!("{prefix}.{i}.beta"), &bn.beta);
                    tape.batchnorm2d(
                        x,
                        g,
                        b,
                        &mut bn.running_mean,
                        &mut bn.running_var,
                        mode,
                        T::from_f64(bn.eps),
                        T::from_f64(bn.momentum),
                    )
                }
                Layer::Activation(a) => Ok(tape.activation(x, *a)),
            }
            .map_err(at_layer(i, kind))?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalSpec {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub conv_weight: NormalSpec,
    pub bn_gamma: NormalSpec,
    pub bn_beta: f64,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            conv_weight: NormalSpec {
                mean: 0.0,
                std: 0.02,
            },
            bn_gamma: NormalSpec {
                mean: 1.0,
                std: 0.2,
            },
            bn_beta: 0.0,
            seed: 0,
        }
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.conv_weight.std > 0.0 && self.bn_gamma.std > 0.0) {
            return Err(Error::Config(
                "init standard deviations must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws every parameter in layer order, row-major within each tensor,
/// and resets running statistics to mean 0, variance 1.
pub fn init_weights<T: Real, R: Rng + ?Sized>(
    model: &mut Sequential<T>,
    init: &InitSpec,
    rng: &mut R,
) -> Result<()> {
    init.validate()?;
    for layer in model.layers_mut() {
        match layer {
            Layer::Conv { weight, .. } => {
                *weight = Tensor::randn(
                    weight.shape(),
                    init.conv_weight.mean,
                    init.conv_weight.std,
                    rng,
                )?;
            }
            Layer::BatchNorm(bn) => {
                let c = bn.channels();
                bn.gamma = Tensor::randn(&[c], init.bn_gamma.mean, init.bn_gamma.std, rng)?;
                bn.beta = Tensor::full(&[c], T::from_f64(init.bn_beta))?;
                bn.running_mean = Tensor::zeros(&[c])?;
                bn.running_var = Tensor::full(&[c], T::one())?;
            }
            Layer::Activation(_) => {}
        }
    }
    Ok(())
}

/// Size of a generator/discriminator pair.
///
/// The full architecture uses 1000 latent channels, base width 64 and
/// 64×64 images. With 16×16 images the generator's first and the
/// discriminator's last convolution use 1×1 kernels, so the five-stage
/// topology is kept at a quarter of the resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub base_width: usize,
    pub image_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: LATENT_DIM,
            base_width: 64,
            image_size: 64,
        }
    }
}

impl ModelConfig {
    /// Same topology with channel widths divided by `factor` and 16×16 images.
    pub fn shrunk(factor: usize) -> Self {
        let factor = factor.max(1);
        ModelConfig {
            latent_dim: (LATENT_DIM / factor).max(1),
            base_width: (64 / factor).max(1),
            image_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.base_width == 0 {
            return Err(Error::Config(
                "latent_dim and base_width must be positive".into(),
            ));
        }
        self.end_kernel().map(|_| ())
    }

    fn end_kernel(&self) -> Result<usize> {
        match self.image_size {
            64 => Ok(4),
            16 => Ok(1),
            other => Err(Error::Config(format!(
                "image_size must be 64 or 16, got {other}"
            ))),
        }
    }
}

/// The generator stack for `config`; weights are zero until initialized.
pub fn build_generator_with<T: Real>(config: &ModelConfig) -> Result<Sequential<T>> {
    config.validate()?;
    let k0 = config.end_kernel()?;
    let b = config.base_width;
    let widths = [config.latent_dim, 8 * b, 4 * b, 2 * b, b];
    let mut layers = Vec::with_capacity(14);
    for (stage, pair) in widths.windows(2).enumerate() {
        let spec = if stage == 0 {
            ConvSpec::transposed(pair[0], pair[1], k0, 1, 0)
        } else {
            ConvSpec::transposed(pair[0], pair[1], 4, 2, 1)
        };
        layers.push(Layer::conv(spec));
        layers.push(Layer::BatchNorm(BatchNorm::new(pair[1])));
        layers.push(Layer::Activation(Activation::Relu));
    }
    layers.push(Layer::conv(ConvSpec::transposed(
        b,
        IMAGE_CHANNELS,
        4,
        2,
        1,
    )));
    layers.push(Layer::Activation(Activation::Tanh));
    Ok(Sequential::new("generator", layers))
}

/// The discriminator stack for `config`; weights are zero until initialized.
pub fn build_discriminator_with<T: Real>(config: &ModelConfig) -> Result<Sequential<T>> {
    config.validate()?;
    let k_last = config.end_kernel()?;
    let b = config.base_width;
    let leaky = Layer::Activation(Activation::LeakyRelu { slope: LEAKY_SLOPE });
    let mut layers = vec![
        Layer::conv(ConvSpec::conv(IMAGE_CHANNELS, b, 4, 2, 1)),
        leaky.clone(),
    ];
    for (cin, cout) in [(b, 2 * b), (2 * b, 4 * b), (4 * b, 8 * b)] {
        layers.push(Layer::conv(ConvSpec::conv(cin, cout, 4, 2, 1)));
        layers.push(Layer::BatchNorm(BatchNorm::new(cout)));
        layers.push(leaky.clone());
    }
    layers.push(Layer::conv(ConvSpec::conv(8 * b, 1, k_last, 1, 0)));
    layers.push(Layer::Activation(Activation::Sigmoid));
    Ok(Sequential::new("discriminator", layers))
}

/// The 14-entry generator: (N,1000,1,1) → (N,3,64,64).
pub fn build_generator<T: Real>() -> Sequential<T> {
    build_generator_with(&ModelConfig::default()).expect("default config is valid")
}

/// The 13-entry discriminator: (N,3,64,64) → (N,1,1,1).
pub fn build_discriminator<T: Real>() -> Sequential<T> {
    build_discriminator_with(&ModelConfig::default()).expect("default config is valid")
}
