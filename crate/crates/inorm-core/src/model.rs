//! Model definition, parameter initialization, and checkpoint I/O.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{init_affine, NormConfig};
use crate::rng::{RngStream, StreamPurpose};
use crate::tensor::Tensor;

/// Numeric representation of a dense layer's weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Full,
    Quantized { bits: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        precision: Precision,
    },
    /// Fully-connected layer whose weights are the sign of a latent tensor.
    /// No bias: the following norm layer's β provides the shift.
    BinaryDense { input: usize, output: usize },
    Relu,
    Norm(NormConfig),
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BinaryDense { .. } => "binary_dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Norm(_) => "norm",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output width given the incoming width, checking compatibility.
    fn out_width(&self, index: usize, incoming: usize) -> Result<usize> {
        match self {
            LayerSpec::Dense { input, output, .. } | LayerSpec::BinaryDense { input, output } => {
                if *input != incoming {
                    return Err(Error::Shape(format!(
                        "layer {index} ({}) expects {input} inputs, previous layer provides {incoming}",
                        self.kind_name()
                    )));
                }
                Ok(*output)
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(incoming),
            LayerSpec::Norm(cfg) => {
                if cfg.channels != incoming {
                    return Err(Error::Shape(format!(
                        "layer {index} (norm) has {} channels, previous layer provides {incoming}",
                        cfg.channels
                    )));
                }
                Ok(incoming)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerParams {
    Dense { weight: Tensor, bias: Tensor },
    BinaryDense { weight: Tensor },
    Norm { gamma: Tensor, beta: Tensor },
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where injected noise enters the forward pass of a perturbed model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HookSite {
    /// Added to the input of each binary dense layer, i.e. to the normalized
    /// activations feeding the sign-weight product.
    PreSignActivations,
    /// Added to the network input.
    Inputs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HookNoise {
    /// `x + level·N(0,1)`
    AdditiveGauss,
    /// `x · (1 + level·N(0,1))`
    MultiplicativeGauss,
    /// `x + U(−level, level)`
    Uniform,
}

/// Frozen noise source installed by the fault injector. The seed is fixed at
/// injection time, so every forward pass of one perturbed model sees the same
/// noise (one programmed chip instance), while dropout masks still resample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseHook {
    pub site: HookSite,
    pub noise: HookNoise,
    pub level: f64,
    pub seed: u64,
}

impl NoiseHook {
    pub(crate) fn apply(&self, x: &Tensor, layer_index: usize) -> Tensor {
        let mut rng = RngStream::new(self.seed, StreamPurpose::FaultInjection, layer_index as u64, 0);
        let mut out = x.clone();
        match self.noise {
            HookNoise::AdditiveGauss => {
                for v in out.data_mut() {
                    *v += rng.normal(0.0, self.level);
                }
            }
            HookNoise::MultiplicativeGauss => {
                for v in out.data_mut() {
                    *v *= 1.0 + rng.normal(0.0, self.level);
                }
            }
            HookNoise::Uniform => {
                for v in out.data_mut() {
                    *v += rng.uniform(-self.level, self.level);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<LayerParams>,
    pub mode: Mode,
    pub init_seed: u64,
    pub(crate) hooks: Vec<NoiseHook>,
}

impl Model {
    /// Initialize parameters from the layer list. Dense weights use
    /// fan-in-scaled normal draws; affine parameters follow each norm
    /// layer's configured initializer. Each layer owns its own stream.
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let mut params = Vec::with_capacity(layers.len());
        for (li, spec) in layers.iter().enumerate() {
            let mut rng = RngStream::new(seed, StreamPurpose::Init, li as u64, 0);
            let p = match spec {
                LayerSpec::Dense { input, output, .. } => {
                    let weight = he_normal(*output, *input, &mut rng);
                    LayerParams::Dense {
                        weight,
                        bias: Tensor::zeros(vec![*output]),
                    }
                }
                LayerSpec::BinaryDense { input, output } => LayerParams::BinaryDense {
                    weight: he_normal(*output, *input, &mut rng),
                },
                LayerSpec::Norm(cfg) => {
                    let (gamma, beta) = init_affine(cfg.channels, &cfg.init, &mut rng)?;
                    LayerParams::Norm { gamma, beta }
                }
                LayerSpec::Relu | LayerSpec::Softmax => LayerParams::None,
            };
            params.push(p);
        }
        Ok(Self {
            layers,
            params,
            mode: Mode::Eval,
            init_seed: seed,
            hooks: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self.layers.first() {
            Some(LayerSpec::Dense { input, .. }) | Some(LayerSpec::BinaryDense { input, .. }) => {
                *input
            }
            Some(LayerSpec::Norm(cfg)) => cfg.channels,
            _ => 0,
        }
    }

    pub fn output_dim(&self) -> usize {
        let mut width = self.input_dim();
        for (li, spec) in self.layers.iter().enumerate() {
            width = spec.out_width(li, width).expect("validated at construction");
        }
        width
    }

    /// True when the final layer produces class probabilities.
    pub fn is_classifier(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }

    /// True when some norm layer can actually drop parameters (p > 0).
    pub fn has_stochastic_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Norm(cfg) if cfg.p > 0.0))
    }

    pub fn has_binary_layers(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BinaryDense { .. }))
    }

    pub fn hooks(&self) -> &[NoiseHook] {
        &self.hooks
    }

    pub(crate) fn push_hook(&mut self, hook: NoiseHook) {
        self.hooks.push(hook);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format_version: FORMAT_VERSION,
            seed: self.init_seed,
            layers: self.layers.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string_pretty(&ckpt)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        // Atomic write: temp file in the destination directory, then rename.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json.as_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        validate_layers(&ckpt.layers)?;
        validate_params(&ckpt.layers, &ckpt.params)?;
        Ok(Model {
            layers: ckpt.layers,
            params: ckpt.params,
            mode: Mode::Eval,
            init_seed: ckpt.seed,
            hooks: Vec::new(),
        })
    }
}

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    seed: u64,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
}

fn he_normal(out_dim: usize, in_dim: usize, rng: &mut RngStream) -> Tensor {
    let std = (2.0 / in_dim as f64).sqrt();
    let mut data = vec![0.0; out_dim * in_dim];
    rng.fill_normal(&mut data, 0.0, std);
    Tensor::matrix(out_dim, in_dim, data).expect("finite init")
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("model has no layers".into()));
    }
    let mut width = match &layers[0] {
        LayerSpec::Dense { input, .. } | LayerSpec::BinaryDense { input, .. } => *input,
        LayerSpec::Norm(cfg) => cfg.channels,
        _ => {
            return Err(Error::Config(
                "first layer must define an input width (dense, binary_dense, or norm)".into(),
            ))
        }
    };
    for (li, spec) in layers.iter().enumerate() {
        if let LayerSpec::Norm(cfg) = spec {
            cfg.validate()?;
            // Norm layers sit directly on a weighted sum.
            if li == 0
                || !matches!(
                    layers[li - 1],
                    LayerSpec::Dense { .. } | LayerSpec::BinaryDense { .. }
                )
            {
                return Err(Error::Config(format!(
                    "layer {li}: norm layers must immediately follow a dense or binary_dense layer"
                )));
            }
        }
        if let LayerSpec::Dense { precision: Precision::Quantized { bits }, .. } = spec {
            if !(*bits == 4 || *bits == 8) {
                return Err(Error::Config(format!(
                    "layer {li}: quantized weights support 4 or 8 bits, got {bits}"
                )));
            }
        }
        width = spec.out_width(li, width)?;
    }
    let _ = width;
    Ok(())
}

fn validate_params(layers: &[LayerSpec], params: &[LayerParams]) -> Result<()> {
    if layers.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} layers but {} parameter blocks",
            layers.len(),
            params.len()
        )));
    }
    for (li, (spec, p)) in layers.iter().zip(params).enumerate() {
        let ok = match (spec, p) {
            (LayerSpec::Dense { input, output, .. }, LayerParams::Dense { weight, bias }) => {
                weight.shape() == [*output, *input] && bias.shape() == [*output]
            }
            (LayerSpec::BinaryDense { input, output }, LayerParams::BinaryDense { weight }) => {
                weight.shape() == [*output, *input]
            }
            (LayerSpec::Norm(cfg), LayerParams::Norm { gamma, beta }) => {
                gamma.shape() == [cfg.channels] && beta.shape() == [cfg.channels]
            }
            (LayerSpec::Relu, LayerParams::None) | (LayerSpec::Softmax, LayerParams::None) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Checkpoint(format!(
                "layer {li} ({}): parameter shapes do not match the layer spec",
                spec.kind_name()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::{AffineInit, Granularity, MaskMode, NormOrder, DEFAULT_EPS};

    pub(crate) fn norm_cfg(channels: usize) -> NormConfig {
        NormConfig {
            channels,
            order: NormOrder::Inverted,
            p: 0.3,
            eps: DEFAULT_EPS,
            granularity: Granularity::Instance,
            mask_mode: MaskMode::VectorWise,
            init: AffineInit::Normal {
                sigma_gamma: 0.3,
                sigma_beta: 0.3,
            },
        }
    }

    fn small_layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                input: 2,
                output: 4,
                precision: Precision::Full,
            },
            LayerSpec::Norm(norm_cfg(4)),
            LayerSpec::Relu,
            LayerSpec::Dense {
                input: 4,
                output: 2,
                precision: Precision::Full,
            },
            LayerSpec::Softmax,
        ]
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::new(small_layers(), 7).unwrap();
        let b = Model::new(small_layers(), 7).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa, pb);
        }
        let c = Model::new(small_layers(), 8).unwrap();
        assert_ne!(a.params[0], c.params[0]);
    }

    #[test]
    fn rejects_incompatible_dims() {
        let layers = vec![
            LayerSpec::Dense {
                input: 2,
                output: 3,
                precision: Precision::Full,
            },
            LayerSpec::Dense {
                input: 4,
                output: 2,
                precision: Precision::Full,
            },
        ];
        assert!(Model::new(layers, 0).is_err());
    }

    #[test]
    fn rejects_floating_norm() {
        let layers = vec![
            LayerSpec::Dense {
                input: 2,
                output: 4,
                precision: Precision::Full,
            },
            LayerSpec::Relu,
            LayerSpec::Norm(norm_cfg(4)),
        ];
        assert!(Model::new(layers, 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = Model::new(small_layers(), 1234).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.init_seed, 1234);
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a, b);
        }
        // Saving again produces identical bytes.
        let path2 = dir.path().join("model2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_mismatched_params() {
        let model = Model::new(small_layers(), 5).unwrap();
        let mut ckpt = Checkpoint {
            format_version: FORMAT_VERSION,
            seed: 5,
            layers: model.layers.clone(),
            params: model.params.clone(),
        };
        ckpt.params[0] = LayerParams::Dense {
            weight: Tensor::zeros(vec![3, 3]),
            bias: Tensor::zeros(vec![3]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(Model::load(&path).is_err());
    }
}
