//! Declarative experiment configuration (TOML). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use inorm_core::data::{self, Dataset};
use inorm_core::error::{Error, Result};
use inorm_core::faults::{FaultFamily, FaultSite, DEFAULT_EVAL_PASSES, DEFAULT_MC_RUNS};
use inorm_core::norm::{AffineInit, Granularity, MaskMode, NormConfig, NormOrder, DEFAULT_EPS};
use inorm_core::model::{LayerSpec, Precision};
use inorm_core::train::TrainConfig;

fn default_p() -> f64 {
    0.3
}

fn default_sigma() -> f64 {
    0.3
}

fn default_runs() -> usize {
    DEFAULT_MC_RUNS
}

fn default_passes() -> usize {
    DEFAULT_EVAL_PASSES
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: Vec<SweepSection>,
    #[serde(default)]
    pub ood: Option<OodSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer widths, input first: `[2, 16, 16, 2]` builds a 2-16-16-2 net.
    pub dims: Vec<usize>,
    /// `float`, `binary`, `int8`, or `int4`.
    #[serde(default = "WeightKind::default_kind")]
    pub weights: WeightKind,
    /// `inverted`, `conventional`, or `none`.
    #[serde(default = "NormKind::default_kind")]
    pub norm: NormKind,
    #[serde(default = "default_p")]
    pub dropout_p: f64,
    /// `normal`, `uniform`, or `identity`.
    #[serde(default = "InitKind::default_kind")]
    pub init: InitKind,
    #[serde(default = "default_sigma")]
    pub sigma_gamma: f64,
    #[serde(default = "default_sigma")]
    pub sigma_beta: f64,
    #[serde(default)]
    pub k_gamma: Option<f64>,
    #[serde(default)]
    pub k_beta: Option<f64>,
    /// `instance` or `group`.
    #[serde(default = "GranularityKind::default_kind")]
    pub granularity: GranularityKind,
    #[serde(default)]
    pub groups: Option<usize>,
    /// `vector` or `element`.
    #[serde(default = "MaskKind::default_kind")]
    pub mask_mode: MaskKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// `classification` (softmax head) or `regression`.
    pub task: TaskKind,
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $kw:literal),+ } default $default:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $kw)] $variant),+
        }

        impl $name {
            fn default_kind() -> Self {
                $name::$default
            }
        }
    };
}

keyword_enum!(WeightKind { Float => "float", Binary => "binary", Int8 => "int8", Int4 => "int4" } default Float);
keyword_enum!(NormKind { Inverted => "inverted", Conventional => "conventional", None => "none" } default Inverted);
keyword_enum!(InitKind { Normal => "normal", Uniform => "uniform", Identity => "identity" } default Normal);
keyword_enum!(GranularityKind { Instance => "instance", Group => "group" } default Instance);
keyword_enum!(MaskKind { Vector => "vector", Element => "element" } default Vector);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "classification")]
    Classification,
    #[serde(rename = "regression")]
    Regression,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `two_moons`, `sine_trend`, or `csv`.
    pub source: DataSource,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    // sine_trend parameters
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub trend_slope: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    // csv parameters
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub features: Option<usize>,
    #[serde(default)]
    pub target_values: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub enum DataSource {
    #[serde(rename = "two_moons")]
    TwoMoons,
    #[serde(rename = "sine_trend")]
    SineTrend,
    #[serde(rename = "csv")]
    Csv,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `additive_gauss`, `multiplicative_gauss`, `bit_flip`, or `uniform_noise`.
    pub fault: FaultName,
    /// `weights`, `pre_sign_activations`, or `inputs`.
    #[serde(default = "SiteName::default_site")]
    pub site: SiteName,
    pub levels: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Score each chip instance with masks kept instead of sampled.
    #[serde(default)]
    pub deterministic_eval: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub enum FaultName {
    #[serde(rename = "additive_gauss")]
    AdditiveGauss,
    #[serde(rename = "multiplicative_gauss")]
    MultiplicativeGauss,
    #[serde(rename = "bit_flip")]
    BitFlip,
    #[serde(rename = "uniform_noise")]
    UniformNoise,
}

impl FaultName {
    pub fn family(self) -> FaultFamily {
        match self {
            FaultName::AdditiveGauss => FaultFamily::AdditiveGauss,
            FaultName::MultiplicativeGauss => FaultFamily::MultiplicativeGauss,
            FaultName::BitFlip => FaultFamily::BitFlip,
            FaultName::UniformNoise => FaultFamily::UniformNoise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
pub enum SiteName {
    #[serde(rename = "weights")]
    Weights,
    #[serde(rename = "pre_sign_activations")]
    PreSignActivations,
    #[serde(rename = "inputs")]
    Inputs,
}

impl SiteName {
    fn default_site() -> Self {
        SiteName::Weights
    }

    pub fn site(self) -> FaultSite {
        match self {
            SiteName::Weights => FaultSite::Weights,
            SiteName::PreSignActivations => FaultSite::PreSignActivations,
            SiteName::Inputs => FaultSite::Inputs,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSection {
    #[serde(default)]
    pub rotation_stages: u32,
    #[serde(default)]
    pub noise_levels: u32,
    #[serde(default = "default_passes")]
    pub passes: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.model.dims.len() < 2 {
            return Err(Error::Config(
                "model.dims needs at least an input and an output width".into(),
            ));
        }
        if self.model.task == TaskKind::Classification && *self.model.dims.last().unwrap() < 2 {
            return Err(Error::Config(
                "classification needs at least two output classes".into(),
            ));
        }
        self.train_config(self.seed).validate()?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            momentum: self.train.momentum,
            seed,
        }
    }

    /// Build the layer list from the declarative model section.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let m = &self.model;
        let precision = match m.weights {
            WeightKind::Float | WeightKind::Binary => Precision::Full,
            WeightKind::Int8 => Precision::Quantized { bits: 8 },
            WeightKind::Int4 => Precision::Quantized { bits: 4 },
        };
        let init = match m.init {
            InitKind::Normal => AffineInit::Normal {
                sigma_gamma: m.sigma_gamma,
                sigma_beta: m.sigma_beta,
            },
            InitKind::Uniform => AffineInit::Uniform {
                k_gamma: m.k_gamma.unwrap_or(1.0),
                k_beta: m.k_beta.unwrap_or(0.0),
            },
            InitKind::Identity => AffineInit::Identity,
        };
        let granularity = match m.granularity {
            GranularityKind::Instance => Granularity::Instance,
            GranularityKind::Group => Granularity::Group(m.groups.ok_or_else(|| {
                Error::Config("granularity = \"group\" needs model.groups".into())
            })?),
        };
        let mask_mode = match m.mask_mode {
            MaskKind::Vector => MaskMode::VectorWise,
            MaskKind::Element => MaskMode::ElementWise,
        };

        let mut layers = Vec::new();
        let n_dense = m.dims.len() - 1;
        for i in 0..n_dense {
            let (input, output) = (m.dims[i], m.dims[i + 1]);
            layers.push(match m.weights {
                WeightKind::Binary => LayerSpec::BinaryDense { input, output },
                _ => LayerSpec::Dense {
                    input,
                    output,
                    precision,
                },
            });
            if i + 1 < n_dense {
                match m.norm {
                    NormKind::None => {}
                    NormKind::Inverted | NormKind::Conventional => {
                        layers.push(LayerSpec::Norm(NormConfig {
                            channels: output,
                            order: if m.norm == NormKind::Inverted {
                                NormOrder::Inverted
                            } else {
                                NormOrder::Conventional
                            },
                            p: m.dropout_p,
                            eps: m.eps,
                            granularity,
                            mask_mode,
                            init,
                        }));
                    }
                }
                layers.push(LayerSpec::Relu);
            }
        }
        if m.task == TaskKind::Classification {
            layers.push(LayerSpec::Softmax);
        }
        Ok(layers)
    }

    /// Deterministically generate (or load) the train/test pair.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let full = match d.source {
            DataSource::TwoMoons => data::two_moons(
                d.n.ok_or_else(|| Error::Config("data.n is required for two_moons".into()))?,
                d.noise_std.unwrap_or(0.15),
                self.seed,
            )?,
            DataSource::SineTrend => data::sine_trend_series(
                d.n.ok_or_else(|| Error::Config("data.n is required for sine_trend".into()))?,
                d.period.unwrap_or(40.0),
                d.trend_slope.unwrap_or(0.0),
                d.noise_std.unwrap_or(0.0),
                d.window
                    .ok_or_else(|| Error::Config("data.window is required for sine_trend".into()))?,
                self.seed,
            )?,
            DataSource::Csv => {
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.path is required for csv".into()))?;
                let features = d
                    .features
                    .ok_or_else(|| Error::Config("data.features is required for csv".into()))?;
                let target = match d.target_values {
                    None | Some(0) => data::TargetSchema::Label,
                    Some(k) => data::TargetSchema::Values(k),
                };
                data::load_csv(path, &data::CsvSchema { features, target })?
            }
        };
        let (train, test) = data::split(&full, d.test_fraction, self.seed)?;
        if d.normalize {
            data::normalize_split(&train, &test)
        } else {
            Ok((train, test))
        }
    }
}
