//! Non-ideality models and the Monte Carlo robustness harness.
//!
//! `perturb` produces an independently perturbed copy of a model — one
//! simulated chip instance. Weight-site noise and bit flips are drawn once
//! and frozen into the copy; activation-site noise is installed as a hook
//! with a frozen seed so every forward pass of that instance sees the same
//! noise while dropout masks keep resampling.

use std::io::Write;

use rand::RngCore;

use crate::bayes::{mc_predict, predictive_mean};
use crate::data::{Dataset, Targets, Task};
use crate::error::{Error, Result};
use crate::exec::{try_map_ordered, ExecMode};
use crate::forward::{forward, MaskPolicy};
use crate::metrics;
use crate::model::{HookNoise, HookSite, LayerParams, LayerSpec, Model, NoiseHook, Precision};
use crate::numfmt::sig9;
use crate::quant::{binarize_forward, code_bits, bits_to_code, dequantize, quantize, BitTensor};
use crate::rng::{derive_key, RngStream, StreamPurpose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaultKind {
    /// `w' = w + ε`, `ε ~ N(0, σ²)` i.i.d.
    AdditiveGauss { sigma: f64 },
    /// `w' = w · (1 + ε)`, `ε ~ N(0, σ²)`, so σ = 0 is the identity.
    MultiplicativeGauss { sigma: f64 },
    /// Each stored bit flips independently with probability `rate`.
    BitFlip { rate: f64 },
    /// `w' = w + U(−amplitude, amplitude)`.
    UniformNoise { amplitude: f64 },
}

impl FaultKind {
    pub fn level(&self) -> f64 {
        match *self {
            FaultKind::AdditiveGauss { sigma } | FaultKind::MultiplicativeGauss { sigma } => sigma,
            FaultKind::BitFlip { rate } => rate,
            FaultKind::UniformNoise { amplitude } => amplitude,
        }
    }

    pub fn family(&self) -> FaultFamily {
        match self {
            FaultKind::AdditiveGauss { .. } => FaultFamily::AdditiveGauss,
            FaultKind::MultiplicativeGauss { .. } => FaultFamily::MultiplicativeGauss,
            FaultKind::BitFlip { .. } => FaultFamily::BitFlip,
            FaultKind::UniformNoise { .. } => FaultFamily::UniformNoise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FaultKind::AdditiveGauss { sigma } | FaultKind::MultiplicativeGauss { sigma } => {
                if sigma < 0.0 {
                    return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
                }
            }
            FaultKind::BitFlip { rate } => {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Config(format!("bit-flip rate must be in [0, 1], got {rate}")));
                }
            }
            FaultKind::UniformNoise { amplitude } => {
                if amplitude < 0.0 {
                    return Err(Error::Config(format!(
                        "amplitude must be non-negative, got {amplitude}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultFamily {
    AdditiveGauss,
    MultiplicativeGauss,
    BitFlip,
    UniformNoise,
}

impl FaultFamily {
    pub fn at_level(&self, level: f64) -> FaultKind {
        match self {
            FaultFamily::AdditiveGauss => FaultKind::AdditiveGauss { sigma: level },
            FaultFamily::MultiplicativeGauss => FaultKind::MultiplicativeGauss { sigma: level },
            FaultFamily::BitFlip => FaultKind::BitFlip { rate: level },
            FaultFamily::UniformNoise => FaultKind::UniformNoise { amplitude: level },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FaultFamily::AdditiveGauss => "additive_gauss",
            FaultFamily::MultiplicativeGauss => "multiplicative_gauss",
            FaultFamily::BitFlip => "bit_flip",
            FaultFamily::UniformNoise => "uniform_noise",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultSite {
    Weights,
    /// Noise on the activations entering each binary dense layer, standing in
    /// for analog variation that cannot act on ±1 weights directly.
    PreSignActivations,
    Inputs,
}

impl FaultSite {
    pub fn name(&self) -> &'static str {
        match self {
            FaultSite::Weights => "weights",
            FaultSite::PreSignActivations => "pre_sign_activations",
            FaultSite::Inputs => "inputs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultModel {
    pub kind: FaultKind,
    pub site: FaultSite,
}

fn hook_noise(kind: &FaultKind) -> Result<(HookNoise, f64)> {
    match *kind {
        FaultKind::AdditiveGauss { sigma } => Ok((HookNoise::AdditiveGauss, sigma)),
        FaultKind::MultiplicativeGauss { sigma } => Ok((HookNoise::MultiplicativeGauss, sigma)),
        FaultKind::UniformNoise { amplitude } => Ok((HookNoise::Uniform, amplitude)),
        FaultKind::BitFlip { .. } => Err(Error::Config(
            "bit flips act on stored weights, not activations".into(),
        )),
    }
}

fn check_compatibility(model: &Model, fault: &FaultModel) -> Result<()> {
    fault.kind.validate()?;
    match fault.site {
        FaultSite::Weights => match fault.kind {
            FaultKind::BitFlip { .. } => {
                let mut any = false;
                for (li, spec) in model.layers.iter().enumerate() {
                    match spec {
                        LayerSpec::Dense {
                            precision: Precision::Full,
                            ..
                        } => {
                            return Err(Error::Config(format!(
                                "bit-flip faults need quantized or binary weights; layer {li} is full precision"
                            )));
                        }
                        LayerSpec::Dense { .. } | LayerSpec::BinaryDense { .. } => any = true,
                        _ => {}
                    }
                }
                if !any {
                    return Err(Error::Config("model has no weight-bearing layers".into()));
                }
                Ok(())
            }
            _ => {
                let has_dense = model
                    .layers
                    .iter()
                    .any(|l| matches!(l, LayerSpec::Dense { .. }));
                if !has_dense {
                    return Err(Error::Config(
                        "analog weight noise needs real-valued weights; use the pre-sign activation site for binary layers"
                            .into(),
                    ));
                }
                Ok(())
            }
        },
        FaultSite::PreSignActivations => {
            if !model.has_binary_layers() {
                return Err(Error::Config(
                    "the pre-sign activation site needs at least one binary dense layer".into(),
                ));
            }
            hook_noise(&fault.kind).map(|_| ())
        }
        FaultSite::Inputs => hook_noise(&fault.kind).map(|_| ()),
    }
}

/// Flip each stored bit independently with probability `rate`. Bits are
/// visited code by code, LSB first.
pub fn flip_bits(t: &BitTensor, rate: f64, rng: &mut RngStream) -> Result<BitTensor> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("bit-flip rate must be in [0, 1], got {rate}")));
    }
    let mut out = t.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    for code in &mut out.codes {
        let mut pattern = code_bits(*code, t.bits);
        for b in 0..t.bits {
            if rng.bernoulli(rate) {
                pattern ^= 1 << b;
            }
        }
        *code = bits_to_code(pattern, t.bits);
    }
    Ok(out)
}

/// Produce a perturbed copy of the model; the original is never modified.
/// A zero-magnitude fault returns an exact copy.
pub fn perturb(model: &Model, fault: &FaultModel, rng: &mut RngStream) -> Result<Model> {
    check_compatibility(model, fault)?;
    if fault.kind.level() == 0.0 {
        return Ok(model.clone());
    }
    let mut out = model.clone();
    match fault.site {
        FaultSite::Weights => match fault.kind {
            FaultKind::BitFlip { rate } => {
                for (spec, params) in out.layers.iter_mut().zip(&mut out.params) {
                    match (spec, params) {
                        (
                            LayerSpec::Dense { precision, .. },
                            LayerParams::Dense { weight, .. },
                        ) => {
                            let Precision::Quantized { bits } = *precision else {
                                unreachable!("checked by compatibility");
                            };
                            let codes = quantize(weight, bits)?;
                            let flipped = flip_bits(&codes, rate, rng)?;
                            *weight = dequantize(&flipped);
                            // The weights are now programmed conductances;
                            // re-quantizing would clamp fault outcomes away.
                            *precision = Precision::Full;
                        }
                        (LayerSpec::BinaryDense { .. }, LayerParams::BinaryDense { weight }) => {
                            // One stored bit per weight: a flip negates the sign.
                            *weight = binarize_forward(weight);
                            for w in weight.data_mut() {
                                if rng.bernoulli(rate) {
                                    *w = -*w;
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            _ => {
                for (spec, params) in out.layers.iter_mut().zip(&mut out.params) {
                    if let (
                        LayerSpec::Dense { precision, .. },
                        LayerParams::Dense { weight, .. },
                    ) = (spec, params)
                    {
                        let mut eff = match *precision {
                            Precision::Full => weight.clone(),
                            Precision::Quantized { bits } => dequantize(&quantize(weight, bits)?),
                        };
                        match fault.kind {
                            FaultKind::AdditiveGauss { sigma } => {
                                for w in eff.data_mut() {
                                    *w += rng.normal(0.0, sigma);
                                }
                            }
                            FaultKind::MultiplicativeGauss { sigma } => {
                                for w in eff.data_mut() {
                                    *w *= 1.0 + rng.normal(0.0, sigma);
                                }
                            }
                            FaultKind::UniformNoise { amplitude } => {
                                for w in eff.data_mut() {
                                    *w += rng.uniform(-amplitude, amplitude);
                                }
                            }
                            FaultKind::BitFlip { .. } => unreachable!(),
                        }
                        *weight = eff;
                        *precision = Precision::Full;
                    }
                }
            }
        },
        FaultSite::PreSignActivations | FaultSite::Inputs => {
            let (noise, level) = hook_noise(&fault.kind)?;
            let site = if fault.site == FaultSite::PreSignActivations {
                HookSite::PreSignActivations
            } else {
                HookSite::Inputs
            };
            out.push_hook(NoiseHook {
                site,
                noise,
                level,
                seed: rng.next_u64(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Rmse,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Rmse => "rmse",
        }
    }

    pub fn for_task(task: Task) -> Metric {
        match task {
            Task::Classification => Metric::Accuracy,
            Task::Regression => Metric::Rmse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub runs: usize,
    pub seed: u64,
    pub metric: Metric,
}

pub const DEFAULT_MC_RUNS: usize = 100;

/// How each perturbed instance is scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    /// Stochastic forward passes averaged into the prediction.
    pub passes: usize,
    /// Keep all masks instead of sampling (single deterministic pass).
    pub deterministic: bool,
}

pub const DEFAULT_EVAL_PASSES: usize = 20;

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            passes: DEFAULT_EVAL_PASSES,
            deterministic: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessPoint {
    pub level: f64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug)]
pub struct RobustnessCurve {
    pub family: FaultFamily,
    pub site: FaultSite,
    pub metric: Metric,
    pub seed: u64,
    pub points: Vec<RobustnessPoint>,
}

fn score(model: &Model, ds: &Dataset, metric: Metric, eval: &EvalProtocol, mask_root: u64) -> Result<f64> {
    let prediction = if eval.deterministic {
        forward(model, &ds.inputs, &MaskPolicy::KeepAll)?.output
    } else {
        // Runs are the parallel axis; passes stay serial inside a run.
        let dist = mc_predict(model, &ds.inputs, eval.passes, mask_root, ExecMode::Serial)?;
        predictive_mean(&dist)?
    };
    match (metric, &ds.targets) {
        (Metric::Accuracy, Targets::Labels(labels)) => metrics::accuracy(&prediction, labels),
        (Metric::Rmse, Targets::Values(t)) => metrics::rmse(&prediction, t),
        _ => Err(Error::Data("metric does not match the dataset targets".into())),
    }
}

/// Mean ± sample std of the metric over independently perturbed instances.
/// Run `r` draws faults from a stream keyed by `(seed, level, r)`, so results
/// at one level are unaffected by which other levels are swept.
pub fn run_monte_carlo(
    model: &Model,
    ds: &Dataset,
    fault: &FaultModel,
    mc: &McConfig,
    eval: &EvalProtocol,
    exec: ExecMode,
) -> Result<RobustnessPoint> {
    if mc.runs < 1 {
        return Err(Error::Config("monte carlo needs at least one run".into()));
    }
    if ds.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    check_compatibility(model, fault)?;
    let level = fault.kind.level();
    let values = try_map_ordered(exec, mc.runs, |run| -> Result<f64> {
        let mut fault_rng =
            RngStream::for_level(mc.seed, StreamPurpose::FaultInjection, level, run as u64);
        let perturbed = perturb(model, fault, &mut fault_rng)?;
        let mask_root = derive_key(&[mc.seed, level.to_bits(), run as u64]);
        score(&perturbed, ds, mc.metric, eval, mask_root)
    })?;
    let (mean, std) = metrics::mean_std(&values);
    if mc.runs == 1 {
        log::warn!("monte carlo with a single run: std reported as 0");
    }
    Ok(RobustnessPoint {
        level,
        mean,
        std,
        runs: mc.runs,
    })
}

/// One robustness point per level, levels strictly increasing.
pub fn sweep(
    model: &Model,
    ds: &Dataset,
    family: FaultFamily,
    site: FaultSite,
    levels: &[f64],
    mc: &McConfig,
    eval: &EvalProtocol,
    exec: ExecMode,
) -> Result<RobustnessCurve> {
    if levels.is_empty() {
        return Err(Error::Config("sweep needs at least one level".into()));
    }
    for pair in levels.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::Config(format!(
                "sweep levels must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let mut points = Vec::with_capacity(levels.len());
    for &level in levels {
        let fault = FaultModel {
            kind: family.at_level(level),
            site,
        };
        points.push(run_monte_carlo(model, ds, &fault, mc, eval, exec)?);
    }
    Ok(RobustnessCurve {
        family,
        site,
        metric: mc.metric,
        seed: mc.seed,
        points,
    })
}

impl RobustnessCurve {
    /// CSV schema: `fault_kind,site,level,runs,metric,mean,std`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "fault_kind,site,level,runs,metric,mean,std")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.family.name(),
                self.site.name(),
                sig9(p.level),
                p.runs,
                self.metric.name(),
                sig9(p.mean),
                sig9(p.std)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_moons;
    use crate::model::{LayerSpec, Model};
    use crate::norm::{AffineInit, Granularity, MaskMode, NormConfig, NormOrder, DEFAULT_EPS};
    use crate::tensor::Tensor;

    fn norm_cfg(channels: usize, p: f64) -> NormConfig {
        NormConfig {
            channels,
            order: NormOrder::Inverted,
            p,
            eps: DEFAULT_EPS,
            granularity: Granularity::Instance,
            mask_mode: MaskMode::VectorWise,
            init: AffineInit::Normal {
                sigma_gamma: 0.3,
                sigma_beta: 0.3,
            },
        }
    }

    fn float_model(seed: u64) -> Model {
        Model::new(
            vec![
                LayerSpec::Dense {
                    input: 2,
                    output: 100,
                    precision: Precision::Full,
                },
                LayerSpec::Norm(norm_cfg(100, 0.3)),
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 100,
                    output: 100,
                    precision: Precision::Full,
                },
                LayerSpec::Norm(norm_cfg(100, 0.3)),
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 100,
                    output: 2,
                    precision: Precision::Full,
                },
                LayerSpec::Softmax,
            ],
            seed,
        )
        .unwrap()
    }

    fn binary_model(seed: u64) -> Model {
        Model::new(
            vec![
                LayerSpec::BinaryDense { input: 2, output: 16 },
                LayerSpec::Norm(norm_cfg(16, 0.3)),
                LayerSpec::Relu,
                LayerSpec::BinaryDense { input: 16, output: 2 },
                LayerSpec::Softmax,
            ],
            seed,
        )
        .unwrap()
    }

    fn weights_of(model: &Model) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &model.params {
            match p {
                LayerParams::Dense { weight, .. } | LayerParams::BinaryDense { weight } => {
                    out.extend_from_slice(weight.data())
                }
                _ => {}
            }
        }
        out
    }

    #[test]
    fn null_fault_is_identity_for_all_kinds() {
        let model = float_model(1);
        let faults = [
            FaultKind::AdditiveGauss { sigma: 0.0 },
            FaultKind::MultiplicativeGauss { sigma: 0.0 },
            FaultKind::UniformNoise { amplitude: 0.0 },
        ];
        let mut rng = RngStream::new(0, StreamPurpose::FaultInjection, 0, 0);
        for kind in faults {
            let p = perturb(&model, &FaultModel { kind, site: FaultSite::Weights }, &mut rng).unwrap();
            assert_eq!(weights_of(&p), weights_of(&model));
        }
        let bin = binary_model(1);
        let p = perturb(
            &bin,
            &FaultModel { kind: FaultKind::BitFlip { rate: 0.0 }, site: FaultSite::Weights },
            &mut rng,
        )
        .unwrap();
        assert_eq!(weights_of(&p), weights_of(&bin));
    }

    #[test]
    fn additive_noise_std_matches() {
        let model = float_model(3); // > 10k weights
        let mut rng = RngStream::new(7, StreamPurpose::FaultInjection, 0, 0);
        let p = perturb(
            &model,
            &FaultModel { kind: FaultKind::AdditiveGauss { sigma: 0.1 }, site: FaultSite::Weights },
            &mut rng,
        )
        .unwrap();
        let before = weights_of(&model);
        let after = weights_of(&p);
        let deltas: Vec<f64> = before.iter().zip(&after).map(|(a, b)| b - a).collect();
        assert!(deltas.len() >= 10_000, "want a 10k-parameter check, got {}", deltas.len());
        let (_, std) = metrics::mean_std(&deltas);
        assert!((0.097..=0.103).contains(&std), "noise std {std}");
    }

    #[test]
    fn multiplicative_noise_keeps_zero_weights() {
        let mut model = float_model(3);
        if let LayerParams::Dense { weight, .. } = &mut model.params[0] {
            weight.data_mut()[0] = 0.0;
            weight.data_mut()[5] = 0.0;
        }
        let mut rng = RngStream::new(7, StreamPurpose::FaultInjection, 0, 0);
        let p = perturb(
            &model,
            &FaultModel {
                kind: FaultKind::MultiplicativeGauss { sigma: 0.1 },
                site: FaultSite::Weights,
            },
            &mut rng,
        )
        .unwrap();
        if let LayerParams::Dense { weight, .. } = &p.params[0] {
            assert_eq!(weight.data()[0], 0.0);
            assert_eq!(weight.data()[5], 0.0);
        }
    }

    #[test]
    fn flip_bits_edge_rates() {
        let t = BitTensor {
            codes: vec![0, 5, -3],
            bits: 8,
            scale: 0.01,
            shape: vec![3],
        };
        let mut rng = RngStream::new(1, StreamPurpose::FaultInjection, 0, 0);
        let same = flip_bits(&t, 0.0, &mut rng).unwrap();
        assert_eq!(same.codes, t.codes);
        let all = flip_bits(&t, 1.0, &mut rng).unwrap();
        assert_eq!(code_bits(all.codes[0], 8), 0b1111_1111);
        // rate 1 flips every bit; applying it twice restores the original
        let restored = flip_bits(&all, 1.0, &mut rng).unwrap();
        assert_eq!(restored.codes, t.codes);
    }

    #[test]
    fn flip_bits_same_stream_is_involution() {
        let t = BitTensor {
            codes: (0..64).map(|i| i - 32).collect(),
            bits: 8,
            scale: 1.0,
            shape: vec![64],
        };
        let rng = RngStream::new(9, StreamPurpose::FaultInjection, 0, 0);
        let once = flip_bits(&t, 0.37, &mut rng.clone()).unwrap();
        let twice = flip_bits(&once, 0.37, &mut rng.clone()).unwrap();
        assert_eq!(twice.codes, t.codes);
    }

    #[test]
    fn binary_bitflip_negates_signs() {
        let bin = binary_model(2);
        let mut rng = RngStream::new(5, StreamPurpose::FaultInjection, 0, 0);
        let p = perturb(
            &bin,
            &FaultModel { kind: FaultKind::BitFlip { rate: 1.0 }, site: FaultSite::Weights },
            &mut rng,
        )
        .unwrap();
        let before = weights_of(&bin);
        let after = weights_of(&p);
        for (a, b) in before.iter().zip(&after) {
            let sign_before = if *a < 0.0 { -1.0 } else { 1.0 };
            assert_eq!(*b, -sign_before);
        }
    }

    #[test]
    fn incompatible_sites_error_without_mutation() {
        let fp = float_model(1);
        let mut rng = RngStream::new(0, StreamPurpose::FaultInjection, 0, 0);
        // bit flips on a full-precision model
        assert!(perturb(
            &fp,
            &FaultModel { kind: FaultKind::BitFlip { rate: 0.1 }, site: FaultSite::Weights },
            &mut rng
        )
        .is_err());
        // pre-sign site without binary layers
        assert!(perturb(
            &fp,
            &FaultModel {
                kind: FaultKind::AdditiveGauss { sigma: 0.1 },
                site: FaultSite::PreSignActivations
            },
            &mut rng
        )
        .is_err());
        // analog weight noise on a purely binary model
        let bin = binary_model(1);
        assert!(perturb(
            &bin,
            &FaultModel { kind: FaultKind::AdditiveGauss { sigma: 0.1 }, site: FaultSite::Weights },
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn presign_hook_is_frozen_per_instance() {
        let bin = binary_model(4);
        let mut rng = RngStream::new(3, StreamPurpose::FaultInjection, 0, 0);
        let p = perturb(
            &bin,
            &FaultModel {
                kind: FaultKind::AdditiveGauss { sigma: 0.5 },
                site: FaultSite::PreSignActivations,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.hooks().len(), 1);
        let x = Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.0]).unwrap();
        let a = forward(&p, &x, &MaskPolicy::KeepAll).unwrap().output;
        let b = forward(&p, &x, &MaskPolicy::KeepAll).unwrap().output;
        assert!(a.bit_eq(&b));
        // and the hook noise actually changes the computation
        let clean = forward(&bin, &x, &MaskPolicy::KeepAll).unwrap().output;
        assert!(!a.bit_eq(&clean));
    }

    fn moons_mc(runs: usize, seed: u64) -> McConfig {
        McConfig {
            runs,
            seed,
            metric: Metric::Accuracy,
        }
    }

    #[test]
    fn level_zero_point_matches_clean_metric_when_deterministic() {
        let model = binary_model(8);
        let ds = two_moons(64, 0.15, 3).unwrap();
        let eval = EvalProtocol {
            passes: 1,
            deterministic: true,
        };
        let point = run_monte_carlo(
            &model,
            &ds,
            &FaultModel { kind: FaultKind::BitFlip { rate: 0.0 }, site: FaultSite::Weights },
            &moons_mc(8, 42),
            &eval,
            ExecMode::Serial,
        )
        .unwrap();
        let clean = score(&model, &ds, Metric::Accuracy, &eval, 0).unwrap();
        assert_eq!(point.mean, clean);
        assert_eq!(point.std, 0.0);
    }

    #[test]
    fn single_run_reports_zero_std() {
        let model = binary_model(8);
        let ds = two_moons(32, 0.15, 3).unwrap();
        let point = run_monte_carlo(
            &model,
            &ds,
            &FaultModel { kind: FaultKind::BitFlip { rate: 0.1 }, site: FaultSite::Weights },
            &moons_mc(1, 42),
            &EvalProtocol::default(),
            ExecMode::Serial,
        )
        .unwrap();
        assert_eq!(point.std, 0.0);
        assert_eq!(point.runs, 1);
    }

    #[test]
    fn serial_and_parallel_sweeps_are_byte_identical() {
        let model = binary_model(8);
        let ds = two_moons(64, 0.15, 3).unwrap();
        let mc = moons_mc(16, 9);
        let eval = EvalProtocol {
            passes: 4,
            deterministic: false,
        };
        let a = sweep(&model, &ds, FaultFamily::BitFlip, FaultSite::Weights, &[0.0, 0.1, 0.2], &mc, &eval, ExecMode::Serial).unwrap();
        let b = sweep(&model, &ds, FaultFamily::BitFlip, FaultSite::Weights, &[0.0, 0.1, 0.2], &mc, &eval, ExecMode::Parallel).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn per_level_streams_do_not_depend_on_the_level_set() {
        let model = binary_model(8);
        let ds = two_moons(64, 0.15, 3).unwrap();
        let mc = moons_mc(8, 9);
        let eval = EvalProtocol {
            passes: 2,
            deterministic: false,
        };
        let wide = sweep(&model, &ds, FaultFamily::BitFlip, FaultSite::Weights, &[0.05, 0.1, 0.2], &mc, &eval, ExecMode::Serial).unwrap();
        let narrow = sweep(&model, &ds, FaultFamily::BitFlip, FaultSite::Weights, &[0.1], &mc, &eval, ExecMode::Serial).unwrap();
        let wide_mid = wide.points[1];
        let only = narrow.points[0];
        assert_eq!(wide_mid.mean, only.mean);
        assert_eq!(wide_mid.std, only.std);
    }

    #[test]
    fn sweep_rejects_unsorted_levels() {
        let model = binary_model(8);
        let ds = two_moons(32, 0.15, 3).unwrap();
        assert!(sweep(
            &model,
            &ds,
            FaultFamily::BitFlip,
            FaultSite::Weights,
            &[0.1, 0.1],
            &moons_mc(2, 1),
            &EvalProtocol::default(),
            ExecMode::Serial
        )
        .is_err());
    }

    #[test]
    fn curve_csv_schema() {
        let curve = RobustnessCurve {
            family: FaultFamily::BitFlip,
            site: FaultSite::Weights,
            metric: Metric::Accuracy,
            seed: 0,
            points: vec![RobustnessPoint {
                level: 0.05,
                mean: 0.9,
                std: 0.01,
                runs: 100,
            }],
        };
        let csv = curve.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "fault_kind,site,level,runs,metric,mean,std");
        assert_eq!(
            lines.next().unwrap(),
            "bit_flip,weights,5.00000000e-2,100,accuracy,9.00000000e-1,1.00000000e-2"
        );
    }
}
