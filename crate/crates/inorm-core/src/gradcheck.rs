//! Central finite-difference verification of the analytic gradients.

use rand::RngCore;

use crate::data::Targets;
use crate::error::Result;
use crate::forward::{backward, forward, Gradients, LayerGrads, MaskPolicy};
use crate::loss::{loss_eval, LossKind};
use crate::model::{LayerParams, LayerSpec, Model, Precision};
use crate::norm::{AffineInit, Granularity, MaskMode, NormConfig, NormOrder, DEFAULT_EPS};
use crate::rng::{derive_key, RngStream, StreamPurpose};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;
/// Random instances checked per layer kind.
pub const INSTANCES_PER_CASE: usize = 20;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub case: String,
    pub parameter: String,
    /// Max relative error for finite-difference entries; final/initial loss
    /// ratio for the loss-decrease proxy.
    pub observed: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:30} {:28} {:>12.3e} (< {:.0e})  {}\n",
                e.case,
                e.parameter,
                e.observed,
                e.threshold,
                if e.passed { "pass" } else { "FAIL" }
            ));
        }
        let n_fail = self.entries.iter().filter(|e| !e.passed).count();
        out.push_str(&format!(
            "{} checks, {} failed\n",
            self.entries.len(),
            n_fail
        ));
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn loss_of(model: &Model, inputs: &Tensor, targets: &Targets, kind: LossKind, policy: &MaskPolicy) -> Result<f64> {
    let pass = forward(model, inputs, policy)?;
    Ok(loss_eval(kind, &pass.output, targets)?.0)
}

fn named_params(grads: &Gradients) -> Vec<(usize, &'static str, &Tensor)> {
    let mut out = Vec::new();
    for (li, g) in grads.layers.iter().enumerate() {
        match g {
            LayerGrads::Dense { weight, bias } => {
                out.push((li, "weight", weight));
                out.push((li, "bias", bias));
            }
            // Binary weights are non-differentiable; the training-progress
            // proxy covers them.
            LayerGrads::BinaryDense { .. } => {}
            LayerGrads::Norm { gamma, beta } => {
                out.push((li, "gamma", gamma));
                out.push((li, "beta", beta));
            }
            LayerGrads::None => {}
        }
    }
    out
}

fn param_slice_mut<'a>(model: &'a mut Model, li: usize, name: &str) -> &'a mut [f64] {
    match (&mut model.params[li], name) {
        (LayerParams::Dense { weight, .. }, "weight") => weight.data_mut(),
        (LayerParams::Dense { bias, .. }, "bias") => bias.data_mut(),
        (LayerParams::Norm { gamma, .. }, "gamma") => gamma.data_mut(),
        (LayerParams::Norm { beta, .. }, "beta") => beta.data_mut(),
        _ => panic!("unknown parameter {name} at layer {li}"),
    }
}

/// Compare provided analytic gradients against central finite differences of
/// the loss. Returns `(parameter name, max relative error)` per tensor.
pub fn compare_with_fd(
    model: &Model,
    inputs: &Tensor,
    targets: &Targets,
    kind: LossKind,
    policy: &MaskPolicy,
    h: f64,
    analytic: &Gradients,
    check_input: bool,
) -> Result<Vec<(String, f64)>> {
    let mut results = Vec::new();
    for (li, name, grad) in named_params(analytic) {
        let mut max_err: f64 = 0.0;
        for i in 0..grad.len() {
            let mut plus = model.clone();
            param_slice_mut(&mut plus, li, name)[i] += h;
            let mut minus = model.clone();
            param_slice_mut(&mut minus, li, name)[i] -= h;
            let numeric = (loss_of(&plus, inputs, targets, kind, policy)?
                - loss_of(&minus, inputs, targets, kind, policy)?)
                / (2.0 * h);
            max_err = max_err.max(rel_err(grad.data()[i], numeric));
        }
        results.push((format!("layer{li}.{name}"), max_err));
    }
    if check_input {
        let mut max_err: f64 = 0.0;
        for i in 0..inputs.len() {
            let mut plus = inputs.clone();
            plus.data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus.data_mut()[i] -= h;
            let numeric = (loss_of(model, &plus, targets, kind, policy)?
                - loss_of(model, &minus, targets, kind, policy)?)
                / (2.0 * h);
            max_err = max_err.max(rel_err(analytic.input.data()[i], numeric));
        }
        results.push(("input".into(), max_err));
    }
    Ok(results)
}

/// Compute analytic gradients and compare them against finite differences.
pub fn fd_check_model(
    model: &Model,
    inputs: &Tensor,
    targets: &Targets,
    kind: LossKind,
    policy: &MaskPolicy,
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let pass = forward(model, inputs, policy)?;
    let (_, dpred) = loss_eval(kind, &pass.output, targets)?;
    let grads = backward(model, &pass, &dpred)?;
    compare_with_fd(model, inputs, targets, kind, policy, h, &grads, true)
}

struct Case {
    name: &'static str,
    model: Model,
    inputs: Tensor,
    targets: Targets,
    kind: LossKind,
}

fn dense(input: usize, output: usize) -> LayerSpec {
    LayerSpec::Dense {
        input,
        output,
        precision: Precision::Full,
    }
}

fn norm_spec(channels: usize, granularity: Granularity, order: NormOrder, p: f64) -> LayerSpec {
    LayerSpec::Norm(NormConfig {
        channels,
        order,
        p,
        eps: DEFAULT_EPS,
        granularity,
        mask_mode: MaskMode::VectorWise,
        init: AffineInit::Normal {
            sigma_gamma: 0.3,
            sigma_beta: 0.3,
        },
    })
}

fn random_batch(rng: &mut RngStream, n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    rng.fill_normal(&mut data, 0.0, 1.0);
    Tensor::matrix(n, d, data).expect("finite")
}

fn value_targets(rng: &mut RngStream, n: usize, k: usize) -> Targets {
    Targets::Values(random_batch(rng, n, k))
}

fn label_targets(rng: &mut RngStream, n: usize, classes: usize) -> Targets {
    Targets::Labels((0..n).map(|_| (rng.next_u64() % classes as u64) as usize).collect())
}

fn build_case(name: &'static str, instance: usize, suite_seed: u64) -> Result<Case> {
    let seed = derive_key(&[suite_seed, name.len() as u64, instance as u64]);
    let mut rng = RngStream::new(seed, StreamPurpose::Init, 99, instance as u64);
    let case = match name {
        "dense" => Case {
            name,
            model: Model::new(vec![dense(3, 3)], seed)?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 3),
            kind: LossKind::Mse,
        },
        "relu" => Case {
            name,
            model: Model::new(vec![dense(3, 4), LayerSpec::Relu], seed)?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 4),
            kind: LossKind::Mse,
        },
        "inverted_norm_instance" => Case {
            name,
            model: Model::new(
                vec![
                    dense(3, 6),
                    norm_spec(6, Granularity::Instance, NormOrder::Inverted, 0.3),
                ],
                seed,
            )?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 6),
            kind: LossKind::Mse,
        },
        "inverted_norm_group2" => Case {
            name,
            model: Model::new(
                vec![
                    dense(3, 6),
                    norm_spec(6, Granularity::Group(2), NormOrder::Inverted, 0.3),
                ],
                seed,
            )?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 6),
            kind: LossKind::Mse,
        },
        "conventional_norm" => Case {
            name,
            model: Model::new(
                vec![
                    dense(3, 6),
                    norm_spec(6, Granularity::Instance, NormOrder::Conventional, 0.0),
                ],
                seed,
            )?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 6),
            kind: LossKind::Mse,
        },
        "softmax_ce" => Case {
            name,
            model: Model::new(vec![dense(3, 4), LayerSpec::Softmax], seed)?,
            inputs: random_batch(&mut rng, 5, 3),
            targets: label_targets(&mut rng, 5, 4),
            kind: LossKind::CrossEntropy,
        },
        "binary_dense_input" => Case {
            name,
            model: Model::new(vec![LayerSpec::BinaryDense { input: 3, output: 4 }], seed)?,
            inputs: random_batch(&mut rng, 4, 3),
            targets: value_targets(&mut rng, 4, 4),
            kind: LossKind::Mse,
        },
        "deep_mixed" => Case {
            name,
            model: Model::new(
                vec![
                    dense(2, 8),
                    norm_spec(8, Granularity::Instance, NormOrder::Inverted, 0.3),
                    LayerSpec::Relu,
                    dense(8, 8),
                    norm_spec(8, Granularity::Group(2), NormOrder::Inverted, 0.3),
                    LayerSpec::Relu,
                    dense(8, 2),
                    LayerSpec::Softmax,
                ],
                seed,
            )?,
            inputs: random_batch(&mut rng, 4, 2),
            targets: label_targets(&mut rng, 4, 2),
            kind: LossKind::CrossEntropy,
        },
        other => panic!("unknown gradcheck case {other}"),
    };
    Ok(case)
}

const FD_CASES: [&str; 8] = [
    "dense",
    "relu",
    "inverted_norm_instance",
    "inverted_norm_group2",
    "conventional_norm",
    "softmax_ce",
    "binary_dense_input",
    "deep_mixed",
];

/// Training-progress check standing in for the non-differentiable binary
/// weight path: a short run must reduce the loss.
fn binary_loss_decrease(suite_seed: u64) -> Result<GradCheckEntry> {
    let ds = crate::data::two_moons(32, 0.1, derive_key(&[suite_seed, 0xb1]))?;
    let layers = vec![
        LayerSpec::BinaryDense { input: 2, output: 8 },
        norm_spec(8, Granularity::Instance, NormOrder::Inverted, 0.0),
        LayerSpec::Relu,
        dense(8, 2),
        LayerSpec::Softmax,
    ];
    let mut model = Model::new(layers, derive_key(&[suite_seed, 0xb2]))?;
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 32,
        learning_rate: 0.05,
        weight_decay: 0.0,
        momentum: 0.0,
        seed: derive_key(&[suite_seed, 0xb3]),
    };
    let report = train(&mut model, &ds, &cfg)?;
    let first = report.history.first().map(|e| e.loss).unwrap_or(f64::NAN);
    let last = report.history.last().map(|e| e.loss).unwrap_or(f64::NAN);
    let ratio = last / first;
    Ok(GradCheckEntry {
        case: "binary_dense".into(),
        parameter: "weight [loss-decrease proxy]".into(),
        observed: ratio,
        threshold: 1.0,
        passed: ratio.is_finite() && ratio < 1.0,
    })
}

/// Run every layer-kind check over [`INSTANCES_PER_CASE`] random instances,
/// reporting the worst error per parameter.
pub fn standard_suite(suite_seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    for name in FD_CASES {
        let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
        for instance in 0..INSTANCES_PER_CASE {
            let case = build_case(name, instance, suite_seed)?;
            let policy = MaskPolicy::Sample {
                root_seed: derive_key(&[suite_seed, instance as u64, 0x5a]),
                pass_index: 0,
            };
            let results = fd_check_model(
                &case.model,
                &case.inputs,
                &case.targets,
                case.kind,
                &policy,
                DEFAULT_STEP,
            )?;
            for (param, err) in results {
                let slot = worst.entry(param).or_insert(0.0);
                *slot = slot.max(err);
            }
        }
        for (param, err) in worst {
            entries.push(GradCheckEntry {
                case: name.into(),
                parameter: param,
                observed: err,
                threshold: tolerance,
                passed: err < tolerance,
            });
        }
    }
    entries.push(binary_loss_decrease(suite_seed)?);
    Ok(GradCheckReport {
        tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_suite_passes() {
        let report = standard_suite(2024, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed(), "\n{}", report.render());
    }

    #[test]
    fn suite_is_deterministic() {
        let a = standard_suite(7, DEFAULT_TOLERANCE).unwrap();
        let b = standard_suite(7, DEFAULT_TOLERANCE).unwrap();
        let obs = |r: &GradCheckReport| r.entries.iter().map(|e| e.observed).collect::<Vec<_>>();
        assert_eq!(obs(&a), obs(&b));
    }

    #[test]
    fn corrupted_gradient_is_flagged_with_layer_name() {
        let case = build_case("inverted_norm_instance", 0, 5).unwrap();
        let policy = MaskPolicy::Sample {
            root_seed: 3,
            pass_index: 0,
        };
        let pass = forward(&case.model, &case.inputs, &policy).unwrap();
        let (_, dpred) = loss_eval(case.kind, &pass.output, &case.targets).unwrap();
        let mut grads = backward(&case.model, &pass, &dpred).unwrap();
        if let LayerGrads::Norm { gamma, .. } = &mut grads.layers[1] {
            gamma.data_mut()[0] += 0.5;
        } else {
            panic!("expected norm grads at layer 1");
        }
        let results = compare_with_fd(
            &case.model,
            &case.inputs,
            &case.targets,
            case.kind,
            &policy,
            DEFAULT_STEP,
            &grads,
            false,
        )
        .unwrap();
        let bad: Vec<&(String, f64)> =
            results.iter().filter(|(_, e)| *e > DEFAULT_TOLERANCE).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].0, "layer1.gamma");
    }

    #[test]
    fn mask_resampling_between_passes_breaks_the_check() {
        // Backward must reuse the forward's masks; splicing gradients from a
        // differently-masked pass is detectable by finite differences.
        let case = build_case("inverted_norm_instance", 3, 11).unwrap();
        let policy_a = MaskPolicy::Sample {
            root_seed: 21,
            pass_index: 0,
        };
        // Find a pass index whose mask pattern differs from pass 0.
        let masks_a = forward(&case.model, &case.inputs, &policy_a)
            .unwrap()
            .norm_masks(1)
            .unwrap()
            .clone();
        let mut policy_b = policy_a;
        let mut found = false;
        for pass_index in 1..64 {
            policy_b = MaskPolicy::Sample {
                root_seed: 21,
                pass_index,
            };
            let masks_b = forward(&case.model, &case.inputs, &policy_b)
                .unwrap()
                .norm_masks(1)
                .unwrap()
                .clone();
            if masks_b != masks_a {
                found = true;
                break;
            }
        }
        assert!(found, "no differing mask pattern in 64 passes");

        let pass_b = forward(&case.model, &case.inputs, &policy_b).unwrap();
        let (_, dpred) = loss_eval(case.kind, &pass_b.output, &case.targets).unwrap();
        let grads_b = backward(&case.model, &pass_b, &dpred).unwrap();
        // Compare gradients from pass B against finite differences under
        // policy A: at least one norm parameter must blow past the tolerance.
        let results = compare_with_fd(
            &case.model,
            &case.inputs,
            &case.targets,
            case.kind,
            &policy_a,
            DEFAULT_STEP,
            &grads_b,
            false,
        )
        .unwrap();
        assert!(
            results
                .iter()
                .any(|(name, err)| name.starts_with("layer1.") && *err > DEFAULT_TOLERANCE),
            "{results:?}"
        );
    }
}
