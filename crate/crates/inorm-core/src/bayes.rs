//! Monte Carlo inference over dropout masks, predictive uncertainty, and
//! NLL-threshold out-of-distribution detection.

use std::io::Write;

use crate::data::{Dataset, Targets, Task};
use crate::error::{Error, Result};
use crate::exec::{try_map_ordered, ExecMode};
use crate::forward::{forward, MaskPolicy};
use crate::metrics;
use crate::model::Model;
use crate::numfmt::sig9;
use crate::rng::{derive_key, RngStream, StreamPurpose};
use crate::tensor::Tensor;

/// Outputs of `T` stochastic forward passes over an `N`-row batch.
pub struct PredictiveDistribution {
    /// `[T × N × C]`, row-major.
    samples: Tensor,
    pub task: Task,
}

impl PredictiveDistribution {
    pub fn passes(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn batch(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.samples.shape()[2]
    }

    /// The `[N × C]` output of pass `t`.
    pub fn pass(&self, t: usize) -> Tensor {
        let (n, c) = (self.batch(), self.outputs());
        let start = t * n * c;
        Tensor::matrix(n, c, self.samples.data()[start..start + n * c].to_vec()).expect("finite")
    }
}

/// Run `t_passes` stochastic forward passes; pass `t` samples its masks from
/// streams keyed by `(mask_root, layer, t)`.
pub fn mc_predict(
    model: &Model,
    inputs: &Tensor,
    t_passes: usize,
    mask_root: u64,
    exec: ExecMode,
) -> Result<PredictiveDistribution> {
    if t_passes < 1 {
        return Err(Error::Config("mc_predict needs at least one pass".into()));
    }
    if !model.has_stochastic_norm() {
        log::warn!("mc_predict on a model without stochastic norm layers: all passes are identical");
    }
    let outputs = try_map_ordered(exec, t_passes, |t| {
        let policy = MaskPolicy::Sample {
            root_seed: mask_root,
            pass_index: t as u64,
        };
        forward(model, inputs, &policy).map(|p| p.output)
    })?;
    let (n, c) = (outputs[0].rows(), outputs[0].cols());
    let mut data = Vec::with_capacity(t_passes * n * c);
    for out in &outputs {
        data.extend_from_slice(out.data());
    }
    let task = if model.is_classifier() {
        Task::Classification
    } else {
        Task::Regression
    };
    Ok(PredictiveDistribution {
        samples: Tensor::new(vec![t_passes, n, c], data)?,
        task,
    })
}

/// Mean over passes. Classification rows are renormalized to sum to one.
pub fn predictive_mean(dist: &PredictiveDistribution) -> Result<Tensor> {
    let (t, n, c) = (dist.passes(), dist.batch(), dist.outputs());
    let mut mean = vec![0.0; n * c];
    for ti in 0..t {
        let base = ti * n * c;
        for (m, v) in mean.iter_mut().zip(&dist.samples.data()[base..base + n * c]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    if dist.task == Task::Classification {
        for r in 0..n {
            let row = &mut mean[r * c..(r + 1) * c];
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
    Tensor::matrix(n, c, mean)
}

/// Per-output sample variance over passes (divisor T−1). Needs T ≥ 2.
pub fn predictive_variance(dist: &PredictiveDistribution) -> Result<Tensor> {
    let (t, n, c) = (dist.passes(), dist.batch(), dist.outputs());
    if t < 2 {
        return Err(Error::Config(
            "predictive variance needs at least two passes".into(),
        ));
    }
    let mut mean = vec![0.0; n * c];
    for ti in 0..t {
        let base = ti * n * c;
        for (m, v) in mean.iter_mut().zip(&dist.samples.data()[base..base + n * c]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut var = vec![0.0; n * c];
    for ti in 0..t {
        let base = ti * n * c;
        for (i, v) in dist.samples.data()[base..base + n * c].iter().enumerate() {
            let e = v - mean[i];
            var[i] += e * e;
        }
    }
    for v in &mut var {
        *v /= (t - 1) as f64;
    }
    Tensor::matrix(n, c, var)
}

/// Per-sample negative log-likelihood of the true label under the predictive
/// mean, floored at 1e-12 inside the logarithm.
pub fn nll_score(mean_probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (n, c) = (mean_probs.rows(), mean_probs.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} probability rows but {} labels",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Data(format!(
                "label {y} out of range for {c} classes (row {r})"
            )));
        }
        out.push(-(mean_probs.row(r)[y].max(1e-12)).ln());
    }
    Ok(out)
}

/// NLL threshold detector output for one evaluation set.
#[derive(Clone, Debug)]
pub struct OodResult {
    /// Mean in-distribution NLL, fixed before scoring any shifted set.
    pub threshold: f64,
    pub per_sample_nll: Vec<f64>,
    /// Fraction of samples with NLL strictly above the threshold.
    pub detection_rate: f64,
}

impl OodResult {
    fn score(threshold: f64, nll: Vec<f64>) -> Self {
        let over = nll.iter().filter(|&&v| v > threshold).count();
        let detection_rate = over as f64 / nll.len() as f64;
        Self {
            threshold,
            per_sample_nll: nll,
            detection_rate,
        }
    }
}

/// One report row of [`ood_evaluate`].
#[derive(Clone, Debug)]
pub struct OodRow {
    /// Corruption family: `none`, `rotation`, or `uniform`.
    pub corruption: String,
    /// Stage or level of the corruption; 0 for the baseline row.
    pub param: f64,
    pub accuracy: f64,
    /// Sample std of per-pass accuracies (spread of the stochastic ensemble).
    pub accuracy_std: f64,
    pub mean_nll: f64,
    pub result: OodResult,
}

/// Evaluate the detector: threshold from the in-distribution test set, then
/// accuracy / mean NLL / detection rate per shifted set, in input order. The
/// first returned row is the in-distribution baseline.
pub fn ood_evaluate(
    model: &Model,
    id_test: &Dataset,
    ood_sets: &[(String, f64, Dataset)],
    t_passes: usize,
    seed: u64,
    exec: ExecMode,
) -> Result<Vec<OodRow>> {
    if id_test.is_empty() {
        return Err(Error::Data("in-distribution test set is empty".into()));
    }
    if id_test.task != Task::Classification {
        return Err(Error::Data("the detector needs a classification task".into()));
    }

    let score_set = |name: &str, param: f64, ds: &Dataset, threshold: Option<f64>| -> Result<OodRow> {
        if ds.is_empty() {
            return Err(Error::Data(format!("evaluation set `{name}` (param {param}) is empty")));
        }
        let labels = ds
            .labels()
            .ok_or_else(|| Error::Data(format!("evaluation set `{name}` has no labels")))?;
        let mask_root = derive_key(&[seed, name.len() as u64, param.to_bits()]);
        let dist = mc_predict(model, &ds.inputs, t_passes, mask_root, exec)?;
        let mean = predictive_mean(&dist)?;
        let accuracy = metrics::accuracy(&mean, labels)?;
        let per_pass_acc: Vec<f64> = (0..dist.passes())
            .map(|t| metrics::accuracy(&dist.pass(t), labels))
            .collect::<Result<_>>()?;
        let (_, accuracy_std) = metrics::mean_std(&per_pass_acc);
        let nll = nll_score(&mean, labels)?;
        let mean_nll = nll.iter().sum::<f64>() / nll.len() as f64;
        let threshold = threshold.unwrap_or(mean_nll);
        Ok(OodRow {
            corruption: name.to_string(),
            param,
            accuracy,
            accuracy_std,
            mean_nll,
            result: OodResult::score(threshold, nll),
        })
    };

    let baseline = score_set("none", 0.0, id_test, None)?;
    let threshold = baseline.result.threshold;
    let mut rows = vec![baseline];
    for (name, param, ds) in ood_sets {
        rows.push(score_set(name, *param, ds, Some(threshold))?);
    }
    Ok(rows)
}

/// Distribution-shift transforms applied to dataset inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    /// Adds `U(−a, a)` per feature with `a = level · 0.25 · training std`.
    UniformNoise { level: u32 },
    /// Rotates 2-D features about the data centroid by `7° · stage`.
    Rotation { stage: i32 },
}

/// Base uniform-noise amplitude as a fraction of the per-feature training std.
pub const UNIFORM_NOISE_BASE: f64 = 0.25;
/// Rotation step in degrees.
pub const ROTATION_STEP_DEG: f64 = 7.0;
/// Number of rotation stages in the standard shift schedule.
pub const ROTATION_STAGES: i32 = 12;

/// Apply a corruption. Level/stage 0 returns the dataset unchanged.
pub fn corrupt(ds: &Dataset, corruption: &Corruption, seed: u64) -> Result<Dataset> {
    match *corruption {
        Corruption::UniformNoise { level } => {
            if level == 0 {
                return Ok(ds.clone());
            }
            let d = ds.n_features();
            let std = match &ds.feature_stats {
                Some(stats) => stats.std.clone(),
                None => crate::data::feature_stats(ds)?.std,
            };
            let mut rng = RngStream::for_level(
                seed,
                StreamPurpose::FaultInjection,
                level as f64,
                0,
            );
            let mut out = ds.clone();
            for r in 0..out.len() {
                let row = out.inputs.row_mut(r);
                for j in 0..d {
                    let a = level as f64 * UNIFORM_NOISE_BASE * std[j];
                    row[j] += rng.uniform(-a, a);
                }
            }
            Ok(out)
        }
        Corruption::Rotation { stage } => {
            if ds.n_features() != 2 {
                return Err(Error::Data(format!(
                    "rotation needs 2-D features, got {}",
                    ds.n_features()
                )));
            }
            if stage.abs() > ROTATION_STAGES {
                return Err(Error::Data(format!(
                    "rotation stage must lie in [−{ROTATION_STAGES}, {ROTATION_STAGES}], got {stage}"
                )));
            }
            if stage == 0 {
                return Ok(ds.clone());
            }
            let angle = (stage as f64) * ROTATION_STEP_DEG.to_radians();
            let (sin, cos) = angle.sin_cos();
            let n = ds.len() as f64;
            let (mut cx, mut cy) = (0.0, 0.0);
            for r in 0..ds.len() {
                cx += ds.inputs.row(r)[0];
                cy += ds.inputs.row(r)[1];
            }
            cx /= n;
            cy /= n;
            let mut out = ds.clone();
            for r in 0..out.len() {
                let row = out.inputs.row_mut(r);
                let (x, y) = (row[0] - cx, row[1] - cy);
                row[0] = cx + x * cos - y * sin;
                row[1] = cy + x * sin + y * cos;
            }
            Ok(out)
        }
    }
}

/// Report CSV: `corruption,param,accuracy,mean_nll,detection_rate`.
pub fn write_ood_csv<W: Write>(rows: &[OodRow], mut w: W) -> Result<()> {
    writeln!(w, "corruption,param,accuracy,mean_nll,detection_rate")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.corruption,
            sig9(row.param),
            sig9(row.accuracy),
            sig9(row.mean_nll),
            sig9(row.result.detection_rate)
        )?;
    }
    Ok(())
}
