//! Synthetic dataset generators, splits, feature normalization, and CSV I/O.
//!
//! Generators are pure functions of their arguments including the seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamPurpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-feature mean and standard deviation of the training split, carried so
/// later stages (corruptions, normalization of held-out data) use training
/// statistics rather than their own.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
    pub task: Task,
    pub feature_stats: Option<FeatureStats>,
}

// Stream ids for data-domain randomness under StreamPurpose::DataShuffle.
const STREAM_SPLIT: u64 = 0;
const STREAM_MOONS: u64 = 1;
const STREAM_SINE: u64 = 2;

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, task: Task) -> Result<Self> {
        if inputs.ndim() != 2 {
            return Err(Error::Data(format!(
                "dataset inputs must be [N × D], got {:?}",
                inputs.shape()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if targets.len() != inputs.rows() {
            return Err(Error::Data(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        match (&targets, task) {
            (Targets::Labels(_), Task::Classification) | (Targets::Values(_), Task::Regression) => {}
            _ => return Err(Error::Data("target kind does not match task".into())),
        }
        Ok(Self {
            inputs,
            targets,
            task,
            feature_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            _ => None,
        }
    }

    pub fn values(&self) -> Option<&Tensor> {
        match &self.targets {
            Targets::Values(t) => Some(t),
            _ => None,
        }
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut inputs = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            inputs.extend_from_slice(self.inputs.row(i));
        }
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(t) => {
                let k = t.cols();
                let mut v = Vec::with_capacity(idx.len() * k);
                for &i in idx {
                    v.extend_from_slice(t.row(i));
                }
                Targets::Values(Tensor::matrix(idx.len(), k, v).expect("finite"))
            }
        };
        Dataset {
            inputs: Tensor::matrix(idx.len(), d, inputs).expect("finite"),
            targets,
            task: self.task,
            feature_stats: self.feature_stats.clone(),
        }
    }
}

/// Two interleaved half-circles with Gaussian coordinate noise, binary labels,
/// balanced classes. Points are laid out class-0 arc first, then class-1.
pub fn two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Data(format!("two_moons needs n >= 2, got {n}")));
    }
    if n % 2 != 0 {
        return Err(Error::Data(format!("two_moons needs an even n, got {n}")));
    }
    if noise_std < 0.0 {
        return Err(Error::Data("noise_std must be non-negative".into()));
    }
    let half = n / 2;
    let mut rng = RngStream::new(seed, StreamPurpose::DataShuffle, STREAM_MOONS, 0);
    let mut inputs = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..half {
        let t = std::f64::consts::PI * i as f64 / (half - 1).max(1) as f64;
        inputs.push(t.cos());
        inputs.push(t.sin());
        labels.push(0);
    }
    for i in 0..half {
        let t = std::f64::consts::PI * i as f64 / (half - 1).max(1) as f64;
        inputs.push(1.0 - t.cos());
        inputs.push(0.5 - t.sin());
        labels.push(1);
    }
    if noise_std > 0.0 {
        for v in &mut inputs {
            *v += rng.normal(0.0, noise_std);
        }
    }
    Dataset::new(Tensor::matrix(n, 2, inputs)?, Targets::Labels(labels), Task::Classification)
}

/// Sinusoid with linear trend and Gaussian noise, windowed into an
/// autoregressive regression task: each window of `window` consecutive values
/// predicts the next one.
pub fn sine_trend_series(
    n: usize,
    period: f64,
    trend_slope: f64,
    noise_std: f64,
    window: usize,
    seed: u64,
) -> Result<Dataset> {
    if window == 0 {
        return Err(Error::Data("window must be at least 1".into()));
    }
    if n <= window {
        return Err(Error::Data(format!(
            "series length {n} must exceed window {window}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::Data("period must be positive".into()));
    }
    if noise_std < 0.0 {
        return Err(Error::Data("noise_std must be non-negative".into()));
    }
    let mut rng = RngStream::new(seed, StreamPurpose::DataShuffle, STREAM_SINE, 0);
    let series: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64;
            let noise = if noise_std > 0.0 {
                rng.normal(0.0, noise_std)
            } else {
                0.0
            };
            (2.0 * std::f64::consts::PI * t / period).sin() + trend_slope * t + noise
        })
        .collect();
    let samples = n - window;
    let mut inputs = Vec::with_capacity(samples * window);
    let mut targets = Vec::with_capacity(samples);
    for i in 0..samples {
        inputs.extend_from_slice(&series[i..i + window]);
        targets.push(series[i + window]);
    }
    Dataset::new(
        Tensor::matrix(samples, window, inputs)?,
        Targets::Values(Tensor::matrix(samples, 1, targets)?),
        Task::Regression,
    )
}

/// Deterministic shuffled split. `(seed, test_fraction)` fully determine
/// membership.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Data(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n = ds.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test >= n {
        return Err(Error::Data("split leaves no training data".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, StreamPurpose::DataShuffle, STREAM_SPLIT, 0);
    idx.shuffle(&mut rng);
    let (test_idx, train_idx) = idx.split_at(n_test);
    Ok((ds.select(train_idx), ds.select(test_idx)))
}

/// Compute per-feature statistics of a dataset.
pub fn feature_stats(ds: &Dataset) -> Result<FeatureStats> {
    let (n, d) = (ds.len(), ds.n_features());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(ds.inputs.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (j, v) in ds.inputs.row(r).iter().enumerate() {
            let e = v - mean[j];
            var[j] += e * e;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    for (j, s) in std.iter().enumerate() {
        if *s == 0.0 {
            return Err(Error::Data(format!(
                "feature {j} has zero variance; cannot standardize"
            )));
        }
    }
    Ok(FeatureStats { mean, std })
}

/// Standardize a dataset with the given statistics (typically the training
/// split's). The returned dataset records the stats of its own training
/// distribution as (0, 1).
pub fn apply_normalization(ds: &Dataset, stats: &FeatureStats) -> Result<Dataset> {
    let d = ds.n_features();
    if stats.mean.len() != d {
        return Err(Error::Data(format!(
            "stats cover {} features, dataset has {d}",
            stats.mean.len()
        )));
    }
    let mut out = ds.clone();
    for r in 0..out.len() {
        let row = out.inputs.row_mut(r);
        for j in 0..d {
            row[j] = (row[j] - stats.mean[j]) / stats.std[j];
        }
    }
    out.feature_stats = Some(FeatureStats {
        mean: vec![0.0; d],
        std: vec![1.0; d],
    });
    Ok(out)
}

/// Standardize a dataset by its own statistics; returns the stats used so a
/// held-out split can be transformed identically.
pub fn normalize_features(train: &Dataset) -> Result<(Dataset, FeatureStats)> {
    let stats = feature_stats(train)?;
    Ok((apply_normalization(train, &stats)?, stats))
}

/// Standardize train and test by the training statistics.
pub fn normalize_split(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let (train_n, stats) = normalize_features(train)?;
    let test_n = apply_normalization(test, &stats)?;
    Ok((train_n, test_n))
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetSchema {
    Label,
    Values(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub features: usize,
    pub target: TargetSchema,
}

impl CsvSchema {
    pub fn for_dataset(ds: &Dataset) -> Self {
        let target = match &ds.targets {
            Targets::Labels(_) => TargetSchema::Label,
            Targets::Values(t) => TargetSchema::Values(t.cols()),
        };
        Self {
            features: ds.n_features(),
            target,
        }
    }

    fn header(&self) -> String {
        let mut cols: Vec<String> = (0..self.features).map(|j| format!("x{j}")).collect();
        match &self.target {
            TargetSchema::Label => cols.push("label".into()),
            TargetSchema::Values(k) => cols.extend((0..*k).map(|j| format!("y{j}"))),
        }
        cols.join(",")
    }
}

/// Write a dataset as UTF-8 CSV with LF line endings. Floats use the shortest
/// representation that parses back to the same value, so a round trip is exact.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let schema = CsvSchema::for_dataset(ds);
    let mut out = String::new();
    out.push_str(&schema.header());
    out.push('\n');
    for r in 0..ds.len() {
        let mut cells: Vec<String> = ds.inputs.row(r).iter().map(|v| format!("{v}")).collect();
        match &ds.targets {
            Targets::Labels(l) => cells.push(l[r].to_string()),
            Targets::Values(t) => cells.extend(t.row(r).iter().map(|v| format!("{v}"))),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out.as_bytes())?;
    Ok(())
}

/// Load a CSV written by [`save_csv`] (or matching the schema's header).
/// Errors carry 1-based line numbers.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: no data rows", path.display())))?;
    if header != schema.header() {
        return Err(Error::Data(format!(
            "{}: line 1: header `{header}` does not match expected `{}`",
            path.display(),
            schema.header()
        )));
    }
    let (d, k, task) = match &schema.target {
        TargetSchema::Label => (schema.features, 0usize, Task::Classification),
        TargetSchema::Values(k) => (schema.features, *k, Task::Regression),
    };
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut n = 0usize;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        let expect = d + if k == 0 { 1 } else { k };
        if cells.len() != expect {
            return Err(Error::Data(format!(
                "{}: line {lineno}: expected {expect} cells, got {}",
                path.display(),
                cells.len()
            )));
        }
        for cell in &cells[..d] {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {lineno}: cannot parse `{cell}` as a number",
                    path.display()
                ))
            })?;
            inputs.push(v);
        }
        if k == 0 {
            let l: usize = cells[d].parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {lineno}: cannot parse `{}` as a label",
                    path.display(),
                    cells[d]
                ))
            })?;
            labels.push(l);
        } else {
            for cell in &cells[d..] {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "{}: line {lineno}: cannot parse `{cell}` as a number",
                        path.display()
                    ))
                })?;
                values.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let targets = if k == 0 {
        Targets::Labels(labels)
    } else {
        Targets::Values(Tensor::matrix(n, k, values)?)
    };
    Dataset::new(Tensor::matrix(n, d, inputs)?, targets, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_noiseless_geometry() {
        let ds = two_moons(100, 0.0, 3).unwrap();
        for (r, &label) in ds.labels().unwrap().iter().enumerate() {
            let p = ds.inputs.row(r);
            let (cx, cy, sign) = if label == 0 {
                (0.0, 0.0, 1.0)
            } else {
                (1.0, 0.5, -1.0)
            };
            let radius = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((radius - 1.0).abs() < 1e-12, "point {r} off arc");
            assert!(sign * (p[1] - cy) >= -1e-12, "point {r} on wrong half");
        }
        let n0 = ds.labels().unwrap().iter().filter(|&&l| l == 0).count();
        assert_eq!(n0, 50);
    }

    #[test]
    fn moons_deterministic_bytes() {
        let a = two_moons(64, 0.15, 9).unwrap();
        let b = two_moons(64, 0.15, 9).unwrap();
        assert!(a.inputs.bit_eq(&b.inputs));
        let c = two_moons(64, 0.15, 10).unwrap();
        assert!(!a.inputs.bit_eq(&c.inputs));
    }

    #[test]
    fn moons_rejects_bad_n() {
        assert!(two_moons(1, 0.0, 0).is_err());
        assert!(two_moons(7, 0.0, 0).is_err());
    }

    #[test]
    fn sine_windows_reconstruct_series() {
        let n = 50;
        let w = 7;
        let ds = sine_trend_series(n, 12.0, 0.01, 0.05, w, 4).unwrap();
        assert_eq!(ds.len(), n - w);
        // series = first window ++ all targets
        let mut series: Vec<f64> = ds.inputs.row(0).to_vec();
        series.extend(ds.values().unwrap().data().iter().cloned());
        assert_eq!(series.len(), n);
        for i in 0..ds.len() {
            assert_eq!(ds.inputs.row(i), &series[i..i + w]);
        }
    }

    #[test]
    fn sine_trend_drift() {
        let n = 200;
        let ds = sine_trend_series(n, 40.0, 0.01, 0.0, 8, 4).unwrap();
        let mut series: Vec<f64> = ds.inputs.row(0).to_vec();
        series.extend(ds.values().unwrap().data().iter().cloned());
        let drift = series[n - 1] - series[0];
        // expected drift 0.01 * (n-1), within one sinusoid amplitude each side
        assert!((drift - 0.01 * (n - 1) as f64).abs() <= 2.0);
    }

    #[test]
    fn sine_rejects_short_series() {
        assert!(sine_trend_series(8, 10.0, 0.0, 0.0, 8, 0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = two_moons(100, 0.1, 5).unwrap();
        let (tr1, te1) = split(&ds, 0.25, 42).unwrap();
        let (tr2, te2) = split(&ds, 0.25, 42).unwrap();
        assert!(tr1.inputs.bit_eq(&tr2.inputs));
        assert!(te1.inputs.bit_eq(&te2.inputs));
        assert_eq!(tr1.len(), 75);
        assert_eq!(te1.len(), 25);
        // Disjoint: every test point differs from every train point.
        for i in 0..te1.len() {
            for j in 0..tr1.len() {
                assert_ne!(te1.inputs.row(i), tr1.inputs.row(j));
            }
        }
    }

    #[test]
    fn normalization_standardizes_train_and_reuses_stats() {
        let ds = two_moons(200, 0.1, 5).unwrap();
        let (train, test) = split(&ds, 0.3, 1).unwrap();
        let (train_n, test_n) = normalize_split(&train, &test).unwrap();
        let stats = feature_stats(&train_n).unwrap();
        for j in 0..2 {
            assert!(stats.mean[j].abs() < 1e-9);
            assert!((stats.std[j] - 1.0).abs() < 1e-9);
        }
        // Test split mean is generally nonzero since it uses train statistics.
        let test_stats = feature_stats(&test_n).unwrap();
        assert!(test_stats.mean.iter().any(|m| m.abs() > 1e-6));
    }

    #[test]
    fn normalization_is_idempotent() {
        let ds = two_moons(200, 0.1, 5).unwrap();
        let (once, _) = normalize_features(&ds).unwrap();
        let (twice, _) = normalize_features(&once).unwrap();
        for (a, b) in once.inputs.data().iter().zip(twice.inputs.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_feature_errors() {
        let inputs = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let ds = Dataset::new(inputs, Targets::Labels(vec![0, 1, 0]), Task::Classification).unwrap();
        assert!(normalize_features(&ds).is_err());
    }

    #[test]
    fn csv_roundtrip_exact() {
        let ds = two_moons(100, 0.15, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moons.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &CsvSchema::for_dataset(&ds)).unwrap();
        assert!(ds.inputs.bit_eq(&back.inputs));
        assert_eq!(ds.targets, back.targets);
    }

    #[test]
    fn csv_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let schema = CsvSchema {
            features: 2,
            target: TargetSchema::Label,
        };
        fs::write(&path, "x0,x1,label\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("no data rows"), "{err}");

        fs::write(&path, "x0,x1,label\n1.0,2.0,0\n1.0,oops,1\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        fs::write(&path, "x0,x1,label\n0.5,1.5,1\n").unwrap();
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.len(), 1);
    }
}
