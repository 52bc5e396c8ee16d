//! Scalar evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = probs.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} prediction rows but {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Data("accuracy of an empty batch is undefined".into()));
    }
    let hits = (0..n)
        .filter(|&r| argmax(probs.row(r)) == labels[r])
        .count();
    Ok(hits as f64 / n as f64)
}

/// Root mean squared error over all elements.
pub fn rmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("rmse of an empty batch is undefined".into()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Mean and sample standard deviation (divisor n−1; std is 0 when n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_takes_lowest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.6]), 2);
    }

    #[test]
    fn accuracy_counts_hits() {
        let p = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn rmse_known_value() {
        let p = Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap();
        let t = Tensor::matrix(1, 2, vec![0.0, 3.0]).unwrap();
        assert!((rmse(&p, &t).unwrap() - (0.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mean_std_sample_divisor() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
        let (_, s1) = mean_std(&[5.0]);
        assert_eq!(s1, 0.0);
    }
}
