//! Loss functions with analytic gradients w.r.t. the prediction.

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Expects probability rows (a softmax output) and integer class labels.
    CrossEntropy,
    /// Expects prediction and target tensors of equal shape.
    Mse,
}

/// Probabilities are floored at this value inside the logarithm and its
/// gradient so confidently-wrong predictions stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean loss over the batch and its gradient w.r.t. `prediction`.
pub fn loss_eval(kind: LossKind, prediction: &Tensor, target: &Targets) -> Result<(f64, Tensor)> {
    match (kind, target) {
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            let (n, c) = (prediction.rows(), prediction.cols());
            if labels.len() != n {
                return Err(Error::Shape(format!(
                    "{n} prediction rows but {} labels",
                    labels.len()
                )));
            }
            let mut grad = Tensor::zeros(vec![n, c]);
            let mut loss = 0.0;
            for r in 0..n {
                let row = prediction.row(r);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Numeric(format!(
                        "cross-entropy input row {r} sums to {sum}, expected 1"
                    )));
                }
                let y = labels[r];
                if y >= c {
                    return Err(Error::Data(format!(
                        "label {y} out of range for {c} classes (row {r})"
                    )));
                }
                let p = row[y].max(PROB_FLOOR);
                loss -= p.ln();
                grad.row_mut(r)[y] = -1.0 / (n as f64 * p);
            }
            Ok((loss / n as f64, grad))
        }
        (LossKind::Mse, Targets::Values(t)) => {
            if prediction.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "prediction {:?} and target {:?} differ",
                    prediction.shape(),
                    t.shape()
                )));
            }
            let m = prediction.len() as f64;
            let mut grad = prediction.clone();
            let mut loss = 0.0;
            for (g, &tv) in grad.data_mut().iter_mut().zip(t.data()) {
                let e = *g - tv;
                loss += e * e;
                *g = 2.0 * e / m;
            }
            Ok((loss / m, grad))
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => Err(Error::Data(
            "cross-entropy needs integer class labels".into(),
        )),
        (LossKind::Mse, Targets::Labels(_)) => {
            Err(Error::Data("mean squared error needs value targets".into()))
        }
    }
}
