//! SGD with momentum and decoupled-from-norm weight decay.
//!
//! Update rule per parameter tensor:
//! `v ← momentum·v + grad + weight_decay·param`, `param ← param − lr·v`.
//! Weight decay is skipped for norm-layer affine parameters: γ lives around 1,
//! and decaying it toward 0 fights the scale it is trained to hold.

use crate::error::{Error, Result};
use crate::forward::{Gradients, LayerGrads};
use crate::model::{LayerParams, Model};
use crate::tensor::Tensor;

/// Per-layer velocity buffers, lazily shaped like the parameters.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    layers: Vec<Vec<Tensor>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One in-place SGD update of a flat parameter slice.
pub fn sgd_update(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.len() != param.len() || velocity.len() != param.len() {
        return Err(Error::Shape(format!(
            "sgd_update: param {} / grad {} / velocity {}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for g in grad {
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to sgd_update".into()));
        }
    }
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Apply one step to every parameter tensor of the model.
pub fn apply_sgd(
    model: &mut Model,
    grads: &Gradients,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.layers.len() != model.params.len() {
        return Err(Error::Shape(format!(
            "gradients cover {} layers, model has {}",
            grads.layers.len(),
            model.params.len()
        )));
    }
    if state.layers.is_empty() {
        state.layers = model
            .params
            .iter()
            .map(|p| match p {
                LayerParams::Dense { weight, bias } => vec![
                    Tensor::zeros(weight.shape().to_vec()),
                    Tensor::zeros(bias.shape().to_vec()),
                ],
                LayerParams::BinaryDense { weight } => {
                    vec![Tensor::zeros(weight.shape().to_vec())]
                }
                LayerParams::Norm { gamma, beta } => vec![
                    Tensor::zeros(gamma.shape().to_vec()),
                    Tensor::zeros(beta.shape().to_vec()),
                ],
                LayerParams::None => vec![],
            })
            .collect();
    }
    for (li, (params, grad)) in model.params.iter_mut().zip(&grads.layers).enumerate() {
        let vel = &mut state.layers[li];
        match (params, grad) {
            (LayerParams::Dense { weight, bias }, LayerGrads::Dense { weight: dw, bias: db }) => {
                sgd_update(weight.data_mut(), dw.data(), vel[0].data_mut(), lr, momentum, weight_decay)?;
                sgd_update(bias.data_mut(), db.data(), vel[1].data_mut(), lr, momentum, weight_decay)?;
            }
            (LayerParams::BinaryDense { weight }, LayerGrads::BinaryDense { weight: dw }) => {
                sgd_update(weight.data_mut(), dw.data(), vel[0].data_mut(), lr, momentum, weight_decay)?;
            }
            (LayerParams::Norm { gamma, beta }, LayerGrads::Norm { gamma: dg, beta: db }) => {
                // No decay on affine parameters.
                sgd_update(gamma.data_mut(), dg.data(), vel[0].data_mut(), lr, momentum, 0.0)?;
                sgd_update(beta.data_mut(), db.data(), vel[1].data_mut(), lr, momentum, 0.0)?;
            }
            (LayerParams::None, LayerGrads::None) => {}
            _ => {
                return Err(Error::Shape(format!(
                    "layer {li}: gradient kind does not match parameter kind"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_update(&mut p, &[1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.0, 0.1).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut p = [1.234];
        let mut v = [0.0];
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p[0], 1.234);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = [0.0];
        let mut v = [0.0];
        sgd_update(&mut p, &[1.0], &mut v, 1.0, 0.5, 0.0).unwrap();
        sgd_update(&mut p, &[1.0], &mut v, 1.0, 0.5, 0.0).unwrap();
        // v1 = 1, p = -1; v2 = 0.5 + 1 = 1.5, p = -2.5
        assert!((p[0] + 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_grad() {
        let mut p = [0.0];
        let mut v = [0.0];
        assert!(sgd_update(&mut p, &[f64::NAN], &mut v, 0.1, 0.0, 0.0).is_err());
    }
}
