//! Normalization layer with stochastic affine dropout.
//!
//! The inverted ordering applies the learnable affine transform first
//! (`z = x⊙γ_eff + β_eff`) and standardizes afterwards, so the affine
//! parameters act directly on the weighted sums feeding the layer. Their
//! masks drop γ to ones and β to zeros, which injects multiplicative and
//! additive randomness into those sums while the subsequent standardization
//! keeps activations well-scaled. The conventional ordering (standardize,
//! then affine) is also provided as the comparison baseline.
//!
//! Statistics are computed per row (instance) or per contiguous channel
//! group within a row, with population variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    /// Affine transform before standardization.
    Inverted,
    /// Standardization before affine transform.
    Conventional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One region per row: all channels of an instance.
    Instance,
    /// `g` regions per row, each a contiguous block of `channels / g`.
    Group(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One Bernoulli draw masks the whole parameter vector (two draws per
    /// layer per pass: one for γ, one for β).
    VectorWise,
    /// Independent Bernoulli draw per channel.
    ElementWise,
}

/// How γ and β are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineInit {
    /// γ ~ N(1, σγ), β ~ N(0, σβ).
    Normal { sigma_gamma: f64, sigma_beta: f64 },
    /// γ ~ U(0, kγ), β ~ U(−kβ, kβ).
    Uniform { k_gamma: f64, k_beta: f64 },
    /// γ = 1, β = 0 (the conventional initialization).
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub channels: usize,
    pub order: NormOrder,
    /// Dropout probability for each affine mask.
    pub p: f64,
    pub eps: f64,
    pub granularity: Granularity,
    pub mask_mode: MaskMode,
    pub init: AffineInit,
}

pub const DEFAULT_EPS: f64 = 1e-5;

impl NormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("norm layer needs at least one channel".into()));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {}",
                self.p
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        match self.init {
            AffineInit::Normal {
                sigma_gamma,
                sigma_beta,
            } => {
                if !(sigma_gamma > 0.0 && sigma_beta > 0.0) {
                    return Err(Error::Config(format!(
                        "normal affine init needs positive spreads, got ({sigma_gamma}, {sigma_beta})"
                    )));
                }
            }
            AffineInit::Uniform { k_gamma, k_beta } => {
                if !(k_gamma > 0.0) || k_beta < 0.0 {
                    return Err(Error::Config(format!(
                        "uniform affine init needs k_gamma > 0 and k_beta >= 0, got ({k_gamma}, {k_beta})"
                    )));
                }
            }
            AffineInit::Identity => {}
        }
        let (groups, region) = self.regions()?;
        let _ = groups;
        if region < 2 {
            return Err(Error::Config(format!(
                "normalization regions need at least 2 channels, got {region}"
            )));
        }
        Ok(())
    }

    /// `(number of regions per row, channels per region)`.
    pub fn regions(&self) -> Result<(usize, usize)> {
        match self.granularity {
            Granularity::Instance => Ok((1, self.channels)),
            Granularity::Group(g) => {
                if g == 0 || self.channels % g != 0 {
                    return Err(Error::Config(format!(
                        "group count {g} does not divide {} channels",
                        self.channels
                    )));
                }
                Ok((g, self.channels / g))
            }
        }
    }
}

/// Binary keep masks for γ and β. Entries are stored as 0.0/1.0 factors.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMasks {
    pub gamma: MaskVec,
    pub beta: MaskVec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskVec {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl MaskVec {
    pub fn factor(&self, channel: usize) -> f64 {
        match self {
            MaskVec::Scalar(m) => *m,
            MaskVec::PerChannel(v) => v[channel],
        }
    }
}

impl AffineMasks {
    /// Masks that keep every parameter (deterministic evaluation).
    pub fn keep_all() -> Self {
        Self {
            gamma: MaskVec::Scalar(1.0),
            beta: MaskVec::Scalar(1.0),
        }
    }
}

/// Draw initial affine parameters.
pub fn init_affine(channels: usize, init: &AffineInit, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
    if channels == 0 {
        return Err(Error::Config("init_affine needs at least one channel".into()));
    }
    let (mut gamma, mut beta) = (vec![0.0; channels], vec![0.0; channels]);
    match *init {
        AffineInit::Normal {
            sigma_gamma,
            sigma_beta,
        } => {
            if !(sigma_gamma > 0.0 && sigma_beta > 0.0) {
                return Err(Error::Config(format!(
                    "normal affine init needs positive spreads, got ({sigma_gamma}, {sigma_beta})"
                )));
            }
            rng.fill_normal(&mut gamma, 1.0, sigma_gamma);
            rng.fill_normal(&mut beta, 0.0, sigma_beta);
        }
        AffineInit::Uniform { k_gamma, k_beta } => {
            if !(k_gamma > 0.0) || k_beta < 0.0 {
                return Err(Error::Config(format!(
                    "uniform affine init needs k_gamma > 0 and k_beta >= 0, got ({k_gamma}, {k_beta})"
                )));
            }
            for g in &mut gamma {
                *g = rng.uniform(0.0, k_gamma);
            }
            for b in &mut beta {
                *b = if k_beta == 0.0 {
                    0.0
                } else {
                    rng.uniform(-k_beta, k_beta)
                };
            }
        }
        AffineInit::Identity => {
            gamma.iter_mut().for_each(|g| *g = 1.0);
        }
    }
    Ok((Tensor::vector(gamma)?, Tensor::vector(beta)?))
}

/// Sample dropout masks. Each entry keeps its parameter with probability
/// `1 - p`; γ and β are drawn independently. Vector-wise mode consumes
/// exactly two draws regardless of the vector length.
pub fn sample_masks(cfg: &NormConfig, rng: &mut RngStream) -> AffineMasks {
    let keep = 1.0 - cfg.p;
    match cfg.mask_mode {
        MaskMode::VectorWise => AffineMasks {
            gamma: MaskVec::Scalar(if rng.bernoulli(keep) { 1.0 } else { 0.0 }),
            beta: MaskVec::Scalar(if rng.bernoulli(keep) { 1.0 } else { 0.0 }),
        },
        MaskMode::ElementWise => {
            let draw = |rng: &mut RngStream| {
                (0..cfg.channels)
                    .map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 })
                    .collect::<Vec<f64>>()
            };
            let gamma = draw(rng);
            let beta = draw(rng);
            AffineMasks {
                gamma: MaskVec::PerChannel(gamma),
                beta: MaskVec::PerChannel(beta),
            }
        }
    }
}

/// Effective parameters after dropout: dropped weights become exactly one,
/// dropped biases exactly zero.
pub fn apply_masks(gamma: &Tensor, beta: &Tensor, masks: &AffineMasks) -> (Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    assert_eq!(beta.len(), c, "gamma/beta length mismatch");
    let mut ge = vec![0.0; c];
    let mut be = vec![0.0; c];
    for i in 0..c {
        let mg = masks.gamma.factor(i);
        let mb = masks.beta.factor(i);
        ge[i] = mg * gamma.data()[i] + (1.0 - mg);
        be[i] = mb * beta.data()[i];
    }
    (ge, be)
}

/// Saved intermediates for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub(crate) input: Tensor,
    pub(crate) normalized: Tensor,
    pub(crate) gamma_eff: Vec<f64>,
    pub(crate) masks: AffineMasks,
    /// `1 / sqrt(var + eps)` per region, row-major `[rows × groups]`.
    pub(crate) inv_std: Vec<f64>,
}

fn region_stats(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Standardize `z` region-by-region in place, recording `inv_std`.
fn standardize(
    z: &mut Tensor,
    groups: usize,
    region: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let rows = z.rows();
    let mut inv_std = vec![0.0; rows * groups];
    for r in 0..rows {
        for g in 0..groups {
            let start = g * region;
            let (mean, var) = region_stats(&z.row(r)[start..start + region]);
            let denom = var + eps;
            if denom <= 0.0 {
                return Err(Error::Numeric(format!(
                    "normalization division by zero: row {r} group {g} has zero variance and eps = 0"
                )));
            }
            let is = 1.0 / denom.sqrt();
            inv_std[r * groups + g] = is;
            for v in &mut z.row_mut(r)[start..start + region] {
                *v = (*v - mean) * is;
            }
        }
    }
    Ok(inv_std)
}

/// Forward pass over a `[rows × channels]` batch.
pub fn norm_forward(
    x: &Tensor,
    cfg: &NormConfig,
    gamma: &Tensor,
    beta: &Tensor,
    masks: &AffineMasks,
) -> Result<(Tensor, NormCache)> {
    if x.ndim() != 2 || x.cols() != cfg.channels {
        return Err(Error::Shape(format!(
            "norm layer expects [N × {}], got {:?}",
            cfg.channels,
            x.shape()
        )));
    }
    let (groups, region) = cfg.regions()?;
    if region < 2 {
        return Err(Error::Config(format!(
            "normalization regions need at least 2 channels, got {region}"
        )));
    }
    let (ge, be) = apply_masks(gamma, beta, masks);
    match cfg.order {
        NormOrder::Inverted => {
            let mut z = x.clone();
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for c in 0..cfg.channels {
                    row[c] = row[c] * ge[c] + be[c];
                }
            }
            let inv_std = standardize(&mut z, groups, region, cfg.eps)?;
            let cache = NormCache {
                input: x.clone(),
                normalized: z.clone(),
                gamma_eff: ge,
                masks: masks.clone(),
                inv_std,
            };
            Ok((z, cache))
        }
        NormOrder::Conventional => {
            let mut z = x.clone();
            let inv_std = standardize(&mut z, groups, region, cfg.eps)?;
            let normalized = z.clone();
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for c in 0..cfg.channels {
                    row[c] = row[c] * ge[c] + be[c];
                }
            }
            let cache = NormCache {
                input: x.clone(),
                normalized,
                gamma_eff: ge,
                masks: masks.clone(),
                inv_std,
            };
            Ok((z, cache))
        }
    }
}

/// Gradient of standardization: for a region of size `m` with output `y` and
/// upstream gradient `d`, `dz_i = inv_std * (d_i - mean(d) - y_i * mean(d⊙y))`.
fn standardize_backward(
    d: &Tensor,
    normalized: &Tensor,
    inv_std: &[f64],
    groups: usize,
    region: usize,
) -> Tensor {
    let rows = d.rows();
    let mut dz = Tensor::zeros(vec![rows, d.cols()]);
    let m = region as f64;
    for r in 0..rows {
        for g in 0..groups {
            let start = g * region;
            let drow = &d.row(r)[start..start + region];
            let yrow = &normalized.row(r)[start..start + region];
            let mean_d = drow.iter().sum::<f64>() / m;
            let mean_dy = drow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / m;
            let is = inv_std[r * groups + g];
            let out = &mut dz.row_mut(r)[start..start + region];
            for i in 0..region {
                out[i] = is * (drow[i] - mean_d - yrow[i] * mean_dy);
            }
        }
    }
    dz
}

/// Backward pass. Gradients flow through the region statistics; gradients of
/// dropped parameters are exactly zero.
pub fn norm_backward(
    cfg: &NormConfig,
    cache: &NormCache,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if dy.shape() != cache.normalized.shape() {
        return Err(Error::Shape(format!(
            "norm backward: upstream gradient {:?} does not match cached activations {:?}",
            dy.shape(),
            cache.normalized.shape()
        )));
    }
    let (groups, region) = cfg.regions()?;
    let c = cfg.channels;
    let rows = dy.rows();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];

    let dx = match cfg.order {
        NormOrder::Inverted => {
            // y = standardize(z), z = x⊙γe + βe
            let dz = standardize_backward(dy, &cache.normalized, &cache.inv_std, groups, region);
            let mut dx = Tensor::zeros(vec![rows, c]);
            for r in 0..rows {
                let dzr = dz.row(r);
                let xr = cache.input.row(r);
                let out = dx.row_mut(r);
                for i in 0..c {
                    out[i] = dzr[i] * cache.gamma_eff[i];
                    dgamma[i] += dzr[i] * xr[i];
                    dbeta[i] += dzr[i];
                }
            }
            dx
        }
        NormOrder::Conventional => {
            // y = standardize(x)⊙γe + βe
            let mut dyhat = Tensor::zeros(vec![rows, c]);
            for r in 0..rows {
                let dyr = dy.row(r);
                let yr = cache.normalized.row(r);
                let out = dyhat.row_mut(r);
                for i in 0..c {
                    out[i] = dyr[i] * cache.gamma_eff[i];
                    dgamma[i] += dyr[i] * yr[i];
                    dbeta[i] += dyr[i];
                }
            }
            standardize_backward(&dyhat, &cache.normalized, &cache.inv_std, groups, region)
        }
    };

    for i in 0..c {
        dgamma[i] *= cache.masks.gamma.factor(i);
        dbeta[i] *= cache.masks.beta.factor(i);
    }
    Ok((dx, Tensor::vector(dgamma)?, Tensor::vector(dbeta)?))
}
