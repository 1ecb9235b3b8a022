use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel mean and biased variance over `(N, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel, `N·H·W`.
    pub count: usize,
}

pub fn batch_stats<T: Real>(input: &Tensor<T>) -> Result<BatchStats<T>> {
    let (n, c, h, w) = input.dims4()?;
    let data = input.data();
    let plane = h * w;
    let count = n * plane;
    let m = T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            for &v in &data[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                acc += v;
            }
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for s in 0..n {
            for &v in &data[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                let d = v - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    Ok(BatchStats { mean, var, count })
}

/// Output plus the normalized input and `1/√(σ² + eps)` used for it.
pub(crate) struct NormOutput<T> {
    pub out: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn check_affine<T: Real>(c: usize, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    for (name, t) in tensors {
        if t.shape() != [c] {
            return Err(Error::Shape(format!(
                "batchnorm {name} has shape {:?}, expected [{c}]",
                t.shape()
            )));
        }
    }
    Ok(())
}

pub(crate) fn normalize<T: Real>(
    input: &Tensor<T>,
    mean: &[T],
    var: &[T],
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<NormOutput<T>> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let x = input.data();
    let g = gamma.data();
    let b = beta.data();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            for i in range {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = g[ch] * xh + b[ch];
            }
        }
    }
    let shape = [n, c, h, w];
    Ok(NormOutput {
        out: Tensor::from_vec(&shape, out)?,
        xhat: Tensor::from_vec(&shape, xhat)?,
        inv_std,
    })
}

pub(crate) fn train_stats<T: Real>(input: &Tensor<T>) -> Result<BatchStats<T>> {
    let stats = batch_stats(input)?;
    if stats.count < 2 {
        return Err(Error::Statistics(format!(
            "train-mode batch norm needs N·H·W ≥ 2 per channel, got {} for shape {:?}",
            stats.count,
            input.shape()
        )));
    }
    Ok(stats)
}

/// `running ← (1 − momentum)·running + momentum·batch`; the variance uses
/// the unbiased batch estimate.
pub(crate) fn update_running<T: Real>(
    stats: &BatchStats<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: T,
) {
    let unbias = T::from_f64(stats.count as f64 / (stats.count - 1) as f64);
    let keep = T::one() - momentum;
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + momentum * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&stats.var) {
        *r = keep * *r + momentum * v * unbias;
    }
}

/// Batch normalization over `(N, H, W)` per channel.
///
/// Train mode normalizes by batch statistics and updates the running
/// statistics; eval mode normalizes by the running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: BatchNormMode,
    eps: T,
    momentum: T,
) -> Result<Tensor<T>> {
    let (_, c, _, _) = input.dims4()?;
    check_affine(
        c,
        &[
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ],
    )?;
    if !(eps > T::zero()) {
        return Err(Error::Spec("batchnorm eps must be positive".into()));
    }
    match mode {
        BatchNormMode::Train => {
            let stats = train_stats(input)?;
            let out = normalize(input, &stats.mean, &stats.var, gamma, beta, eps)?.out;
            update_running(&stats, running_mean, running_var, momentum);
            Ok(out)
        }
        BatchNormMode::Eval => {
            let mean = running_mean.data();
            let var = running_var.data();
            Ok(normalize(input, &mean, &var, gamma, beta, eps)?.out)
        }
    }
}
