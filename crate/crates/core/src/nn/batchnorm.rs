use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

/// Per-channel affine parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    /// False until a training-mode pass has updated the running statistics.
    pub has_stats: bool,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(1.0);
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.fill(1.0);
        Self {
            gamma,
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            has_stats: false,
        }
    }

    /// All-zero container, used to accumulate gradients.
    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: Tensor::zeros(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::zeros(&[channels]),
            has_stats: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Normalizes with batch statistics (train) or running statistics (infer).
/// Training mode also updates the running statistics.
pub fn batchnorm_forward(x: &Tensor, params: &mut BatchNormParams, mode: Mode) -> Result<Tensor> {
    bn_forward(x, params, mode).map(|(y, _)| y)
}

pub(crate) fn bn_forward(x: &Tensor, params: &mut BatchNormParams, mode: Mode) -> Result<(Tensor, BnCache)> {
    let c = params.channels();
    x.expect_matrix(c, "batch norm")?;
    let t = x.rows();
    let (mean, var, batch_stats) = match mode {
        Mode::Train if t > 0 => {
            let mut mean = vec![0.0; c];
            for row in x.data().chunks_exact(c) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= t as f64);
            let mut var = vec![0.0; c];
            for row in x.data().chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= t as f64);
            for i in 0..c {
                let rm = &mut params.running_mean.data_mut()[i];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean[i];
                let rv = &mut params.running_var.data_mut()[i];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var[i];
            }
            params.has_stats = true;
            (mean, var, true)
        }
        Mode::Train => (vec![0.0; c], vec![1.0; c], true),
        Mode::Infer => {
            if !params.has_stats {
                return Err(Error::State(
                    "batch norm used for inference before any training statistics".into(),
                ));
            }
            (
                params.running_mean.data().to_vec(),
                params.running_var.data().to_vec(),
                false,
            )
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut x_hat = x.data().to_vec();
    let mut y = vec![0.0; x.len()];
    let (gamma, beta) = (params.gamma.data(), params.beta.data());
    for (xr, yr) in x_hat.chunks_exact_mut(c).zip(y.chunks_exact_mut(c)) {
        for i in 0..c {
            xr[i] = (xr[i] - mean[i]) * inv_std[i];
            yr[i] = gamma[i] * xr[i] + beta[i];
        }
    }
    let cache = BnCache {
        x_hat,
        inv_std,
        batch_stats,
    };
    Ok((Tensor::matrix(t, c, y)?, cache))
}

/// Returns `dx`; accumulates `(d gamma, d beta)` when `grads` is given.
pub(crate) fn bn_backward(
    params: &BatchNormParams,
    cache: &BnCache,
    dy: &Tensor,
    grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Result<Tensor> {
    let c = params.channels();
    dy.expect_matrix(c, "batch norm backward")?;
    let t = dy.rows();
    let gamma = params.gamma.data();
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for (dr, xr) in dy.data().chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
        for i in 0..c {
            let g = dr[i] * gamma[i];
            sum_dxhat[i] += g;
            sum_dxhat_xhat[i] += g * xr[i];
        }
    }
    if let Some((g_gamma, g_beta)) = grads {
        for (dr, xr) in dy.data().chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
            for i in 0..c {
                g_gamma.data_mut()[i] += dr[i] * xr[i];
                g_beta.data_mut()[i] += dr[i];
            }
        }
    }
    let n = t as f64;
    let mut dx = vec![0.0; t * c];
    for ((out, dr), xr) in dx
        .chunks_exact_mut(c)
        .zip(dy.data().chunks_exact(c))
        .zip(cache.x_hat.chunks_exact(c))
    {
        for i in 0..c {
            let dxhat = dr[i] * gamma[i];
            out[i] = if cache.batch_stats {
                cache.inv_std[i] * (dxhat - sum_dxhat[i] / n - xr[i] * sum_dxhat_xhat[i] / n)
            } else {
                cache.inv_std[i] * dxhat
            };
        }
    }
    Tensor::matrix(t, c, dx)
}

/// Batch normalization over the time axis of a `[T x C]` sequence.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub params: BatchNormParams,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(params: BatchNormParams) -> Self {
        let c = params.channels();
        Self {
            params,
            grad_gamma: Tensor::zeros(&[c]),
            grad_beta: Tensor::zeros(&[c]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (y, cache) = bn_forward(x, &mut self.params, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor, accumulate: bool) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch norm backward without forward".into()))?;
        let grads = accumulate.then_some((&mut self.grad_gamma, &mut self.grad_beta));
        bn_backward(&self.params, &cache, dy, grads)
    }
}
