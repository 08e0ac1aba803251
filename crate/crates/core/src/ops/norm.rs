//! Per-channel batch normalization over `N, H, W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{check_upstream, LayerGrad, Mode};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean and (unbiased) variance per channel.
///
/// An empty instance stands for statistics that were never initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Mean 0, variance 1 for `channels` channels.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn uninitialized() -> Self {
        RunningStats {
            mean: Vec::new(),
            var: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        let conv = |v: &T| U::of(v.to_f64().unwrap());
        RunningStats {
            mean: self.mean.iter().map(conv).collect(),
            var: self.var.iter().map(conv).collect(),
        }
    }
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm",
            format!(
                "input has {c} channels, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BatchNormContext<T: Scalar> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    batch_stats: bool,
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    inv_std: &[f64],
    keep_normalized: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (_, c, h, w) = input.dims4("batchnorm")?;
    let plane = h * w;
    let mut out = vec![T::zero(); input.len()];
    let mut normalized = if keep_normalized {
        vec![T::zero(); input.len()]
    } else {
        Vec::new()
    };
    for (i, chunk) in input.data().chunks_exact(plane).enumerate() {
        let ch = i % c;
        let m = T::of(mean[ch]);
        let s = T::of(inv_std[ch]);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        let dst = &mut out[i * plane..(i + 1) * plane];
        for (o, &x) in dst.iter_mut().zip(chunk) {
            *o = g * ((x - m) * s) + b;
        }
        if keep_normalized {
            for (o, &x) in normalized[i * plane..(i + 1) * plane].iter_mut().zip(chunk) {
                *o = (x - m) * s;
            }
        }
    }
    let out = Tensor::from_parts(input.shape().to_vec(), out).ensure_finite("batchnorm")?;
    let normalized = keep_normalized.then(|| Tensor::from_parts(input.shape().to_vec(), normalized));
    Ok((out, normalized))
}

fn batch_moments<T: Scalar>(input: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (n, c, h, w) = input.dims4("batchnorm")?;
    let count = n * h * w;
    if count < 2 {
        return Err(Error::invalid(
            "batchnorm",
            format!("train mode needs at least 2 values per channel, got {count}"),
        ));
    }
    let plane = h * w;
    let mut mean = vec![0.0f64; c];
    for (i, chunk) in input.data().chunks_exact(plane).enumerate() {
        mean[i % c] += chunk.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0f64; c];
    for (i, chunk) in input.data().chunks_exact(plane).enumerate() {
        let m = mean[i % c];
        var[i % c] += chunk
            .iter()
            .map(|v| {
                let d = v.to_f64().unwrap() - m;
                d * d
            })
            .sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    Ok((mean, var, count))
}

fn train_impl<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    momentum: f64,
    epsilon: f64,
    save: bool,
) -> Result<(Tensor<T>, Option<BatchNormContext<T>>)> {
    let (_, c, _, _) = input.dims4("batchnorm")?;
    check_affine(c, gamma, beta)?;
    let (mean, var, count) = batch_moments(input)?;
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
    let (out, normalized) = normalize(input, gamma, beta, &mean, &inv_std, save)?;
    if stats.channels() != c {
        *stats = RunningStats::new(c);
    }
    let unbias = count as f64 / (count as f64 - 1.0);
    for ch in 0..c {
        let rm = stats.mean[ch].to_f64().unwrap();
        let rv = stats.var[ch].to_f64().unwrap();
        stats.mean[ch] = T::of((1.0 - momentum) * rm + momentum * mean[ch]);
        stats.var[ch] = T::of((1.0 - momentum) * rv + momentum * var[ch] * unbias);
    }
    let ctx = normalized.map(|normalized| BatchNormContext {
        normalized,
        inv_std: inv_std.iter().map(|&v| T::of(v)).collect(),
        gamma: gamma.data().to_vec(),
        batch_stats: true,
    });
    Ok((out, ctx))
}

fn eval_impl<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    epsilon: f64,
    save: bool,
) -> Result<(Tensor<T>, Option<BatchNormContext<T>>)> {
    let (_, c, _, _) = input.dims4("batchnorm")?;
    check_affine(c, gamma, beta)?;
    if stats.channels() == 0 {
        return Err(Error::UninitializedStats);
    }
    if stats.channels() != c || stats.var.len() != c {
        return Err(Error::shape(
            "batchnorm",
            format!("running stats cover {} channels, input has {c}", stats.channels()),
        ));
    }
    let mean: Vec<f64> = stats.mean.iter().map(|v| v.to_f64().unwrap()).collect();
    let inv_std: Vec<f64> = stats
        .var
        .iter()
        .map(|v| 1.0 / (v.to_f64().unwrap() + epsilon).sqrt())
        .collect();
    let (out, normalized) = normalize(input, gamma, beta, &mean, &inv_std, save)?;
    let ctx = normalized.map(|normalized| BatchNormContext {
        normalized,
        inv_std: inv_std.iter().map(|&v| T::of(v)).collect(),
        gamma: gamma.data().to_vec(),
        batch_stats: false,
    });
    Ok((out, ctx))
}

/// Normalizes with batch statistics and folds them into `stats`.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    momentum: f64,
    epsilon: f64,
) -> Result<Tensor<T>> {
    train_impl(input, gamma, beta, stats, momentum, epsilon, false).map(|(y, _)| y)
}

pub fn batchnorm_train_saved<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    momentum: f64,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormContext<T>)> {
    let (y, ctx) = train_impl(input, gamma, beta, stats, momentum, epsilon, true)?;
    Ok((y, ctx.expect("context requested")))
}

/// Normalizes with running statistics; `stats` is not touched.
pub fn batchnorm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    epsilon: f64,
) -> Result<Tensor<T>> {
    eval_impl(input, gamma, beta, stats, epsilon, false).map(|(y, _)| y)
}

pub fn batchnorm_eval_saved<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormContext<T>)> {
    let (y, ctx) = eval_impl(input, gamma, beta, stats, epsilon, true)?;
    Ok((y, ctx.expect("context requested")))
}

pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    momentum: f64,
    epsilon: f64,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => batchnorm_train(input, gamma, beta, stats, momentum, epsilon),
        Mode::Eval => batchnorm_eval(input, gamma, beta, stats, epsilon),
    }
}

impl<T: Scalar> BatchNormContext<T> {
    /// Gradients w.r.t. the input, `"weight"` (gamma) and `"bias"` (beta).
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<LayerGrad<T>> {
        let shape = self.normalized.shape();
        check_upstream("batchnorm", upstream, shape)?;
        let (n, c, h, w) = self.normalized.dims4("batchnorm")?;
        let plane = h * w;
        let count = (n * h * w) as f64;

        // Per-channel sums of dy and dy * xhat.
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (i, (dy, xh)) in upstream
            .data()
            .chunks_exact(plane)
            .zip(self.normalized.data().chunks_exact(plane))
            .enumerate()
        {
            let ch = i % c;
            for (&g, &x) in dy.iter().zip(xh) {
                let g = g.to_f64().unwrap();
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * x.to_f64().unwrap();
            }
        }

        let mut dx = vec![T::zero(); upstream.len()];
        for (i, ((dst, dy), xh)) in dx
            .chunks_exact_mut(plane)
            .zip(upstream.data().chunks_exact(plane))
            .zip(self.normalized.data().chunks_exact(plane))
            .enumerate()
        {
            let ch = i % c;
            let scale = self.gamma[ch] * self.inv_std[ch];
            if self.batch_stats {
                let mean_dy = T::of(sum_dy[ch] / count);
                let mean_dy_xhat = T::of(sum_dy_xhat[ch] / count);
                for ((o, &g), &x) in dst.iter_mut().zip(dy).zip(xh) {
                    *o = scale * (g - mean_dy - x * mean_dy_xhat);
                }
            } else {
                for (o, &g) in dst.iter_mut().zip(dy) {
                    *o = scale * g;
                }
            }
        }
        let to_t = |v: &[f64]| Tensor::from_parts(vec![c], v.iter().map(|&x| T::of(x)).collect());
        Ok(LayerGrad {
            input_grad: Tensor::from_parts(shape.to_vec(), dx).ensure_finite("batchnorm backward")?,
            param_grads: [("weight", to_t(&sum_dy_xhat)), ("bias", to_t(&sum_dy))]
                .into_iter()
                .collect(),
        })
    }
}
