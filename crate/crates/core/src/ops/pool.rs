use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::conv::conv2d_output_size;
use super::check_upstream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    /// Divides by the number of in-image cells under the window (padding excluded).
    Average,
}

#[derive(Debug, Clone)]
pub struct Pool2dContext {
    kind: PoolKind,
    input_shape: Vec<usize>,
    window: usize,
    stride: usize,
    padding: usize,
    /// For max pooling: flat input offset that won each output cell.
    argmax: Vec<usize>,
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn dims<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize, padding: usize) -> Result<Dims> {
    let (n, c, h, w) = input.dims4("pool2d")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool2d", "window and stride must be >= 1"));
    }
    match (
        conv2d_output_size(h, window, stride, padding),
        conv2d_output_size(w, window, stride, padding),
    ) {
        (Some(oh), Some(ow)) => Ok(Dims { n, c, h, w, oh, ow }),
        _ => Err(Error::invalid(
            "pool2d",
            format!("window {window} larger than padded input {h}x{w} (padding {padding})"),
        )),
    }
}

/// Clamped `[start, end)` input range covered by output index `o`.
fn span(o: usize, window: usize, stride: usize, padding: usize, extent: usize) -> (usize, usize) {
    let start = (o * stride) as isize - padding as isize;
    let end = start + window as isize;
    (start.max(0) as usize, (end.max(0) as usize).min(extent))
}

fn run<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
    padding: usize,
    keep_argmax: bool,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let d = dims(input, window, stride, padding)?;
    let mut out = Vec::with_capacity(d.n * d.c * d.oh * d.ow);
    let mut argmax = Vec::new();
    let x = input.data();
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for oy in 0..d.oh {
            let (y0, y1) = span(oy, window, stride, padding, d.h);
            for ox in 0..d.ow {
                let (x0, x1) = span(ox, window, stride, padding, d.w);
                match kind {
                    PoolKind::Max => {
                        let mut best = T::neg_infinity();
                        let mut at = base;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                let idx = base + iy * d.w + ix;
                                // `!(v <= best)` lets NaN win so it surfaces as an error.
                                if !(x[idx] <= best) {
                                    best = x[idx];
                                    at = idx;
                                }
                            }
                        }
                        out.push(best);
                        if keep_argmax {
                            argmax.push(at);
                        }
                    }
                    PoolKind::Average => {
                        let mut acc = T::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc += x[base + iy * d.w + ix];
                            }
                        }
                        let cells = (y1 - y0) * (x1 - x0);
                        out.push(if cells == 0 {
                            T::nan()
                        } else {
                            acc / T::of(cells as f64)
                        });
                    }
                }
            }
        }
    }
    let out = Tensor::from_parts(vec![d.n, d.c, d.oh, d.ow], out).ensure_finite("pool2d")?;
    Ok((out, argmax))
}

pub fn pool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    run(input, kind, window, stride, padding, false).map(|(y, _)| y)
}

pub fn pool2d_forward_saved<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Pool2dContext)> {
    let (y, argmax) = run(input, kind, window, stride, padding, kind == PoolKind::Max)?;
    Ok((
        y,
        Pool2dContext {
            kind,
            input_shape: input.shape().to_vec(),
            window,
            stride,
            padding,
            argmax,
        },
    ))
}

impl Pool2dContext {
    pub fn backward<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.input_shape[..] else {
            unreachable!("pool input validated as NCHW");
        };
        let oh = conv2d_output_size(h, self.window, self.stride, self.padding).unwrap();
        let ow = conv2d_output_size(w, self.window, self.stride, self.padding).unwrap();
        check_upstream("pool2d", upstream, &[n, c, oh, ow])?;
        let mut dx = vec![T::zero(); n * c * h * w];
        let dy = upstream.data();
        match self.kind {
            PoolKind::Max => {
                for (&g, &at) in dy.iter().zip(&self.argmax) {
                    dx[at] += g;
                }
            }
            PoolKind::Average => {
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        let (y0, y1) = span(oy, self.window, self.stride, self.padding, h);
                        for ox in 0..ow {
                            let (x0, x1) = span(ox, self.window, self.stride, self.padding, w);
                            let g = dy[(plane * oh + oy) * ow + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    dx[base + iy * w + ix] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts(self.input_shape.clone(), dx).ensure_finite("pool2d backward")
    }
}

/// Mean over `H, W`: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let area = T::of((h * w) as f64);
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() / area)
        .collect();
    Tensor::from_parts(vec![n, c], data).ensure_finite("global_avg_pool")
}

#[derive(Debug, Clone)]
pub struct GlobalPoolContext {
    input_shape: Vec<usize>,
}

pub fn global_avg_pool_saved<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, GlobalPoolContext)> {
    let y = global_avg_pool(input)?;
    Ok((
        y,
        GlobalPoolContext {
            input_shape: input.shape().to_vec(),
        },
    ))
}

impl GlobalPoolContext {
    pub fn backward<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.input_shape[..] else {
            unreachable!("global pool input validated as NCHW");
        };
        check_upstream("global_avg_pool", upstream, &[n, c])?;
        let area = T::of((h * w) as f64);
        let mut dx = Vec::with_capacity(n * c * h * w);
        for &g in upstream.data() {
            dx.extend(std::iter::repeat_n(g / area, h * w));
        }
        Ok(Tensor::from_parts(self.input_shape.clone(), dx))
    }
}
