//! Bias-free 2-D cross-correlation via im2col + gemm.

use crate::error::{Error, Result};
use crate::tensor::{matmul, MatRef, Scalar, Tensor};

use super::{check_upstream, LayerGrad};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let (n, c, h, w) = input.dims4("conv2d")?;
        let (f, wc, kh, kw) = weight.dims4("conv2d")?;
        if wc != c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {:?} has {c} channels but weight {:?} expects {wc}",
                    input.shape(),
                    weight.shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let (Some(oh), Some(ow)) = (
            conv2d_output_size(h, kh, stride, padding),
            conv2d_output_size(w, kw, stride, padding),
        ) else {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"),
            ));
        };
        Ok(Geometry {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        })
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_image(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Input coordinate hit by output index `o` at kernel offset `k`, if inside the image.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

impl Geometry {
    /// Output columns `lo..hi` whose kernel offset `k` lands inside the image row,
    /// and the input column hit by `lo`.
    fn valid_columns(&self, k: usize) -> (usize, usize, usize) {
        // smallest ox with ox*stride + k >= padding
        let lo = self.padding.saturating_sub(k).div_ceil(self.stride).min(self.ow);
        // ox*stride + k - padding < w
        let limit = self.w + self.padding;
        let hi = if k >= limit {
            lo
        } else {
            ((limit - k - 1) / self.stride + 1).clamp(lo, self.ow)
        };
        (lo, hi, (lo * self.stride + k).saturating_sub(self.padding))
    }
}

fn im2col<T: Scalar>(g: &Geometry, image: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let channel = &image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi, ix0) = g.valid_columns(kj);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let Some(iy) = g.source(oy, ki, g.h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    let src = &channel[iy * g.w..(iy + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (out, &v) in line[lo..hi].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                            *out = v;
                        }
                    }
                }
            }
        }
    }
}

/// [`im2col`] laid out `[plane, patch]`, one row per output pixel.
fn im2col_t<T: Scalar>(g: &Geometry, image: &[T], rows: &mut [T]) {
    let patch = g.patch();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut rows[(oy * g.ow + ox) * patch..(oy * g.ow + ox + 1) * patch];
            let x0 = (ox * g.stride) as isize - g.padding as isize;
            let inside = x0 >= 0 && x0 as usize + g.kw <= g.w;
            for ci in 0..g.c {
                let channel = &image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ki in 0..g.kh {
                    let dst = &mut row[(ci * g.kh + ki) * g.kw..(ci * g.kh + ki + 1) * g.kw];
                    let Some(iy) = g.source(oy, ki, g.h) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    let src = &channel[iy * g.w..(iy + 1) * g.w];
                    if inside {
                        dst.copy_from_slice(&src[x0 as usize..x0 as usize + g.kw]);
                    } else {
                        for (kj, d) in dst.iter_mut().enumerate() {
                            *d = g.source(ox, kj, g.w).map_or(T::zero(), |ix| src[ix]);
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `[rows, cols]` into `[cols, rows]`.
fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image, accumulating.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], image: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let channel = &mut image[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi, ix0) = g.valid_columns(kj);
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else {
                        continue;
                    };
                    let dst = &mut channel[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,C,H,W]` with `weight [F,C,kh,kw]`, no bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weight, stride, padding)?;
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.n * g.f * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * plane]
    };
    let w = MatRef::new(weight.data(), g.f, g.patch());
    for (image, y) in input
        .data()
        .chunks_exact(g.in_image())
        .zip(out.chunks_exact_mut(g.f * plane))
    {
        let x = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        matmul(w, MatRef::new(x, g.patch(), plane), y, false);
    }
    Tensor::from_parts(vec![g.n, g.f, g.oh, g.ow], out).ensure_finite("conv2d")
}

#[derive(Debug, Clone)]
pub struct Conv2dContext<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
    stride: usize,
    padding: usize,
}

/// Like [`conv2d_forward`] but keeps the input and weight for backward.
pub fn conv2d_forward_saved<T: Scalar>(
    input: Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Conv2dContext<T>)> {
    let out = conv2d_forward(&input, weight, stride, padding)?;
    Ok((
        out,
        Conv2dContext {
            input,
            weight: weight.clone(),
            stride,
            padding,
        },
    ))
}

impl<T: Scalar> Conv2dContext<T> {
    /// Gradients w.r.t. the input and `"weight"`.
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<LayerGrad<T>> {
        let g = Geometry::new(&self.input, &self.weight, self.stride, self.padding)?;
        check_upstream("conv2d", upstream, &[g.n, g.f, g.oh, g.ow])?;
        let plane = g.out_plane();
        let mut dweight = vec![T::zero(); g.f * g.patch()];
        let mut dinput = vec![T::zero(); g.n * g.in_image()];
        let pointwise = g.is_pointwise();
        let mut cols = vec![T::zero(); g.patch() * plane];
        // Stride-1 input gradients are a full correlation of the upstream
        // gradient with the flipped, channel-transposed kernel.
        let flipped = !pointwise && g.stride == 1 && g.kh == g.kw && g.padding < g.kh;
        let mut dcols = if pointwise || flipped {
            Vec::new()
        } else {
            vec![T::zero(); g.patch() * plane]
        };
        let w = MatRef::new(self.weight.data(), g.f, g.patch());
        for ((image, dy), dx) in self
            .input
            .data()
            .chunks_exact(g.in_image())
            .zip(upstream.data().chunks_exact(g.f * plane))
            .zip(dinput.chunks_exact_mut(g.in_image()))
        {
            let dy = MatRef::new(dy, g.f, plane);
            // The weight gradient reads the columns transposed; a row-major
            // copy packs much faster than a strided view.
            if pointwise {
                transpose(image, g.patch(), plane, &mut cols);
            } else {
                im2col_t(&g, image, &mut cols);
            }
            matmul(dy, MatRef::new(&cols, plane, g.patch()), &mut dweight, true);
            if pointwise {
                matmul(w.t(), dy, dx, false);
            } else if !flipped {
                matmul(w.t(), dy, &mut dcols, false);
                col2im(&g, &dcols, dx);
            }
        }
        if flipped {
            let k = g.kh;
            let wt = Tensor::from_fn(&[g.c, g.f, k, k], |i| {
                let (kj, rest) = (i % k, i / k);
                let (ki, rest) = (rest % k, rest / k);
                let (fi, ci) = (rest % g.f, rest / g.f);
                self.weight.data()[((fi * g.c + ci) * k + k - 1 - ki) * k + k - 1 - kj]
            });
            dinput = conv2d_forward(upstream, &wt, 1, k - 1 - g.padding)?.into_data();
        }
        let input_grad =
            Tensor::from_parts(self.input.shape().to_vec(), dinput).ensure_finite("conv2d backward")?;
        let weight_grad =
            Tensor::from_parts(self.weight.shape().to_vec(), dweight).ensure_finite("conv2d backward")?;
        Ok(LayerGrad {
            input_grad,
            param_grads: [("weight", weight_grad)].into_iter().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::linear_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Six nested loops straight from the definition.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4("t").unwrap();
        let (f, _, kh, kw) = w.dims4("t").unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for b in 0..n {
            for o in 0..f {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((b * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((o * c + ci) * kh + i) * kw + j];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((b * f + o) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_product() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, 1, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn strided_padded_matches_loop_oracle() {
        let x = random(&[1, 2, 4, 4], 11);
        let w = random(&[3, 2, 3, 3], 12);
        let y = conv2d_forward(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        assert!(y.max_abs_diff(&naive(&x, &w, 2, 1)) < 1e-12);
    }

    #[test]
    fn batched_shapes_match_loop_oracle() {
        for &(stride, pad, k) in &[(1, 0, 1), (1, 1, 3), (2, 3, 7), (1, 0, 2), (3, 2, 3)] {
            let x = random(&[2, 3, 9, 7], 20 + k as u64);
            let w = random(&[4, 3, k, k], 30 + k as u64);
            let y = conv2d_forward(&x, &w, stride, pad).unwrap();
            assert!(y.max_abs_diff(&naive(&x, &w, stride, pad)) < 1e-12, "k={k} s={stride} p={pad}");
        }
    }

    #[test]
    fn pointwise_conv_is_a_per_pixel_linear_map() {
        let x = random(&[2, 5, 3, 4], 1);
        let w = random(&[6, 5, 1, 1], 2);
        let y = conv2d_forward(&x, &w, 1, 0).unwrap();
        // Rearrange NCHW -> (N*H*W, C) rows and apply the same weights as a linear layer.
        let (n, c, h, wd) = x.dims4("t").unwrap();
        let mut rows = Vec::new();
        for b in 0..n {
            for p in 0..h * wd {
                for ci in 0..c {
                    rows.push(x.data()[(b * c + ci) * h * wd + p]);
                }
            }
        }
        let rows = Tensor::new(vec![n * h * wd, c], rows).unwrap();
        let lin = linear_forward(&rows, &w.clone().reshape(&[6, 5]).unwrap(), &Tensor::zeros(&[6])).unwrap();
        for b in 0..n {
            for p in 0..h * wd {
                for o in 0..6 {
                    let a = y.data()[(b * 6 + o) * h * wd + p];
                    let l = lin.data()[(b * h * wd + p) * 6 + o];
                    assert!((a - l).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 5, 3, 3]);
        let msg = conv2d_forward(&x, &w, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 5, 3, 3]"), "{msg}");
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d_forward(&x, &w, 1, 1).is_err());
        assert!(conv2d_forward(&x, &w, 0, 2).is_err());
    }
}
