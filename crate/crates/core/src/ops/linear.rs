use crate::error::{Error, Result};
use crate::tensor::{matmul, MatRef, Scalar, Tensor};

use super::{check_upstream, LayerGrad};

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, d) = input.dims2("linear")?;
    let (k, wd) = weight.dims2("linear")?;
    if wd != d || bias.shape() != [k] {
        return Err(Error::shape(
            "linear",
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                input.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    Ok((n, d, k))
}

/// `input [N, D] · weightᵀ [D, K] + bias [K]`.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, k) = check(input, weight, bias)?;
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(n * k).collect();
    matmul(
        MatRef::new(input.data(), n, d),
        MatRef::new(weight.data(), k, d).t(),
        &mut out,
        true,
    );
    Tensor::from_parts(vec![n, k], out).ensure_finite("linear")
}

#[derive(Debug, Clone)]
pub struct LinearContext<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

pub fn linear_forward_saved<T: Scalar>(
    input: Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LinearContext<T>)> {
    let y = linear_forward(&input, weight, bias)?;
    Ok((
        y,
        LinearContext {
            input,
            weight: weight.clone(),
        },
    ))
}

impl<T: Scalar> LinearContext<T> {
    /// Gradients w.r.t. the input, `"weight"` and `"bias"`.
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<LayerGrad<T>> {
        let (n, d) = self.input.dims2("linear")?;
        let (k, _) = self.weight.dims2("linear")?;
        check_upstream("linear", upstream, &[n, k])?;
        let dy = MatRef::new(upstream.data(), n, k);
        let mut dx = vec![T::zero(); n * d];
        matmul(dy, MatRef::new(self.weight.data(), k, d), &mut dx, false);
        let mut dw = vec![T::zero(); k * d];
        matmul(dy.t(), MatRef::new(self.input.data(), n, d), &mut dw, false);
        let mut db = vec![T::zero(); k];
        for row in upstream.data().chunks_exact(k) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        Ok(LayerGrad {
            input_grad: Tensor::from_parts(vec![n, d], dx).ensure_finite("linear backward")?,
            param_grads: [
                ("weight", Tensor::from_parts(vec![k, d], dw)),
                ("bias", Tensor::from_parts(vec![k], db)),
            ]
            .into_iter()
            .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_zero_bias() {
        let x = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 - 1.5);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let x = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32);
        let b = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
        let y = linear_forward(&x, &Tensor::zeros(&[2, 2]), &b).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn(&[2, 3], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f64>::from_fn(&[4, 3], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[4], |_| rng.random_range(-1.0..1.0));
        let y = linear_forward(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = b.data()[j];
                for p in 0..3 {
                    acc += x.data()[i * 3 + p] * w.data()[j * 3 + p];
                }
                assert!((y.data()[i * 4 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_weight_backward_passes_upstream() {
        let x = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let (_, ctx) = linear_forward_saved(x, &w, &Tensor::zeros(&[3])).unwrap();
        let up = Tensor::from_fn(&[2, 3], |i| 0.1 * i as f32);
        assert_eq!(ctx.backward(&up).unwrap().input_grad, up);
    }

    #[test]
    fn mismatched_width_errors() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        assert!(linear_forward(&x, &Tensor::zeros(&[4, 2]), &Tensor::zeros(&[4])).is_err());
        assert!(linear_forward(&x, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[3])).is_err());
    }
}
