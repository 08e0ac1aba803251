use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::check_upstream;

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.map(|v| if v <= T::zero() { T::zero() } else { v }).ensure_finite("relu")
}

#[derive(Debug, Clone)]
pub struct ReluContext {
    shape: Vec<usize>,
    active: Vec<bool>,
}

pub fn relu_forward_saved<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, ReluContext)> {
    let out = relu_forward(input)?;
    let active = input.data().iter().map(|&v| v > T::zero()).collect();
    Ok((
        out,
        ReluContext {
            shape: input.shape().to_vec(),
            active,
        },
    ))
}

impl ReluContext {
    pub fn backward<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        check_upstream("relu", upstream, &self.shape)?;
        let data = upstream
            .data()
            .iter()
            .zip(&self.active)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }
}
