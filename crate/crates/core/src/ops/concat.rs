use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Concatenates `[N, Ci, H, W]` tensors along the channel axis, preserving order.
///
/// All inputs must agree on `N`, `H` and `W`; the first disagreeing input is
/// reported by index.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or(Error::Empty("concat_channels"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let (ni, ci, hi, wi) = t.dims4("concat_channels")?;
        if (ni, hi, wi) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "input {i} has shape {:?}, expected batch {n} and spatial {h}x{w} of input 0",
                    t.shape()
                ),
            ));
        }
        channels.push(ci);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (t, &c) in inputs.iter().zip(&channels) {
            data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], data))
}

/// Remembers the channel counts of a concatenation so its gradient can be split.
#[derive(Debug, Clone)]
pub struct ConcatContext {
    pub channels: Vec<usize>,
}

impl ConcatContext {
    pub fn backward<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        split_channels(upstream, &self.channels)
    }
}

/// Inverse of [`concat_channels`]: cuts `[N, ΣCi, H, W]` into `[N, Ci, H, W]` pieces.
pub fn split_channels<T: Scalar>(input: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = input.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != c || channels.contains(&0) {
        return Err(Error::shape(
            "split_channels",
            format!("cannot split {c} channels into {channels:?}"),
        ));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&ci| Vec::with_capacity(n * ci * plane))
        .collect();
    for b in 0..n {
        let mut offset = b * c * plane;
        for (part, &ci) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&input.data()[offset..offset + ci * plane]);
            offset += ci * plane;
        }
    }
    Ok(parts
        .into_iter()
        .zip(channels)
        .map(|(data, &ci)| Tensor::from_parts(vec![n, ci, h, w], data))
        .collect())
}
