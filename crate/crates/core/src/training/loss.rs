use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits,
/// `(softmax - onehot) / N`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {n} logit rows", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut grad = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            grad.push(T::of((p - target) / n as f64));
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}

/// Row-wise softmax, computed in f64 and max-shifted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().map(|v| v.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v.to_f64().unwrap() - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| T::of(v / s)));
    }
    Tensor::new(vec![n, k], out)
}

/// Index of the largest value in each row (first one on ties).
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = t.dims2("argmax")?;
    Ok(t.data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}
