use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::densenet::Network;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::config::{FreezePolicy, TrainConfig};
use super::loss::{argmax_rows, cross_entropy};
use super::optim::{sgd_step, OptimizerState, SgdParams};

/// Labeled samples that can be materialized as input batches.
pub trait TrainSet {
    fn labels(&self) -> &[usize];

    /// `[B, C, H, W]` inputs for `indices`. `epoch` (1-based) keys any
    /// augmentation, so the same call always yields the same tensor.
    fn batch(&self, indices: &[usize], epoch: usize) -> Result<Tensor<f32>>;

    fn len(&self) -> usize {
        self.labels().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pre-built input tensors, served as-is.
#[derive(Debug, Clone)]
pub struct TensorSet {
    inputs: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl TensorSet {
    /// `inputs` is `[N, C, H, W]`.
    pub fn new(inputs: &Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let (n, ..) = inputs.dims4("tensor set")?;
        if n != labels.len() {
            return Err(Error::shape("tensor set", format!("{n} inputs, {} labels", labels.len())));
        }
        let inputs = (0..n)
            .map(|i| inputs.sample(i)?.reshape(&inputs.shape()[1..]))
            .collect::<Result<_>>()?;
        Ok(TensorSet { inputs, labels })
    }
}

impl TrainSet for TensorSet {
    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, indices: &[usize], _epoch: usize) -> Result<Tensor<f32>> {
        let parts: Vec<Tensor<f32>> = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        Tensor::stack(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    pub train_acc: f64,
}

/// Marks every parameter trainable (`Full`) or only the classifier (`BackboneFrozen`).
pub fn apply_freeze_policy<T: Scalar>(net: &mut Network<T>, policy: FreezePolicy) {
    let head = net.classifier_ids();
    for (id, p) in net.params_mut().iter_mut() {
        p.trainable = match policy {
            FreezePolicy::Full => true,
            FreezePolicy::BackboneFrozen => head.contains(&id),
        };
    }
}

/// Trains `net` in place and returns one log row per epoch.
///
/// Under `BackboneFrozen` the backbone runs its eval-mode forward (running
/// statistics, no updates) and only the classifier receives gradients.
pub fn fit(
    net: &mut Network<f32>,
    data: &dyn TrainSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let classes = net.config().num_classes;
    if let Some(&label) = data.labels().iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    apply_freeze_policy(net, cfg.freeze_policy);
    let mut state = OptimizerState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let hp = SgdParams {
            lr: cfg.lr_at(epoch),
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::NonFiniteLoss {
                    epoch,
                    batch: bi + 1,
                    detail: format!("{op} produced a non-finite value"),
                },
                other => other,
            };
            let x = data.batch(idx, epoch)?;
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let (logits, grads, loss) = match cfg.freeze_policy {
                FreezePolicy::BackboneFrozen => {
                    let features = net.features(&x).map_err(diverged)?;
                    let (logits, ctx) = net.classify_saved(features).map_err(diverged)?;
                    let (loss, dlogits) = cross_entropy(&logits, &labels).map_err(diverged)?;
                    let grads = net.classifier_backward(&ctx, &dlogits).map_err(diverged)?;
                    (logits, grads, loss)
                }
                FreezePolicy::Full => {
                    let (logits, tape) = net.forward_train(&x).map_err(diverged)?;
                    let (loss, dlogits) = cross_entropy(&logits, &labels).map_err(diverged)?;
                    let grads = net.backward(&tape, &dlogits).map_err(diverged)?;
                    (logits, grads, loss)
                }
            };
            sgd_step(net.params_mut(), &grads, &mut state, hp)?;
            if net.params().iter().any(|(_, p)| p.trainable && !p.tensor.all_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi + 1,
                    detail: "parameters became non-finite after the update".into(),
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += argmax_rows(&logits)?
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
        }
        let row = EpochLog {
            epoch,
            lr: hp.lr,
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(log)
}

/// Writes the epoch log as CSV with an `epoch,lr,loss,train_acc` header.
pub fn write_epoch_log(mut out: impl Write, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,loss,train_acc")?;
    for r in log {
        writeln!(out, "{},{},{},{}", r.epoch, r.lr, r.loss, r.train_acc)?;
    }
    Ok(())
}
