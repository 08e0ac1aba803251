//! Layer primitives with forward and hand-written backward passes.
//!
//! Each `*_forward` function is pure. The `*_forward_saved` variants also
//! return the context their backward needs; contexts own what they captured
//! so a composite layer can chain backward calls in reverse order.

mod activation;
mod concat;
mod conv;
mod linear;
mod norm;
mod pool;

use std::collections::BTreeMap;

pub use activation::{relu_forward, relu_forward_saved, ReluContext};
pub use concat::{concat_channels, split_channels, ConcatContext};
pub use conv::{conv2d_forward, conv2d_forward_saved, conv2d_output_size, Conv2dContext};
pub use linear::{linear_forward, linear_forward_saved, LinearContext};
pub use norm::{
    batchnorm_eval, batchnorm_eval_saved, batchnorm_forward, batchnorm_train, batchnorm_train_saved,
    BatchNormContext, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
pub use pool::{
    global_avg_pool, global_avg_pool_saved, pool2d_forward, pool2d_forward_saved, GlobalPoolContext,
    Pool2dContext, PoolKind,
};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether batch norm uses batch statistics (and updates running ones) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients of one op: w.r.t. its input and each of its named parameters.
#[derive(Debug, Clone)]
pub struct LayerGrad<T: Scalar = f32> {
    pub input_grad: Tensor<T>,
    pub param_grads: BTreeMap<&'static str, Tensor<T>>,
}

impl<T: Scalar> LayerGrad<T> {
    fn input_only(input_grad: Tensor<T>) -> Self {
        LayerGrad {
            input_grad,
            param_grads: BTreeMap::new(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.param_grads.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv2d,
    BatchNorm,
    Relu,
    Pool2d,
    GlobalAvgPool,
    Linear,
}

impl OpKind {
    fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Relu => "relu",
            OpKind::Pool2d => "pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Linear => "linear",
        }
    }
}

/// Context captured by a saving forward call.
#[derive(Debug, Clone)]
pub enum SavedContext<T: Scalar = f32> {
    Conv2d(Conv2dContext<T>),
    BatchNorm(BatchNormContext<T>),
    Relu(ReluContext),
    Pool2d(Pool2dContext),
    GlobalAvgPool(GlobalPoolContext),
    Linear(LinearContext<T>),
}

impl<T: Scalar> SavedContext<T> {
    pub fn kind(&self) -> OpKind {
        match self {
            SavedContext::Conv2d(_) => OpKind::Conv2d,
            SavedContext::BatchNorm(_) => OpKind::BatchNorm,
            SavedContext::Relu(_) => OpKind::Relu,
            SavedContext::Pool2d(_) => OpKind::Pool2d,
            SavedContext::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            SavedContext::Linear(_) => OpKind::Linear,
        }
    }
}

/// Backward of `op` given the upstream gradient of its output.
pub fn backward<T: Scalar>(
    op: OpKind,
    upstream: &Tensor<T>,
    saved: Option<&SavedContext<T>>,
) -> Result<LayerGrad<T>> {
    let saved = saved.ok_or(Error::MissingContext { op: op.name() })?;
    if saved.kind() != op {
        return Err(Error::invalid(
            op.name(),
            format!("saved context belongs to {}", saved.kind().name()),
        ));
    }
    match saved {
        SavedContext::Conv2d(c) => c.backward(upstream),
        SavedContext::BatchNorm(c) => c.backward(upstream),
        SavedContext::Relu(c) => c.backward(upstream).map(LayerGrad::input_only),
        SavedContext::Pool2d(c) => c.backward(upstream).map(LayerGrad::input_only),
        SavedContext::GlobalAvgPool(c) => c.backward(upstream).map(LayerGrad::input_only),
        SavedContext::Linear(c) => c.backward(upstream),
    }
}

pub(crate) fn check_upstream<T: Scalar>(
    op: &'static str,
    upstream: &Tensor<T>,
    expected: &[usize],
) -> Result<()> {
    if upstream.shape() != expected {
        return Err(Error::shape(
            op,
            format!("upstream gradient {:?}, output was {expected:?}", upstream.shape()),
        ));
    }
    Ok(())
}
