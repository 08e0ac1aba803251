//! The realized densenet: parameter store plus the fixed layer graph, with
//! eval forward, train forward (recording a tape) and hand-chained backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{
    self, BatchNormContext, Conv2dContext, GlobalPoolContext, LinearContext, Pool2dContext, PoolKind,
    ReluContext, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
use crate::tensor::{Scalar, Tensor};

use super::config::{compressed_channels, ModelConfig, StemKind};
use super::params::{Gradients, NamedStats, ParamId, ParamReport, ParamStore};

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Debug, Clone)]
struct Stem {
    conv: Conv,
    norm: Norm,
    pool: bool,
}

/// `BN → ReLU → 1x1 conv (bottleneck) → BN → ReLU → 3x3 conv (k maps)`.
#[derive(Debug, Clone)]
struct DenseLayer {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
    input_channels: usize,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    entry_channels: usize,
    layers: Vec<DenseLayer>,
}

/// `BN → ReLU → 1x1 conv to ⌊φm⌋ → 2x2/2 average pool`.
#[derive(Debug, Clone)]
struct Transition {
    norm: Norm,
    conv: Conv,
    input_channels: usize,
    output_channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Classifier {
    weight: ParamId,
    bias: ParamId,
}

/// Channel bookkeeping of one dense block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub entry_channels: usize,
    pub layer_input_channels: Vec<usize>,
    pub output_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionInfo {
    pub input_channels: usize,
    pub output_channels: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    stats: Vec<NamedStats<T>>,
    stem: Stem,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    final_norm: Norm,
    classifier: Classifier,
    feature_channels: usize,
}

struct Builder<T: Scalar> {
    params: ParamStore<T>,
    stats: Vec<NamedStats<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    /// He-normal initialization, fan-in mode.
    fn conv(&mut self, name: &str, out: usize, inp: usize, kernel: usize, stride: usize, padding: usize) -> Conv {
        let fan_in = (inp * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[out, inp, kernel, kernel], |_| T::of(normal.sample(rng)));
        Conv {
            weight: self.params.register(format!("{name}.weight"), w),
            stride,
            padding,
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self.params.register(format!("{name}.weight"), Tensor::full(&[channels], T::one()));
        let beta = self.params.register(format!("{name}.bias"), Tensor::zeros(&[channels]));
        self.stats.push(NamedStats {
            prefix: name.to_string(),
            stats: RunningStats::new(channels),
        });
        Norm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Classifier {
        let bound = 1.0 / (inp as f64).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[out, inp], |_| T::of(rng.random_range(-bound..bound)));
        let b = Tensor::from_fn(&[out], |_| T::of(rng.random_range(-bound..bound)));
        Classifier {
            weight: self.params.register(format!("{name}.weight"), w),
            bias: self.params.register(format!("{name}.bias"), b),
        }
    }
}

fn shrink(stage: &str, extent: (usize, usize), kernel: usize, stride: usize, padding: usize) -> Result<(usize, usize)> {
    let h = ops::conv2d_output_size(extent.0, kernel, stride, padding);
    let w = ops::conv2d_output_size(extent.1, kernel, stride, padding);
    match (h, w) {
        (Some(h), Some(w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::Config(format!(
            "spatial size {}x{} vanishes at {stage}",
            extent.0, extent.1
        ))),
    }
}

/// Saved state of one `BN → ReLU → conv` chain.
#[derive(Debug)]
struct UnitTape<T: Scalar> {
    norm: BatchNormContext<T>,
    relu: ReluContext,
    conv: Conv2dContext<T>,
}

#[derive(Debug)]
struct LayerTape<T: Scalar> {
    bottleneck: UnitTape<T>,
    growth: UnitTape<T>,
}

#[derive(Debug)]
struct TransitionTape<T: Scalar> {
    unit: UnitTape<T>,
    pool: Pool2dContext,
}

/// Everything a train-mode forward recorded for [`Network::backward`].
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    stem_conv: Conv2dContext<T>,
    stem_norm: BatchNormContext<T>,
    stem_relu: ReluContext,
    stem_pool: Option<Pool2dContext>,
    blocks: Vec<Vec<LayerTape<T>>>,
    transitions: Vec<TransitionTape<T>>,
    final_norm: BatchNormContext<T>,
    final_relu: ReluContext,
    pool: GlobalPoolContext,
    classifier: LinearContext<T>,
}

impl<T: Scalar> Network<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamStore::default(),
            stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let mut extent = (config.input.height, config.input.width);
        let c0 = config.stem_channels;
        let stem = match config.stem {
            StemKind::Standard => {
                extent = shrink("stem convolution", extent, 7, 2, 3)?;
                extent = shrink("stem pooling", extent, 3, 2, 1)?;
                Stem {
                    conv: b.conv("features.conv0", c0, config.input.channels, 7, 2, 3),
                    norm: b.norm("features.norm0", c0),
                    pool: true,
                }
            }
            StemKind::Reduced => {
                extent = shrink("stem convolution", extent, 3, 1, 1)?;
                Stem {
                    conv: b.conv("features.conv0", c0, config.input.channels, 3, 1, 1),
                    norm: b.norm("features.norm0", c0),
                    pool: false,
                }
            }
        };

        let k = config.growth_rate;
        let inter = config.bottleneck_channels();
        let mut channels = c0;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (bi, &layers) in config.block_layout.iter().enumerate() {
            let entry = channels;
            let mut block = DenseBlock {
                entry_channels: entry,
                layers: Vec::with_capacity(layers),
            };
            for li in 0..layers {
                let p = format!("features.denseblock{}.denselayer{}", bi + 1, li + 1);
                block.layers.push(DenseLayer {
                    norm1: b.norm(&format!("{p}.norm1"), channels),
                    conv1: b.conv(&format!("{p}.conv1"), inter, channels, 1, 1, 0),
                    norm2: b.norm(&format!("{p}.norm2"), inter),
                    conv2: b.conv(&format!("{p}.conv2"), k, inter, 3, 1, 1),
                    input_channels: channels,
                });
                channels += k;
            }
            blocks.push(block);
            if bi + 1 < config.block_layout.len() {
                let name = format!("features.transition{}", bi + 1);
                let out = compressed_channels(config.transition_compression(bi), channels);
                if out == 0 {
                    return Err(Error::Config(format!(
                        "{name} compresses {channels} channels to zero"
                    )));
                }
                extent = shrink(&name, extent, 2, 2, 0)?;
                transitions.push(Transition {
                    norm: b.norm(&format!("{name}.norm"), channels),
                    conv: b.conv(&format!("{name}.conv"), out, channels, 1, 1, 0),
                    input_channels: channels,
                    output_channels: out,
                });
                channels = out;
            }
        }
        let final_norm = b.norm("features.norm5", channels);
        let classifier = b.linear("classifier", config.num_classes, channels);

        Ok(Network {
            config,
            params: b.params,
            stats: b.stats,
            stem,
            blocks,
            transitions,
            final_norm,
            classifier,
            feature_channels: channels,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.params.id(name)?;
        Some(self.params.tensor_mut(id))
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[NamedStats<T>] {
        &self.stats
    }

    pub fn stats(&self, prefix: &str) -> Option<&RunningStats<T>> {
        self.stats.iter().find(|s| s.prefix == prefix).map(|s| &s.stats)
    }

    pub(crate) fn stats_mut(&mut self, prefix: &str) -> Option<&mut RunningStats<T>> {
        self.stats.iter_mut().find(|s| s.prefix == prefix).map(|s| &mut s.stats)
    }

    /// Width of the pooled feature vector fed to the classifier.
    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn classifier_ids(&self) -> [ParamId; 2] {
        [self.classifier.weight, self.classifier.bias]
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        self.blocks
            .iter()
            .map(|b| BlockInfo {
                entry_channels: b.entry_channels,
                layer_input_channels: b.layers.iter().map(|l| l.input_channels).collect(),
                output_channels: b.entry_channels + b.layers.len() * self.config.growth_rate,
            })
            .collect()
    }

    pub fn transitions(&self) -> Vec<TransitionInfo> {
        self.transitions
            .iter()
            .map(|t| TransitionInfo {
                input_channels: t.input_channels,
                output_channels: t.output_channels,
            })
            .collect()
    }

    pub fn count_params(&self) -> ParamReport {
        let (total, trainable) = self.params.iter().fold((0, 0), |(t, tr), (_, p)| {
            (t + p.tensor.len(), tr + if p.trainable { p.tensor.len() } else { 0 })
        });
        ParamReport::from_counts(total, trainable)
    }

    /// Same network with every tensor converted to another float type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut params = ParamStore::default();
        for (_, p) in self.params.iter() {
            let id = params.register(p.name.clone(), p.tensor.cast());
            params.set_trainable(id, p.trainable);
        }
        Network {
            config: self.config.clone(),
            params,
            stats: self
                .stats
                .iter()
                .map(|s| NamedStats {
                    prefix: s.prefix.clone(),
                    stats: s.stats.cast(),
                })
                .collect(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            transitions: self.transitions.clone(),
            final_norm: self.final_norm,
            classifier: self.classifier,
            feature_channels: self.feature_channels,
        }
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let (_, c, _, _) = batch.dims4("network")?;
        if c != self.config.input.channels {
            return Err(Error::shape(
                "network",
                format!(
                    "batch {:?} has {c} channels, model expects {}",
                    batch.shape(),
                    self.config.input.channels
                ),
            ));
        }
        Ok(())
    }

    fn conv_eval(&self, conv: Conv, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_forward(x, self.params.tensor(conv.weight), conv.stride, conv.padding)
    }

    fn norm_eval(&self, norm: Norm, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::batchnorm_eval(
            x,
            self.params.tensor(norm.gamma),
            self.params.tensor(norm.beta),
            &self.stats[norm.stats].stats,
            BN_EPSILON,
        )
    }

    fn unit_eval(&self, norm: Norm, conv: Conv, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = ops::relu_forward(&self.norm_eval(norm, x)?)?;
        self.conv_eval(conv, &a)
    }

    /// Eval-mode backbone: pooled `[N, C]` features ahead of the classifier.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let mut x = self.conv_eval(self.stem.conv, batch)?;
        x = ops::relu_forward(&self.norm_eval(self.stem.norm, &x)?)?;
        if self.stem.pool {
            x = ops::pool2d_forward(&x, PoolKind::Max, 3, 2, 1)?;
        }
        for (bi, block) in self.blocks.iter().enumerate() {
            for layer in &block.layers {
                let y = self.unit_eval(layer.norm1, layer.conv1, &x)?;
                let y = self.unit_eval(layer.norm2, layer.conv2, &y)?;
                x = ops::concat_channels(&[&x, &y])?;
            }
            if let Some(t) = self.transitions.get(bi) {
                x = self.unit_eval(t.norm, t.conv, &x)?;
                x = ops::pool2d_forward(&x, PoolKind::Average, 2, 2, 0)?;
            }
        }
        x = ops::relu_forward(&self.norm_eval(self.final_norm, &x)?)?;
        ops::global_avg_pool(&x)
    }

    /// Applies the linear classifier to pooled features.
    pub fn classify(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear_forward(
            features,
            self.params.tensor(self.classifier.weight),
            self.params.tensor(self.classifier.bias),
        )
    }

    /// Eval-mode logits `[N, num_classes]`; a pure function of the network and batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.classify(&self.features(batch)?)
    }

    /// Classifier forward that keeps its context, for head-only training.
    pub fn classify_saved(&self, features: Tensor<T>) -> Result<(Tensor<T>, LinearContext<T>)> {
        ops::linear_forward_saved(
            features,
            self.params.tensor(self.classifier.weight),
            self.params.tensor(self.classifier.bias),
        )
    }

    /// Gradients of the classifier parameters only.
    pub fn classifier_backward(&self, ctx: &LinearContext<T>, upstream: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::new(self.params.len());
        let mut g = ctx.backward(upstream)?;
        grads.set(self.classifier.weight, take(&mut g, "weight"));
        grads.set(self.classifier.bias, take(&mut g, "bias"));
        Ok(grads)
    }

    /// Train-mode forward: batch statistics, running-stat updates and a tape for backward.
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(batch)?;
        let Network {
            params,
            stats,
            stem,
            blocks,
            transitions,
            final_norm,
            classifier,
            ..
        } = self;
        let params = &*params;

        let norm = |n: Norm, x: &Tensor<T>, stats: &mut Vec<NamedStats<T>>| {
            ops::batchnorm_train_saved(
                x,
                params.tensor(n.gamma),
                params.tensor(n.beta),
                &mut stats[n.stats].stats,
                BN_MOMENTUM,
                BN_EPSILON,
            )
        };
        let unit = |n: Norm, c: Conv, x: &Tensor<T>, stats: &mut Vec<NamedStats<T>>| -> Result<(Tensor<T>, UnitTape<T>)> {
            let (a, norm_ctx) = norm(n, x, stats)?;
            let (a, relu_ctx) = ops::relu_forward_saved(&a)?;
            let (y, conv_ctx) = ops::conv2d_forward_saved(a, params.tensor(c.weight), c.stride, c.padding)?;
            Ok((
                y,
                UnitTape {
                    norm: norm_ctx,
                    relu: relu_ctx,
                    conv: conv_ctx,
                },
            ))
        };

        let (x, stem_conv) =
            ops::conv2d_forward_saved(batch.clone(), params.tensor(stem.conv.weight), stem.conv.stride, stem.conv.padding)?;
        let (x, stem_norm) = norm(stem.norm, &x, stats)?;
        let (mut x, stem_relu) = ops::relu_forward_saved(&x)?;
        let stem_pool = if stem.pool {
            let (y, ctx) = ops::pool2d_forward_saved(&x, PoolKind::Max, 3, 2, 1)?;
            x = y;
            Some(ctx)
        } else {
            None
        };

        let mut block_tapes = Vec::with_capacity(blocks.len());
        let mut transition_tapes = Vec::with_capacity(transitions.len());
        for (bi, block) in blocks.iter().enumerate() {
            let mut layer_tapes = Vec::with_capacity(block.layers.len());
            for layer in &block.layers {
                let (y, bottleneck) = unit(layer.norm1, layer.conv1, &x, stats)?;
                let (y, growth) = unit(layer.norm2, layer.conv2, &y, stats)?;
                x = ops::concat_channels(&[&x, &y])?;
                layer_tapes.push(LayerTape { bottleneck, growth });
            }
            block_tapes.push(layer_tapes);
            if let Some(t) = transitions.get(bi) {
                let (y, unit_tape) = unit(t.norm, t.conv, &x, stats)?;
                let (y, pool) = ops::pool2d_forward_saved(&y, PoolKind::Average, 2, 2, 0)?;
                x = y;
                transition_tapes.push(TransitionTape { unit: unit_tape, pool });
            }
        }
        let (x, final_norm_ctx) = norm(*final_norm, &x, stats)?;
        let (x, final_relu) = ops::relu_forward_saved(&x)?;
        let (features, pool) = ops::global_avg_pool_saved(&x)?;
        let (logits, classifier_ctx) = ops::linear_forward_saved(
            features,
            params.tensor(classifier.weight),
            params.tensor(classifier.bias),
        )?;
        Ok((
            logits,
            Tape {
                stem_conv,
                stem_norm,
                stem_relu,
                stem_pool,
                blocks: block_tapes,
                transitions: transition_tapes,
                final_norm: final_norm_ctx,
                final_relu,
                pool,
                classifier: classifier_ctx,
            },
        ))
    }

    fn unit_backward(&self, norm: Norm, conv: Conv, tape: &UnitTape<T>, up: &Tensor<T>, grads: &mut Gradients<T>) -> Result<Tensor<T>> {
        let mut g = tape.conv.backward(up)?;
        grads.set(conv.weight, take(&mut g, "weight"));
        let d = tape.relu.backward(&g.input_grad)?;
        self.norm_backward(norm, &tape.norm, &d, grads)
    }

    fn norm_backward(&self, norm: Norm, ctx: &BatchNormContext<T>, up: &Tensor<T>, grads: &mut Gradients<T>) -> Result<Tensor<T>> {
        let mut g = ctx.backward(up)?;
        grads.set(norm.gamma, take(&mut g, "weight"));
        grads.set(norm.beta, take(&mut g, "bias"));
        Ok(g.input_grad)
    }

    /// Gradients of every parameter given `d loss / d logits`, chained in reverse.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.blocks.len() != self.blocks.len() {
            return Err(Error::invalid("network backward", "tape was recorded by a different network"));
        }
        let mut grads = Gradients::new(self.params.len());
        let mut g = tape.classifier.backward(dlogits)?;
        grads.set(self.classifier.weight, take(&mut g, "weight"));
        grads.set(self.classifier.bias, take(&mut g, "bias"));
        let d = tape.pool.backward(&g.input_grad)?;
        let d = tape.final_relu.backward(&d)?;
        let mut d = self.norm_backward(self.final_norm, &tape.final_norm, &d, &mut grads)?;

        for (bi, block) in self.blocks.iter().enumerate().rev() {
            if let Some(t) = self.transitions.get(bi) {
                let tt = &tape.transitions[bi];
                let up = tt.pool.backward(&d)?;
                d = self.unit_backward(t.norm, t.conv, &tt.unit, &up, &mut grads)?;
            }
            let k = self.config.growth_rate;
            for (layer, lt) in block.layers.iter().zip(&tape.blocks[bi]).rev() {
                // d is the gradient of concat(x, y); split it and push y's part through H_l.
                let mut parts = ops::split_channels(&d, &[layer.input_channels, k])?.into_iter();
                let (mut dx, dy) = (parts.next().unwrap(), parts.next().unwrap());
                let dy = self.unit_backward(layer.norm2, layer.conv2, &lt.growth, &dy, &mut grads)?;
                let through = self.unit_backward(layer.norm1, layer.conv1, &lt.bottleneck, &dy, &mut grads)?;
                add_assign(&mut dx, &through);
                d = dx;
            }
        }

        if let Some(pool) = &tape.stem_pool {
            d = pool.backward(&d)?;
        }
        let d = tape.stem_relu.backward(&d)?;
        let d = self.norm_backward(self.stem.norm, &tape.stem_norm, &d, &mut grads)?;
        let mut g = tape.stem_conv.backward(&d)?;
        grads.set(self.stem.conv.weight, take(&mut g, "weight"));
        Ok(grads)
    }
}

fn take<T: Scalar>(g: &mut ops::LayerGrad<T>, name: &str) -> Tensor<T> {
    g.param_grads.remove(name).expect("op reports its parameter gradients")
}

fn add_assign<T: Scalar>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}
