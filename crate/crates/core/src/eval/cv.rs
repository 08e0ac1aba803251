use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, metrics, ConfusionMatrix, MetricsReport};
use crate::data::{derive_seed, ImageCollection, ImageSubset, SplitPlan, ViewConfig};
use crate::densenet::{ModelConfig, Network};
use crate::error::{Error, Result};
use crate::training::{argmax_rows, fit, EpochLog, TrainConfig, TrainSet};

/// Per-epoch progress: `(repetition, log row)`.
pub type Progress<'a> = &'a (dyn Fn(usize, &EpochLog) + Sync);
/// Receives each repetition's trained network before it is dropped.
pub type ModelSink<'a> = &'a (dyn Fn(usize, &Network<f32>) + Sync);

#[derive(Clone, Copy)]
pub struct CvOptions<'a> {
    /// Square input side; images are resized to it.
    pub image_size: usize,
    pub eval_batch: usize,
    /// Repetitions trained concurrently; 0 means available parallelism.
    pub workers: usize,
    pub progress: Option<Progress<'a>>,
    pub on_model: Option<ModelSink<'a>>,
}

impl CvOptions<'_> {
    pub fn new(image_size: usize) -> Self {
        CvOptions {
            image_size,
            eval_batch: 64,
            workers: 0,
            progress: None,
            on_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub index: usize,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mean: Aggregate,
    /// Sample standard deviation; 0 for a single repetition.
    pub std: Aggregate,
    pub repetitions: Vec<RepetitionResult>,
}

impl CvReport {
    /// Confusion counts summed over repetitions.
    pub fn pooled_confusion(&self) -> ConfusionMatrix {
        let mut it = self.repetitions.iter();
        let mut cm = it.next().map(|r| r.confusion.clone()).unwrap_or_else(|| ConfusionMatrix::new(0));
        for r in it {
            cm.merge(&r.confusion).expect("repetitions share a label space");
        }
        cm
    }
}

/// Eval-mode predictions for every member of `data`, `batch` samples at a time.
pub fn predict(net: &Network<f32>, data: &ImageSubset<'_>, batch: usize) -> Result<Vec<usize>> {
    let batch = batch.max(1);
    let mut out = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch) {
        let x = data.batch(chunk, 0)?;
        out.extend(argmax_rows(&net.forward(&x)?)?);
    }
    Ok(out)
}

fn run_repetition(
    data: &ImageCollection,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: &SplitPlan,
    opts: &CvOptions<'_>,
    rep: usize,
) -> Result<RepetitionResult> {
    let split = &plan.repetitions[rep];
    let seed = |part: u64| derive_seed(train_cfg.seed, &[rep as u64, part]);
    let mut net = Network::build(model_cfg.clone(), seed(0))?;
    let cfg = TrainConfig {
        seed: seed(1),
        ..train_cfg.clone()
    };
    let train = data.subset(&split.train, ViewConfig::train(opts.image_size, seed(2)));
    let log = fit(&mut net, &train, &cfg, |row| {
        if let Some(p) = opts.progress {
            p(rep, row)
        }
    })?;
    let test = data.subset(&split.test, ViewConfig::eval(opts.image_size));
    let predicted = predict(&net, &test, opts.eval_batch)?;
    if let Some(sink) = opts.on_model {
        sink(rep, &net);
    }
    let cm = confusion(test.labels(), &predicted, model_cfg.num_classes)?;
    Ok(RepetitionResult {
        index: rep,
        metrics: metrics(&cm)?,
        confusion: cm,
        log,
    })
}

fn aggregate(reps: &[RepetitionResult]) -> (Aggregate, Aggregate) {
    let n = reps.len() as f64;
    let pick = |f: fn(&MetricsReport) -> f64| {
        let xs: Vec<f64> = reps.iter().map(|r| f(&r.metrics)).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (a, sa) = pick(|m| m.accuracy);
    let (p, sp) = pick(|m| m.precision);
    let (r, sr) = pick(|m| m.recall);
    let (f, sf) = pick(|m| m.f1);
    (
        Aggregate { accuracy: a, precision: p, recall: r, f1: f },
        Aggregate { accuracy: sa, precision: sp, recall: sr, f1: sf },
    )
}

/// Trains and evaluates one model per split repetition.
///
/// Each repetition seeds model initialization, shuffling and augmentation
/// from `(train_cfg.seed, repetition)`, so results do not depend on how many
/// repetitions run at once.
pub fn cross_validate(
    data: &ImageCollection,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: &SplitPlan,
    opts: &CvOptions<'_>,
) -> Result<CvReport> {
    if plan.repetitions.is_empty() {
        return Err(Error::Empty("split plan"));
    }
    if model_cfg.num_classes != data.num_classes {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            model_cfg.num_classes, data.num_classes
        )));
    }
    model_cfg.validate()?;
    train_cfg.validate()?;

    let n = plan.repetitions.len();
    let workers = match opts.workers {
        0 => std::thread::available_parallelism().map_or(1, |p| p.get()),
        w => w,
    }
    .min(n);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RepetitionResult>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::Relaxed);
                if rep >= n {
                    break;
                }
                let r = run_repetition(data, model_cfg, train_cfg, plan, opts, rep);
                let failed = r.is_err();
                results.lock().unwrap()[rep] = Some(r);
                if failed {
                    next.store(n, Ordering::Relaxed);
                }
            });
        }
    });
    let mut reps = Vec::with_capacity(n);
    for r in results.into_inner().unwrap() {
        match r {
            Some(r) => reps.push(r?),
            None => continue,
        }
    }
    let (mean, std) = aggregate(&reps);
    Ok(CvReport {
        mean,
        std,
        repetitions: reps,
    })
}
