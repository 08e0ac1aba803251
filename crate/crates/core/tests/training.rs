mod common;

use common::{numeric_grad, random, rel_err};
use medbox_core::densenet::{Gradients, ModelConfig, Network, ParamStore};
use medbox_core::training::{
    apply_freeze_policy, cross_entropy, fit, sgd_step, write_epoch_log, FreezePolicy, LrDrop, OptimizerState,
    SgdParams, TensorSet, TrainConfig,
};
use medbox_core::{Error, Tensor};

#[test]
fn cross_entropy_matches_direct_f64_and_finite_differences() {
    let logits = random(&[3, 5], 41).map(|v| 3.0 * v);
    let labels = [4, 0, 2];
    let (loss, grad) = cross_entropy(&logits, &labels).unwrap();
    // direct: -log(exp(z_y) / sum exp(z))
    let mut want = 0.0;
    for (row, &y) in logits.data().chunks(5).zip(&labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[y].exp() / z).ln();
    }
    want /= 3.0;
    assert!((loss - want).abs() < 1e-12);
    let numeric = numeric_grad(&logits, 1e-3, |p| cross_entropy(p, &labels).unwrap().0);
    assert!(rel_err(&grad, &numeric) < 1e-4);
}

/// Nesterov SGD on L(w) = w²/2 written out by hand.
fn scripted_quadratic(w0: f64, lr: f64, mu: f64, wd: f64, steps: usize) -> Vec<f64> {
    let (mut w, mut v) = (w0, 0.0);
    let mut out = vec![];
    for _ in 0..steps {
        let g = w + wd * w;
        v = mu * v + g;
        w -= lr * (g + mu * v);
        out.push(w);
    }
    out
}

#[test]
fn quadratic_trajectory_matches_scripted_reference() {
    let mut store = ParamStore::<f64>::default();
    let id = store.register("w".into(), Tensor::full(&[1], 1.5));
    let mut state = OptimizerState::new(&store);
    let hp = SgdParams {
        lr: 0.1,
        momentum: 0.9,
        weight_decay: 0.01,
    };
    let want = scripted_quadratic(1.5, 0.1, 0.9, 0.01, 5);
    for expected in want {
        let w = store.tensor(id).clone();
        let mut grads = Gradients::new(store.len());
        grads.set(id, w);
        sgd_step(&mut store, &grads, &mut state, hp).unwrap();
        assert!((store.tensor(id).data()[0] - expected).abs() < 1e-14);
    }
}

#[test]
fn freeze_policy_counts() {
    let mut net = Network::<f32>::build(ModelConfig::densenet121(32, 0.5, 63), 0).unwrap();
    apply_freeze_policy(&mut net, FreezePolicy::BackboneFrozen);
    assert_eq!(net.count_params().trainable_params, 1024 * 63 + 63);
    assert_eq!(OptimizerState::new(net.params()).len(), 2);
    apply_freeze_policy(&mut net, FreezePolicy::Full);
    let report = net.count_params();
    assert_eq!(report.trainable_params, report.total_params);
}

fn toy_data(n: usize, seed: u64) -> TensorSet {
    // class 1 images are brighter than class 0 ones
    let noise = random(&[n, 3, 16, 16], seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Tensor::from_fn(&[n, 3, 16, 16], |i| {
        let sample = i / (3 * 16 * 16);
        (0.3 * noise.data()[i] + if labels[sample] == 1 { 0.8 } else { -0.8 }) as f32
    });
    TensorSet::new(&x, labels).unwrap()
}

fn small_net(seed: u64) -> Network<f32> {
    Network::build(ModelConfig::desk(4, 0.5, vec![1, 1], 2, 16), seed).unwrap()
}

fn bits(net: &Network<f32>) -> Vec<(String, Vec<u32>)> {
    let mut out: Vec<(String, Vec<u32>)> = net
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.tensor.data().iter().map(|v| v.to_bits()).collect()))
        .collect();
    for s in net.running_stats() {
        out.push((format!("{}.running_mean", s.prefix), s.stats.mean.iter().map(|v| v.to_bits()).collect()));
        out.push((format!("{}.running_var", s.prefix), s.stats.var.iter().map(|v| v.to_bits()).collect()));
    }
    out
}

#[test]
fn frozen_backbone_is_bit_identical_after_fine_tuning() {
    let mut net = small_net(3);
    let before = bits(&net);
    let cfg = TrainConfig {
        epochs: 2,
        lr_drops: vec![],
        batch_size: 4,
        ..TrainConfig::standard()
    };
    fit(&mut net, &toy_data(10, 1), &cfg, |_| {}).unwrap();
    let after = bits(&net);
    let mut changed = vec![];
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if a != b {
            changed.push(name.as_str());
        }
    }
    assert_eq!(changed, ["classifier.weight", "classifier.bias"]);
}

#[test]
fn zero_epochs_returns_initial_network() {
    let mut net = small_net(3);
    let before = bits(&net);
    let log = fit(&mut net, &toy_data(4, 1), &TrainConfig { epochs: 0, lr_drops: vec![], ..TrainConfig::standard() }, |_| {}).unwrap();
    assert!(log.is_empty());
    assert_eq!(bits(&net), before);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let cfg = TrainConfig {
        batch_size: 3,
        seed: 9,
        ..TrainConfig::from_scratch(3)
    };
    let run = || {
        let mut net = small_net(5);
        let log = fit(&mut net, &toy_data(8, 2), &cfg, |_| {}).unwrap();
        (log, bits(&net))
    };
    assert_eq!(run(), run());
}

#[test]
fn separable_toy_set_reaches_full_accuracy_classifier_only() {
    let mut net = small_net(7);
    let cfg = TrainConfig {
        epochs: 20,
        lr_drops: vec![],
        batch_size: 8,
        ..TrainConfig::standard()
    };
    let log = fit(&mut net, &toy_data(24, 4), &cfg, |_| {}).unwrap();
    assert_eq!(log.len(), 20);
    assert!(log.iter().any(|r| r.train_acc == 1.0), "{log:?}");
}

#[test]
fn full_training_also_learns_and_updates_running_stats() {
    let mut net = small_net(7);
    let before = net.stats("features.norm0").unwrap().clone();
    let cfg = TrainConfig {
        batch_size: 8,
        ..TrainConfig::from_scratch(10)
    };
    let log = fit(&mut net, &toy_data(24, 4), &cfg, |_| {}).unwrap();
    assert!(log.last().unwrap().train_acc == 1.0, "{log:?}");
    assert_ne!(net.stats("features.norm0").unwrap(), &before);
    assert_eq!(log[0].lr, 0.1);
    assert!((log[9].lr - 0.001).abs() < 1e-12);
}

#[test]
fn divergence_names_epoch_and_batch() {
    let mut net = small_net(1);
    let cfg = TrainConfig {
        epochs: 5,
        base_lr: 1e30,
        lr_drops: vec![],
        batch_size: 4,
        ..TrainConfig::standard()
    };
    let err = fit(&mut net, &toy_data(8, 3), &cfg, |_| {}).unwrap_err();
    let Error::NonFiniteLoss { epoch, batch, .. } = err else {
        panic!("unexpected error {err}");
    };
    assert!(epoch >= 1 && batch >= 1);
    assert!(err_text(epoch, batch).contains("epoch"));
}

fn err_text(epoch: usize, batch: usize) -> String {
    Error::NonFiniteLoss { epoch, batch, detail: String::new() }.to_string()
}

#[test]
fn rejects_labels_outside_the_model() {
    let mut net = small_net(1);
    let x = Tensor::zeros(&[2, 3, 16, 16]);
    let data = TensorSet::new(&x, vec![0, 2]).unwrap();
    let err = fit(&mut net, &data, &TrainConfig::standard(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
}

#[test]
fn epoch_log_csv() {
    let mut net = small_net(2);
    let cfg = TrainConfig {
        epochs: 2,
        lr_drops: vec![LrDrop { epoch: 1, factor: 0.5 }],
        ..TrainConfig::standard()
    };
    let mut seen = 0;
    let log = fit(&mut net, &toy_data(4, 3), &cfg, |_| seen += 1).unwrap();
    assert_eq!(seen, 2);
    let mut buf = Vec::new();
    write_epoch_log(&mut buf, &log).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,lr,loss,train_acc");
    assert!(lines[1].starts_with("1,0.05,"));
    assert_eq!(lines.len(), 3);
}

#[test]
fn end_to_end_loss_gradients_match_finite_differences() {
    let net = Network::<f64>::build(ModelConfig::desk(4, 0.5, vec![1, 1], 3, 8), 21).unwrap();
    let x = random(&[2, 3, 8, 8], 22);
    let labels = [2, 0];
    let loss = |n: &Network<f64>| {
        let mut n = n.clone();
        let (y, _) = n.forward_train(&x).unwrap();
        cross_entropy(&y, &labels).unwrap().0
    };
    let mut probe = net.clone();
    let (logits, tape) = probe.forward_train(&x).unwrap();
    let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
    let grads = net.backward(&tape, &dlogits).unwrap();

    // Small enough that perturbations rarely push a pre-activation across
    // a ReLU kink; at 1e-3 a few crossings per layer dominate the error.
    let h = 1e-6;
    for (id, p) in net.params().iter() {
        let analytic = grads.get(id).unwrap_or_else(|| panic!("no gradient for {}", p.name));
        let mut numeric = Tensor::zeros(p.tensor.shape());
        for i in 0..p.tensor.len() {
            let mut up = net.clone();
            up.param_mut(&p.name).unwrap().data_mut()[i] += h;
            let mut down = net.clone();
            down.param_mut(&p.name).unwrap().data_mut()[i] -= h;
            numeric.data_mut()[i] = (loss(&up) - loss(&down)) / (2.0 * h);
        }
        let err = rel_err(analytic, &numeric);
        assert!(err < 1e-3, "{}: relative error {err:e}", p.name);
    }
}
