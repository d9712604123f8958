mod common;

use std::collections::BTreeMap;

use common::rng;
use crackprop::data::{synth_generate, AugmentationConfig, FramePair, SyntheticSpec};
use crackprop::eval::{confusion_at_threshold, ProbabilityMap};
use crackprop::image::batch_tensor;
use crackprop::network::{Network, NetworkConfig, NetworkWeights};
use crackprop::tensor::Tensor;
use crackprop::train::*;
use proptest::prelude::*;
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct evaluation of the negated weighted log-likelihood.
fn loss_oracle(logits: &[f64], gt: &[u8], gamma: f64, lambda: f64) -> f64 {
    let n = gt.len() as f64;
    let pos = gt.iter().filter(|&&g| g == 1).count() as f64;
    let alpha = gamma + pos / n;
    let beta = lambda * (n - pos) / n;
    let mut l = 0.0;
    for (&x, &g) in logits.iter().zip(gt) {
        let p = sigmoid(x);
        if g == 1 {
            l -= beta * p.ln();
        } else {
            l -= alpha * (1.0 - p).ln();
        }
    }
    l
}

#[test]
fn balance_weights_follow_label_counts() {
    let mut gt = vec![0u8; 100];
    gt[..10].fill(1);
    let cfg = LossConfig {
        gamma: 0.0,
        lambda: 1.0,
    };
    let (a, b) = cfg.weights(&gt);
    assert!((a - 0.1).abs() < 1e-15 && (b - 0.9).abs() < 1e-15);
    let d = LossConfig::default();
    assert_eq!((d.gamma, d.lambda), (0.0, 1.1));
}

#[test]
fn loss_matches_direct_evaluation() {
    let mut r = rng(11);
    for _ in 0..20 {
        let n = r.random_range(4..40);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        let gt: Vec<u8> = (0..n).map(|_| r.random_bool(0.3) as u8).collect();
        let cfg = LossConfig {
            gamma: r.random_range(0.0..0.5),
            lambda: r.random_range(0.5..2.0),
        };
        let (l, _) = class_balanced_bce(&logits, &gt, &cfg).unwrap();
        let want = loss_oracle(&logits, &gt, cfg.gamma, cfg.lambda);
        assert!((l - want).abs() < 1e-10 * want.abs().max(1.0));
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut r = rng(12);
    for _ in 0..25 {
        let n = r.random_range(4..30);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let gt: Vec<u8> = (0..n).map(|_| r.random_bool(0.4) as u8).collect();
        let cfg = LossConfig::default();
        let (_, grad) = class_balanced_bce(&logits, &gt, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut plus = logits.clone();
            plus[i] += h;
            let mut minus = logits.clone();
            minus[i] -= h;
            let numeric = (loss_oracle(&plus, &gt, 0.0, 1.1) - loss_oracle(&minus, &gt, 0.0, 1.1)) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "element {i}: {} vs {numeric}", grad[i]);
        }
    }
}

#[test]
fn confident_correct_predictions_cost_nothing() {
    let gt = vec![1, 0, 0, 1, 0];
    let logits: Vec<f64> = gt.iter().map(|&g| if g == 1 { 40.0 } else { -40.0 }).collect();
    let (l, g) = class_balanced_bce(&logits, &gt, &LossConfig::default()).unwrap();
    assert!(l < 1e-6);
    assert!(g.iter().all(|x| x.abs() < 1e-6));
}

#[test]
fn all_negative_map_drops_the_positive_term() {
    let gt = vec![0u8; 16];
    let logits = vec![0.0f64; 16];
    let (l, g) = class_balanced_bce(&logits, &gt, &LossConfig::default()).unwrap();
    // α = γ = 0 and there are no positives
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&x| x == 0.0));
    let gamma = LossConfig {
        gamma: 0.5,
        lambda: 1.1,
    };
    let (l, _) = class_balanced_bce(&logits, &gt, &gamma).unwrap();
    assert!((l - 16.0 * 0.5 * 2f64.ln()).abs() < 1e-12);
}

fn one_param(values: Vec<f32>) -> NetworkWeights {
    let n = values.len();
    let mut m = BTreeMap::new();
    m.insert("p".to_string(), Tensor::new(&[n], values).unwrap());
    NetworkWeights::from_map(m)
}

fn grad_of(values: Vec<f32>) -> BTreeMap<String, Vec<f32>> {
    BTreeMap::from([("p".to_string(), values)])
}

#[test]
fn zero_gradient_step_only_decays() {
    let mut w = one_param(vec![1.0, -2.0, 0.5]);
    let mut opt = AdamW::new(AdamWConfig::default());
    let lr = 0.01;
    opt.step(&mut w, &grad_of(vec![0.0; 3]), lr).unwrap();
    let f = (1.0 - lr * 1e-4) as f32;
    assert_eq!(w.get("p").unwrap().data(), &[f, -2.0 * f, 0.5 * f]);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut w = one_param(vec![1.0, -2.0, 0.5]);
    let before = w.clone();
    let mut opt = AdamW::new(AdamWConfig::default());
    opt.step(&mut w, &grad_of(vec![0.3, -1.0, 7.0]), 0.0).unwrap();
    assert_eq!(w, before);
}

#[test]
fn constant_gradient_moves_by_learning_rate() {
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(cfg);
    let mut w = one_param(vec![0.0, 0.0]);
    let lr = 1e-3;
    let mut last = vec![0.0f32; 2];
    for _ in 0..200 {
        opt.step(&mut w, &grad_of(vec![0.7, -3.0]), lr).unwrap();
        let now = w.get("p").unwrap().data().to_vec();
        let delta: Vec<f64> = now.iter().zip(&last).map(|(a, b)| f64::from(a - b)).collect();
        assert!(delta[0] < 0.0 && delta[1] > 0.0);
        assert!((delta[0].abs() - lr).abs() < 1e-5 && (delta[1].abs() - lr).abs() < 1e-5);
        last = now;
    }
}

#[test]
fn non_finite_gradient_is_rejected_without_side_effects() {
    let mut w = one_param(vec![1.0, 2.0]);
    let mut opt = AdamW::new(AdamWConfig::default());
    opt.step(&mut w, &grad_of(vec![0.1, 0.1]), 1e-3).unwrap();
    let (w_before, opt_before) = (w.clone(), opt.clone());
    let err = opt.step(&mut w, &grad_of(vec![0.1, f32::NAN]), 1e-3).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteGradient { index: 1, .. }), "{err}");
    assert_eq!(w, w_before);
    assert_eq!(opt, opt_before);
}

#[test]
fn schedule_halves_every_period() {
    assert_eq!(lr_at(0, 5e-5, 5), 5e-5);
    assert_eq!(lr_at(4, 5e-5, 5), 5e-5);
    assert_eq!(lr_at(5, 5e-5, 5), 2.5e-5);
    assert_eq!(lr_at(39, 5e-5, 5), 5e-5 / 128.0);
    assert_eq!(TrainConfig::default().base_lr, 5e-5);
    let o = AdamWConfig::default();
    assert_eq!((o.beta1, o.beta2, o.weight_decay), (0.9, 0.999, 1e-4));
}

fn tiny() -> (Network, Vec<FramePair>) {
    let net = Network::new(NetworkConfig {
        channel_scale: 0.05,
        corr_d: 2,
        ..NetworkConfig::for_input(64)
    })
    .unwrap();
    let pairs = synth_generate(&SyntheticSpec::desk(64, 4), 2)
        .unwrap()
        .into_iter()
        .map(|f| f.pair)
        .collect();
    (net, pairs)
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 3,
        base_lr: 1e-3,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let (net, pairs) = tiny();
    let w = NetworkWeights::init(&net, 0);
    let err = train(&net, w, &[], &pairs, &tiny_config(), |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)), "{err}");
}

#[test]
fn unlabeled_pairs_are_rejected() {
    let (net, mut pairs) = tiny();
    pairs[1].gt = None;
    let w = NetworkWeights::init(&net, 0);
    let err = train(&net, w, &pairs, &pairs, &tiny_config(), |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::MissingLabels(_)), "{err}");
}

#[test]
fn training_is_reproducible_and_logs_every_epoch() {
    let (net, pairs) = tiny();
    let dir = std::env::temp_dir().join(format!("crackprop-train-{}", std::process::id()));
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.clone()),
        augmentation: AugmentationConfig::default(),
        ..tiny_config()
    };
    let mut seen = 0;
    let a = train(&net, NetworkWeights::init(&net, 2), &pairs, &pairs, &cfg, |_| seen += 1).unwrap();
    let b = train(&net, NetworkWeights::init(&net, 2), &pairs, &pairs, &tiny_config(), |_| {}).unwrap();
    assert_eq!(seen, 3);
    assert_eq!(a.log.epochs.len(), 3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.best, b.best);
    assert!(a.log.epochs[0].is_best);
    assert!(a.log.epochs.iter().all(|e| e.train_loss.is_finite() && e.train_loss >= 0.0));
    assert!(dir.join("best.cpnw").exists() && dir.join("last.cpnw").exists());
    let mut text = Vec::new();
    a.log.write_text(&mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert_eq!(text.lines().next(), Some("epoch, lr, train_loss, val_f1, is_best"));
    assert_eq!(text.lines().count(), 4);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validation_f1_agrees_with_eval_counts() {
    let (net, pairs) = tiny();
    let w = NetworkWeights::init(&net, 8);
    let c = validation_confusion(&net, &w, &pairs, 0.5).unwrap();
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for p in &pairs {
        let (_, _, prob) = net
            .infer(&w, &batch_tensor(&[&p.reference]), &batch_tensor(&[&p.deformed]))
            .unwrap();
        let map = &ProbabilityMap::from_network(&prob)[0];
        let e = confusion_at_threshold(map, p.gt.as_ref().unwrap(), 0.5).unwrap();
        tp += e.tp;
        fp += e.fp;
        fneg += e.fn_;
    }
    assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fneg));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
        TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        TrainConfig {
            val_threshold: 1.0,
            ..Default::default()
        },
    ] {
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    }
}

proptest! {
    #[test]
    fn loss_is_non_negative(
        logits in proptest::collection::vec(-30.0f64..30.0, 1..64),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let gt: Vec<u8> = logits.iter().map(|_| r.random_bool(0.2) as u8).collect();
        let (l, g) = class_balanced_bce(&logits, &gt, &LossConfig::default()).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
        prop_assert!(g.iter().all(|x| x.is_finite()));
    }
}
