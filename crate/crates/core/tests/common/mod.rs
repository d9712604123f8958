//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls into the code paths it is used to check: gradients are
//! central finite differences, the correlation oracle is a direct summation,
//! and the metric oracle recounts confusion matrices from scratch.

#![allow(dead_code)]

use crackprop::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Maximum relative error between tape gradients and central differences of
/// the scalar `Σ r ⊙ f(leaves)` for a fixed random projection `r`.
pub fn gradcheck(
    leaves: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |ls: &[Tensor<f64>]| -> Tensor<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ls.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).clone()
    };
    let y0 = eval(leaves);
    let mut r = rng(seed);
    let proj: Vec<f64> = (0..y0.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let scalar = |y: &Tensor<f64>| -> f64 { y.data().iter().zip(&proj).map(|(a, b)| a * b).sum() };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out, &proj).expect("backward");

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = tape.grad(vars[li]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; leaf.len()]);
        for i in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[i] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[i] -= h;
            let numeric = (scalar(&eval(&plus)) - scalar(&eval(&minus))) / (2.0 * h);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Direct summation of the correlation definition on `1×c×h×w` maps, with
/// out-of-range positions contributing zero.
pub fn correlation_oracle(f1: &Tensor<f64>, f2: &Tensor<f64>, k: i64, d: i64) -> Vec<f64> {
    let s = f1.shape();
    let (c, h, w) = (s[1] as i64, s[2] as i64, s[3] as i64);
    let at = |t: &Tensor<f64>, ch: i64, y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h || x >= w {
            0.0
        } else {
            t.data()[((ch * h + y) * w + x) as usize]
        }
    };
    let span = 2 * d + 1;
    let mut out = vec![0.0; (span * span * h * w) as usize];
    for dy in -d..=d {
        for dx in -d..=d {
            let channel = (dy + d) * span + (dx + d);
            for y in 0..h {
                for x in 0..w {
                    let mut sum = 0.0;
                    for oy in -k..=k {
                        for ox in -k..=k {
                            for ch in 0..c {
                                sum += at(f1, ch, y + oy, x + ox) * at(f2, ch, y + dy + oy, x + dx + ox);
                            }
                        }
                    }
                    out[((channel * h + y) * w + x) as usize] = sum;
                }
            }
        }
    }
    out
}

/// Confusion counts recomputed pixel by pixel: `(tp, fp, fn)`.
pub fn recount(pred: &[f32], gt: &[u8], t: f64) -> (u64, u64, u64) {
    let mut c = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gt) {
        let positive = f64::from(p) >= t;
        match (positive, g != 0) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => {}
        }
    }
    c
}

/// F-1 from counts; empty ground truth with no detections scores 1.
pub fn f1_from(tp: u64, fp: u64, fneg: u64) -> f64 {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// ODS and OIS by exhaustive recount over the threshold grid.
pub fn ods_ois_oracle(preds: &[Vec<f32>], gts: &[Vec<u8>]) -> (f64, f64) {
    let mut ods: f64 = 0.0;
    for t in threshold_grid() {
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for (p, g) in preds.iter().zip(gts) {
            let c = recount(p, g, t);
            tp += c.0;
            fp += c.1;
            fneg += c.2;
        }
        let pooled_precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let pooled_recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f = if pooled_precision + pooled_recall == 0.0 {
            0.0
        } else {
            2.0 * pooled_precision * pooled_recall / (pooled_precision + pooled_recall)
        };
        ods = ods.max(f);
    }
    let mut ois = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let best = threshold_grid()
            .into_iter()
            .map(|t| {
                let (tp, fp, fneg) = recount(p, g, t);
                f1_from(tp, fp, fneg)
            })
            .fold(0.0, f64::max);
        ois += best;
    }
    (ods, ois / preds.len() as f64)
}
