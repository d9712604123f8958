//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. Failed
//! criteria are counted in the last line; set `CRACKPROP_ACCEPTANCE_STRICT=1`
//! to also make the process exit non-zero.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{correlation_oracle, gradcheck, ods_ois_oracle, random_tensor, rng, threshold_grid};
use crackprop::data::{
    desk_grid, inject_noise, synth_generate, DatasetManifest, FramePair, ManifestEntry, SyntheticSpec,
};
use crackprop::dic::{compute_displacement_field, label_pair, temporal_consistency_correct, CrackEdgeMap, SubsetConfig};
use crackprop::eval::{evaluate, ods_f1, ois_f1, ProbabilityMap};
use crackprop::network::{read_weights, write_weights, Network, NetworkConfig, NetworkError, NetworkWeights};
use crackprop::speed::{compute_speed, CrackFrontTrace, FrontConfig};
use crackprop::tensor::{correlate, Tensor};
use crackprop::train::{class_balanced_bce, train, LossConfig, TrainConfig};
use crackprop_cli::commands::predict;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Report {
    gate_failures: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String, t: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {detail} ({:.1} s)", t.elapsed().as_secs_f64());
        if !pass {
            self.gate_failures += 1;
        }
    }
}

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

/// Values at least `gap` away from zero, either sign.
fn off_kink(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(gap..2.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn loss_gradcheck(r: &mut ChaCha8Rng) -> f64 {
    let n = r.random_range(4..40);
    let logits: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
    let gt: Vec<u8> = (0..n).map(|_| r.random_bool(0.3) as u8).collect();
    let cfg = LossConfig {
        gamma: r.random_range(0.0..0.5),
        lambda: r.random_range(0.8..1.5),
    };
    let (_, grad) = class_balanced_bce(&logits, &gt, &cfg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut p = logits.clone();
        p[i] += h;
        let mut m = logits.clone();
        m[i] -= h;
        let numeric = (class_balanced_bce(&p, &gt, &cfg).unwrap().0 - class_balanced_bce(&m, &gt, &cfg).unwrap().0) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}

fn criterion_gradients(rep: &mut Report) {
    let t = Instant::now();
    let mut r = rng(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for i in 0..INSTANCES {
        let s = i as u64;
        let (c, o) = (r.random_range(1..=3), r.random_range(1..=3));
        let (h, w) = (r.random_range(3..=6), r.random_range(3..=6));
        let k = [1, 3][i % 2];
        let (stride, pad) = [(1, 0), (1, k / 2), (2, k / 2)][i % 3];
        let x = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[o, c, k, k], -1.0, 1.0);
        let b = random_tensor(&mut r, &[o], -1.0, 1.0);
        record("conv2d", gradcheck(&[x, wt, b], s, |t, v| t.conv2d(v[0], v[1], v[2], stride, pad).unwrap()));

        let (kd, sd, pd) = [(4, 2, 1), (2, 2, 0), (3, 1, 1)][i % 3];
        let x = random_tensor(&mut r, &[1, c, 3, 3], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[c, o, kd, kd], -1.0, 1.0);
        record("deconv2d", gradcheck(&[x, wt], s, |t, v| t.deconv2d(v[0], v[1], sd, pd).unwrap()));

        let x = off_kink(&mut r, &[1, c, h, w], 0.05);
        record("leaky_relu", gradcheck(&[x], s, |t, v| t.leaky_relu(v[0], 0.1)));

        let x = random_tensor(&mut r, &[1, c, h, w], -6.0, 6.0);
        record("sigmoid", gradcheck(&[x], s, |t, v| t.sigmoid(v[0])));

        let x = random_tensor(&mut r, &[1, c, h, w], -2.0, 2.0);
        let f = r.random_range(-3.0..3.0);
        record("scale", gradcheck(&[x], s, |t, v| t.scale(v[0], f)));

        let (kc, dc) = (i % 2, 1 + i % 2);
        let a = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let bb = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        record("correlate", gradcheck(&[a, bb], s, |t, v| t.correlate(v[0], v[1], kc, dc).unwrap()));

        let img = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        // fractional parts kept away from the bilinear kinks at integers
        let flow = Tensor::from_fn(&[1, 2, h, w], |_| r.random_range(-1i32..=1) as f64 + r.random_range(0.2..0.8));
        record("warp", gradcheck(&[img, flow], s, |t, v| t.warp(v[0], v[1]).unwrap()));

        let a = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let bb = random_tensor(&mut r, &[1, c, h, w], 1.5, 2.5);
        record("brightness_error", gradcheck(&[a, bb], s, |t, v| t.brightness_error(v[0], v[1]).unwrap()));

        let a = random_tensor(&mut r, &[1, c, 3, 3], -1.0, 1.0);
        let factor = [2, 4][i % 2];
        record("upsample_bilinear", gradcheck(&[a], s, |t, v| t.upsample_bilinear(v[0], factor).unwrap()));

        let a = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let bb = random_tensor(&mut r, &[1, o, h, w], -1.0, 1.0);
        record("concat", gradcheck(&[a, bb], s, |t, v| t.concat(&[v[1], v[0]]).unwrap()));

        record("class_balanced_bce", loss_gradcheck(&mut r));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let slowest = worst.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let pass = max < GRAD_TOL && t.elapsed().as_secs() < 60;
    rep.line(
        1,
        "gradient correctness",
        pass,
        format!(
            "{} ops x {INSTANCES} instances, max rel err {max:.2e} ({}) < {GRAD_TOL:e}",
            worst.len(),
            slowest.0
        ),
        t,
    );
}

fn criterion_correlation(rep: &mut Report) {
    let t = Instant::now();
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let mut shapes_ok = true;
    let n = 200;
    for _ in 0..n {
        let (c, h, w) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
        let (k, d) = (r.random_range(0..=1), r.random_range(0..=2));
        let f1 = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let f2 = random_tensor(&mut r, &[1, c, h, w], -1.0, 1.0);
        let out = correlate(&f1, &f2, k, d).unwrap();
        shapes_ok &= out.shape() == [1, (2 * d + 1).pow(2), h, w];
        let oracle = correlation_oracle(&f1, &f2, k as i64, d as i64);
        for (a, b) in out.data().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    rep.line(
        2,
        "correlation oracle",
        shapes_ok && worst <= 1e-10,
        format!("{n} instances, max abs diff {worst:.1e}, channel count (2d+1)^2 {}", if shapes_ok { "ok" } else { "WRONG" }),
        t,
    );
}

fn speckle_spec(size: usize, seed: u64, shift: (f64, f64)) -> SyntheticSpec {
    let mut spec = SyntheticSpec::desk(size, seed);
    spec.crack = None;
    spec.far_field = shift;
    spec
}

fn rendered(spec: &SyntheticSpec) -> FramePair {
    synth_generate(spec, 1).unwrap().remove(0).pair
}

fn criterion_dic(rep: &mut Report) {
    let t = Instant::now();
    let cfg = SubsetConfig::default();
    let r_max = cfg.search_radius as i32;
    let mut shifts: Vec<(i32, i32)> = vec![(r_max, -r_max), (-r_max, 0), (0, r_max), (1, 0), (0, -1)];
    let mut r = rng(303);
    while shifts.len() < 10 {
        shifts.push((r.random_range(-r_max..=r_max), r.random_range(-r_max..=r_max)));
    }
    let (mut nodes, mut exact) = (0usize, 0usize);
    for (i, &(dx, dy)) in shifts.iter().enumerate() {
        let pair = rendered(&speckle_spec(256, 30 + i as u64, (f64::from(dx), f64::from(dy))));
        let field = compute_displacement_field(&pair.reference, &pair.deformed, &cfg).unwrap();
        for n in 0..field.u.len() {
            nodes += 1;
            if field.valid[n] && field.u[n] == f64::from(dx) && field.v[n] == f64::from(dy) {
                exact += 1;
            }
        }
    }
    let pair = rendered(&speckle_spec(256, 77, (0.5, 0.0)));
    let field = compute_displacement_field(&pair.reference, &pair.deformed, &cfg).unwrap();
    let half_err = field
        .u
        .iter()
        .zip(&field.v)
        .zip(&field.valid)
        .filter(|(_, &ok)| ok)
        .map(|((u, v), _)| ((u - 0.5).powi(2) + v * v).sqrt())
        .fold(0.0, f64::max);
    let half_valid = field.valid.iter().filter(|&&v| v).count();
    let secs = t.elapsed().as_secs_f64();
    let pass = exact == nodes && half_valid == field.valid.len() && half_err < 0.2 && secs < 30.0;
    rep.line(
        3,
        "DIC recovery",
        pass,
        format!(
            "{} integer shifts: {exact}/{nodes} nodes exact; 0.5 px shift: worst error {half_err:.3} px < 0.2 on {half_valid}/{} nodes; 256x256",
            shifts.len(),
            field.valid.len()
        ),
        t,
    );
}

/// Vertical crack on a block boundary with random opening, far field and tip.
fn random_crack_spec(size: usize, seed: u64, threshold: f64) -> SyntheticSpec {
    let mut r = rng(seed);
    let mut spec = SyntheticSpec::desk(size, seed);
    let s = size as f64;
    let x = 8.0 * r.random_range(8..size / 8 - 8) as f64;
    let c = spec.crack.as_mut().unwrap();
    c.path = vec![(x, s), (x, 0.0)];
    c.opening = r.random_range(2.0 * threshold..4.0);
    c.tip_start = 8.0 * r.random_range(4..size / 8 - 8) as f64;
    spec.far_field = (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
    spec
}

fn criterion_labeling(rep: &mut Report) {
    let t = Instant::now();
    let threshold = 0.5;
    let cracks = 10;
    let mut perfect = 0;
    let mut worst_f1: f64 = 1.0;
    for i in 0..cracks {
        let spec = random_crack_spec(1024, 400 + i, threshold);
        let pair = rendered(&spec);
        let lab = label_pair(&pair.reference, &pair.deformed, &desk_grid(), threshold, 128, spec.mm_per_px).unwrap();
        let gt = pair.gt.unwrap();
        let prob = ProbabilityMap {
            width: lab.width,
            height: lab.height,
            data: lab.data.iter().map(|&v| f32::from(v)).collect(),
        };
        let f1 = ods_f1(&[prob], &[gt.clone()]).unwrap().0;
        worst_f1 = worst_f1.min(f1);
        if lab == gt && gt.count() > 0 {
            perfect += 1;
        }
    }
    rep.line(
        4,
        "labeling oracle",
        perfect == cracks,
        format!("{perfect}/{cracks} random cracks at 1024 -> 128x128 match exactly, min F-1 {worst_f1:.4}"),
        t,
    );
}

fn seq_with(len: usize, on: &[usize]) -> Vec<CrackEdgeMap> {
    (0..len)
        .map(|f| {
            let mut m = CrackEdgeMap::empty(2, 2, 1.0);
            m.set(1, 0, on.contains(&f));
            m
        })
        .collect()
}

fn criterion_temporal(rep: &mut Report) {
    let t = Instant::now();
    let isolated = temporal_consistency_correct(&seq_with(10, &[3]), 3);
    let rule1 = isolated.iter().all(|m| !m.get(1, 0));
    let gap = temporal_consistency_correct(&seq_with(10, &[2, 3, 4, 6, 7, 8]), 2);
    let rule2 = gap[5].get(1, 0);
    let mut r = rng(505);
    let mut idempotent = 0;
    let trials = 200;
    for _ in 0..trials {
        let len = r.random_range(1..12);
        let n = r.random_range(1..4);
        let seq: Vec<CrackEdgeMap> = (0..len)
            .map(|_| {
                let mut m = CrackEdgeMap::empty(4, 4, 1.0);
                for p in m.data.iter_mut() {
                    *p = r.random_bool(0.5) as u8;
                }
                m
            })
            .collect();
        let once = temporal_consistency_correct(&seq, n);
        if temporal_consistency_correct(&once, n) == once {
            idempotent += 1;
        }
    }
    rep.line(
        5,
        "temporal correction",
        rule1 && rule2 && idempotent == trials,
        format!("isolated positive cleared: {rule1}; gap filled: {rule2}; idempotent on {idempotent}/{trials} random sequences"),
        t,
    );
}

fn criterion_metrics(rep: &mut Report) {
    let t = Instant::now();
    let mut r = rng(606);
    let n = 150;
    let (mut matched, mut dominated) = (0, 0);
    for _ in 0..n {
        let frames = r.random_range(1..=5);
        let side = r.random_range(1..=16);
        let density = r.random_range(0.0..0.5);
        let mut p = Vec::new();
        let mut g = Vec::new();
        for _ in 0..frames {
            p.push(
                (0..side * side)
                    .map(|_| {
                        if r.random_bool(0.3) {
                            r.random_range(0..=100) as f32 / 100.0
                        } else {
                            r.random_range(0.0..1.0)
                        }
                    })
                    .collect::<Vec<f32>>(),
            );
            g.push((0..side * side).map(|_| r.random_bool(density) as u8).collect::<Vec<u8>>());
        }
        let preds: Vec<ProbabilityMap> = p
            .iter()
            .map(|d| ProbabilityMap {
                width: side,
                height: side,
                data: d.clone(),
            })
            .collect();
        let gts: Vec<CrackEdgeMap> = g
            .iter()
            .map(|d| CrackEdgeMap {
                width: side,
                height: side,
                data: d.clone(),
                mm_per_px: 1.0,
            })
            .collect();
        let (ods_o, ois_o) = ods_ois_oracle(&p, &g);
        let (ods, th) = ods_f1(&preds, &gts).unwrap();
        let ois = ois_f1(&preds, &gts).unwrap();
        if (ods - ods_o).abs() < 1e-12 && (ois - ois_o).abs() < 1e-12 && threshold_grid().contains(&th) {
            matched += 1;
        }
        if ois >= ods - 1e-12 {
            dominated += 1;
        }
    }
    let mut collapse = 0;
    let singles = 100;
    for _ in 0..singles {
        let side = r.random_range(1..=12);
        let pred = ProbabilityMap {
            width: side,
            height: side,
            data: (0..side * side).map(|_| r.random_range(0.0..1.0)).collect(),
        };
        let gt = CrackEdgeMap {
            width: side,
            height: side,
            data: (0..side * side).map(|_| r.random_bool(0.3) as u8).collect(),
            mm_per_px: 1.0,
        };
        let (p, g) = (vec![pred], vec![gt]);
        if ods_f1(&p, &g).unwrap().0 == ois_f1(&p, &g).unwrap() {
            collapse += 1;
        }
    }
    // OIS >= ODS does not hold in general for pooled ODS and per-image
    // averaged OIS (see README); the clause is checked as stated anyway.
    rep.line(
        6,
        "metric oracle",
        matched == n && collapse == singles && dominated == n,
        format!(
            "recount oracle matches {matched}/{n}; single-image OIS = ODS {collapse}/{singles}; OIS >= ODS on {dominated}/{n}"
        ),
        t,
    );
}

struct Overfit {
    net: Network,
    weights: NetworkWeights,
    pairs: Vec<FramePair>,
}

const OVERFIT_SIZE: usize = 512;

fn overfit_pairs() -> Vec<FramePair> {
    let mut spec = SyntheticSpec::desk(OVERFIT_SIZE, 7);
    spec.mm_per_px = 0.00625;
    synth_generate(&spec, 8).unwrap().into_iter().map(|f| f.pair).collect()
}

fn predictions(net: &Network, w: &NetworkWeights, pairs: &[FramePair]) -> Vec<ProbabilityMap> {
    pairs.iter().map(|p| predict(net, w, p).unwrap()).collect()
}

fn gts(pairs: &[FramePair]) -> Vec<CrackEdgeMap> {
    pairs.iter().map(|p| p.gt.clone().unwrap()).collect()
}

fn criterion_overfit(rep: &mut Report) -> Overfit {
    let t = Instant::now();
    let pairs = overfit_pairs();
    let net = Network::new(NetworkConfig {
        channel_scale: 0.25,
        corr_d: 4,
        ..NetworkConfig::for_input(OVERFIT_SIZE)
    })
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 200,
        base_lr: 5e-4,
        lr_period: 10,
        seed: 3,
        target_f1: Some(0.95),
        ..TrainConfig::default()
    };
    let outcome = train(&net, NetworkWeights::init(&net, 1), &pairs, &pairs, &cfg, |r| {
        eprintln!("    overfit epoch {}: loss {:.4}, F-1@0.5 {:.4}", r.epoch, r.train_loss, r.val_f1)
    })
    .unwrap();
    let losses: Vec<f64> = outcome.log.epochs.iter().map(|e| e.train_loss).collect();
    let head = &losses[..losses.len().min(11)];
    let rises = head.windows(2).filter(|w| w[1] > w[0]).count();
    let trending = head.len() < 2 || head[head.len() - 1] < head[0];
    let report = evaluate(&predictions(&net, &outcome.best, &pairs), &gts(&pairs)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = report.ods >= 0.9 && losses.len() <= 200 && secs < 7200.0 && rises <= 2 && trending;
    rep.line(
        7,
        "desk-scale overfit",
        pass,
        format!(
            "training-set ODS F-1 {:.4} >= 0.9 after {} epochs; {rises} loss rises in the first 10 epochs (<= 2)",
            report.ods,
            losses.len()
        ),
        t,
    );
    Overfit {
        net,
        weights: outcome.best,
        pairs,
    }
}

fn criterion_noise(rep: &mut Report, model: &Overfit) {
    let t = Instant::now();
    let truth = gts(&model.pairs);
    let mut rows = Vec::new();
    for sigma in [0.0, 5.0, 15.0, 25.0] {
        let noisy: Vec<FramePair> = model
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| FramePair {
                reference: inject_noise(&p.reference, sigma, 1000 + 2 * i as u64),
                deformed: inject_noise(&p.deformed, sigma, 1001 + 2 * i as u64),
                ..p.clone()
            })
            .collect();
        let report = evaluate(&predictions(&model.net, &model.weights, &noisy), &truth).unwrap();
        rows.push((sigma, report.ods));
    }
    let monotone = rows.windows(2).all(|w| w[1].1 <= w[0].1);
    let table: Vec<String> = rows.iter().map(|(s, f)| format!("sigma {s}: {f:.4}")).collect();
    rep.line(8, "noise robustness shape", monotone, format!("ODS {}", table.join(", ")), t);
}

fn trace_speed(maps: &[CrackEdgeMap], pairs: &[FramePair]) -> f64 {
    let ts: Vec<f64> = pairs.iter().map(|p| p.timestamp).collect();
    let trace = CrackFrontTrace::from_maps(maps, &ts, &FrontConfig::default()).unwrap();
    compute_speed(&trace).unwrap().mean_mm_s
}

fn criterion_speed(rep: &mut Report, model: &Overfit) {
    let t = Instant::now();
    // 16 image px per frame = 2 edge-map px of 0.05 mm, at 10 frames/s
    let truth = 1.0;
    let exact = trace_speed(&gts(&model.pairs), &model.pairs);
    let preds = predictions(&model.net, &model.weights, &model.pairs);
    let map_mm = model.pairs[0].gt.as_ref().unwrap().mm_per_px;
    let thresholded: Vec<CrackEdgeMap> = preds.iter().map(|p| p.binarize(0.5, map_mm)).collect();
    let predicted = trace_speed(&thresholded, &model.pairs);
    let (e1, e2) = ((exact - truth).abs() / truth, (predicted - truth).abs() / truth);
    rep.line(
        9,
        "speed application",
        e1 <= 0.05 && e2 <= 0.15,
        format!(
            "true {truth} mm/s; ground truth maps {exact:.4} ({:.1}% <= 5%); predictions {predicted:.4} ({:.1}% <= 15%)",
            100.0 * e1,
            100.0 * e2
        ),
        t,
    );
}

fn criterion_serialization(rep: &mut Report, model: &Overfit) {
    let t = Instant::now();
    let mut bytes = Vec::new();
    write_weights(&model.weights, &mut bytes).unwrap();
    let back = read_weights(bytes.as_slice()).unwrap();
    let bits = |w: &NetworkWeights| -> Vec<(String, Vec<usize>, Vec<u32>)> {
        w.iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let weights_exact = bits(&back) == bits(&model.weights) && back.check_against(&model.net).is_ok();

    let entries: Vec<ManifestEntry> = (0..5)
        .map(|i| ManifestEntry {
            sequence_id: format!("seq{}", i % 2),
            frame_index: i,
            reference: PathBuf::from(format!("r/{i}.png")),
            deformed: PathBuf::from(format!("d/{i}.png")),
            gt: (i % 3 != 0).then(|| PathBuf::from(format!("g/{i}.pgm"))),
            timestamp: i as f64 / 3.0,
            mm_per_px: 0.025 + 1e-17 * i as f64,
        })
        .collect();
    let manifest = DatasetManifest::new("base", entries);
    let parsed = DatasetManifest::parse(&manifest.to_text(), "base".into(), "m.txt").unwrap();
    let manifest_exact = parsed == manifest && parsed.to_text() == manifest.to_text();

    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"NOPE");
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&9u32.to_le_bytes());
    let bad_magic = matches!(read_weights(magic.as_slice()), Err(NetworkError::Format(m)) if m.contains("magic"));
    let bad_version = matches!(
        read_weights(version.as_slice()),
        Err(NetworkError::Version { found: 9, expected: 1 })
    );
    let truncated = matches!(read_weights(&bytes[..bytes.len() / 2]), Err(NetworkError::Truncated(_)))
        && matches!(read_weights(&bytes[..10]), Err(NetworkError::Truncated(_)));
    let bad_row = DatasetManifest::parse("a, 0, r.png\n", "base".into(), "m.txt").is_err();
    rep.line(
        10,
        "serialization",
        weights_exact && manifest_exact && bad_magic && bad_version && truncated && bad_row,
        format!(
            "weights bit-exact {weights_exact} ({} bytes); manifest exact {manifest_exact}; rejects bad magic {bad_magic}, version {bad_version}, truncation {truncated}, short manifest row {bad_row}",
            bytes.len()
        ),
        t,
    );
}

const PIPELINE_CONFIG: &str = "\
synth.size = 128
synth.frames = 4
network.channel_scale = 0.05
network.corr_d = 2
train.epochs = 3
train.base_lr = 0.001
";

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_crackprop"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(root: &Path, cfg: &Path) -> Option<Vec<Vec<u8>>> {
    let p = |s: &str| root.join(s);
    let st = |p: &Path| p.to_str().unwrap().to_string();
    let c = st(cfg);
    let steps: [Vec<String>; 5] = [
        vec!["synth".into(), "--out".into(), st(&p("synth"))],
        vec!["label".into(), "--out".into(), st(&p("label")), "--manifest".into(), st(&p("synth/manifest.txt"))],
        vec!["train".into(), "--out".into(), st(&p("model")), "--manifest".into(), st(&p("label/manifest.txt"))],
        vec![
            "infer".into(), "--out".into(), st(&p("pred")),
            "--manifest".into(), st(&p("synth/manifest.txt")),
            "--weights".into(), st(&p("model/best.cpnw")),
        ],
        vec![
            "eval".into(), "--out".into(), st(&p("eval")),
            "--manifest".into(), st(&p("synth/manifest.txt")),
            "--predictions".into(), st(&p("pred/predictions.txt")),
        ],
    ];
    for step in &steps {
        let mut args: Vec<&str> = step.iter().map(String::as_str).collect();
        args.extend(["--config", &c, "--seed", "2024"]);
        if !cli(&args) {
            return None;
        }
    }
    [
        "synth/synth.txt",
        "label/label.txt",
        "model/training_log.txt",
        "model/best.cpnw",
        "eval/eval.txt",
        "eval/pr_curve.csv",
    ]
    .iter()
    .map(|f| fs::read(p(f)).ok())
    .collect()
}

fn criterion_determinism(rep: &mut Report) {
    let t = Instant::now();
    let dir = std::env::temp_dir().join(format!("crackprop-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, PIPELINE_CONFIG).unwrap();
    let a = pipeline(&dir.join("a"), &cfg);
    let b = pipeline(&dir.join("b"), &cfg);
    let (pass, detail) = match (a, b) {
        (Some(a), Some(b)) => {
            let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            (same == a.len(), format!("{same}/{} report files byte-identical across two runs", a.len()))
        }
        _ => (false, "pipeline run failed".to_string()),
    };
    let _ = fs::remove_dir_all(&dir);
    rep.line(11, "determinism", pass, detail, t);
}

fn main() {
    // cargo passes libtest flags even to harness-less targets; listing must not
    // trigger the long run
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut rep = Report { gate_failures: 0 };
    criterion_gradients(&mut rep);
    criterion_correlation(&mut rep);
    criterion_dic(&mut rep);
    criterion_labeling(&mut rep);
    criterion_temporal(&mut rep);
    criterion_metrics(&mut rep);
    let model = criterion_overfit(&mut rep);
    criterion_noise(&mut rep, &model);
    criterion_speed(&mut rep, &model);
    criterion_serialization(&mut rep, &model);
    criterion_determinism(&mut rep);
    if rep.gate_failures == 0 {
        println!("acceptance: all 11 criteria passed");
        return;
    }
    println!("acceptance: {} of 11 criteria failed", rep.gate_failures);
    if std::env::var_os("CRACKPROP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
