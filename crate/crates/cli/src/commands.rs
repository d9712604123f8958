use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crackprop::data::{inject_noise, split, synth_generate, write_flow, DatasetManifest, FramePair, ManifestEntry};
use crackprop::dic::{label_pair, temporal_consistency_correct, CrackEdgeMap};
use crackprop::eval::{confusion_at_threshold, evaluate, f1_score, EvalReport, ProbabilityMap};
use crackprop::image::batch_tensor;
use crackprop::network::{load_weights, Network, NetworkWeights, OUTPUT_STRIDE};
use crackprop::speed::{compute_speed, CrackFrontTrace};
use crackprop::train::{load_all, train, TrainError};

use crate::{stage_seed, CliError, RunConfig};

/// Output directory plus verbosity, shared by every command.
pub struct Ctx {
    pub out: PathBuf,
    pub verbosity: u8,
}

impl Ctx {
    pub fn new(out: &Path, verbosity: u8) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            verbosity,
        })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbosity > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        Ok(BufWriter::new(fs::File::create(self.path(name))?))
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    Ok(DatasetManifest::load(path)?)
}

/// Writes `run_config.txt` with the effective settings.
pub fn record_config(ctx: &Ctx, cfg: &RunConfig) -> Result<(), CliError> {
    fs::write(ctx.path("run_config.txt"), cfg.to_text())?;
    Ok(())
}

/// Renders `synth.sequences` sequences into `out` and writes `manifest.txt`.
pub fn cmd_synth(ctx: &Ctx, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let mut entries = Vec::new();
    let mut report = ctx.create("synth.txt")?;
    writeln!(report, "sequence, frame, timestamp_s, gt_pixels")?;
    for s in 0..cfg.synth.sequences {
        let id = format!("s{s:02}");
        let spec = cfg.synthetic_spec(stage_seed(cfg.seed, &format!("synth/{id}")));
        let frames = synth_generate(&spec, cfg.synth.frames)?;
        let ref_name = format!("{id}_ref.pgm");
        if let Some(f) = frames.first() {
            f.pair.reference.write_pgm(&ctx.path(&ref_name))?;
        }
        for (k, f) in frames.iter().enumerate() {
            let def_name = format!("{id}_f{k:03}_def.pgm");
            let gt_name = format!("{id}_f{k:03}_gt.pgm");
            f.pair.deformed.write_pgm(&ctx.path(&def_name))?;
            let gt = f.pair.gt.as_ref().expect("synthetic pairs carry ground truth");
            gt.write_pgm(&ctx.path(&gt_name))?;
            write_flow(
                &ctx.path(&def_name).with_extension("flow"),
                spec.size,
                spec.size,
                &f.flow,
            )?;
            writeln!(report, "{id}, {k}, {:.6}, {}", f.pair.timestamp, gt.count())?;
            entries.push(ManifestEntry {
                sequence_id: id.clone(),
                frame_index: k,
                reference: ref_name.clone().into(),
                deformed: def_name.into(),
                gt: Some(gt_name.into()),
                timestamp: f.pair.timestamp,
                mm_per_px: f.pair.mm_per_px,
            });
        }
        ctx.log(format!("synth: {id} with {} frames", frames.len()));
    }
    report.flush()?;
    let manifest = DatasetManifest::new(&ctx.out, entries);
    let path = ctx.path("manifest.txt");
    manifest.save(&path)?;
    Ok(path)
}

/// Entry indices grouped by sequence, each group in frame order.
fn sequences(manifest: &DatasetManifest) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        groups.entry(e.sequence_id.clone()).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by_key(|&i| manifest.entries[i].frame_index);
    }
    groups
}

fn edge_side(width: usize) -> Result<usize, CliError> {
    if width % OUTPUT_STRIDE != 0 {
        return Err(CliError::Data(format!(
            "image width {width} is not a multiple of {OUTPUT_STRIDE}"
        )));
    }
    Ok(width / OUTPUT_STRIDE)
}

/// DIC labels for every pair, temporally corrected per sequence. Writes
/// `labels/*.pgm`, `label.txt` and a relabeled `manifest.txt`.
pub fn cmd_label(ctx: &Ctx, cfg: &RunConfig, manifest_path: &Path) -> Result<PathBuf, CliError> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", manifest_path.display())));
    }
    let subset = cfg.subset();
    let mut raw = Vec::with_capacity(manifest.len());
    let mut pairs = Vec::with_capacity(manifest.len());
    for i in 0..manifest.len() {
        let pair = manifest.load_pair(i)?;
        let side = edge_side(pair.reference.width())?;
        let map = label_pair(
            &pair.reference,
            &pair.deformed,
            &subset,
            cfg.label.threshold,
            side,
            pair.mm_per_px,
        )?;
        ctx.log(format!("label: pair {i}: {} edge cells", map.count()));
        raw.push(map);
        pairs.push(pair);
    }
    let mut corrected: Vec<Option<CrackEdgeMap>> = vec![None; raw.len()];
    for idx in sequences(&manifest).values() {
        let seq: Vec<CrackEdgeMap> = idx.iter().map(|&i| raw[i].clone()).collect();
        for (&i, m) in idx.iter().zip(temporal_consistency_correct(&seq, cfg.label.temporal_n)) {
            corrected[i] = Some(m);
        }
    }
    fs::create_dir_all(ctx.path("labels"))?;
    let mut report = ctx.create("label.txt")?;
    writeln!(report, "sequence, frame, dic_cells, corrected_cells, f1_vs_gt")?;
    let mut entries = Vec::with_capacity(manifest.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let map = corrected[i].take().expect("every entry belongs to a sequence");
        let name = format!("labels/{}_f{:03}.pgm", e.sequence_id, e.frame_index);
        map.write_pgm(&ctx.path(&name))?;
        let agreement = match &pairs[i].gt {
            Some(gt) => {
                let p = ProbabilityMap {
                    width: map.width,
                    height: map.height,
                    data: map.data.iter().map(|&v| f32::from(v)).collect(),
                };
                format!("{:.6}", f1_score(&confusion_at_threshold(&p, gt, 0.5)?))
            }
            None => "-".into(),
        };
        writeln!(
            report,
            "{}, {}, {}, {}, {agreement}",
            e.sequence_id,
            e.frame_index,
            raw[i].count(),
            map.count()
        )?;
        entries.push(ManifestEntry {
            reference: absolute(&manifest.resolve(&e.reference))?,
            deformed: absolute(&manifest.resolve(&e.deformed))?,
            gt: Some(name.into()),
            ..e.clone()
        });
    }
    report.flush()?;
    let path = ctx.path("manifest.txt");
    DatasetManifest::new(&ctx.out, entries).save(&path)?;
    Ok(path)
}

fn square_side(pairs: &[FramePair]) -> Result<usize, CliError> {
    let first = pairs
        .first()
        .ok_or_else(|| CliError::Data("manifest has no pairs".into()))?;
    let side = first.reference.width();
    if let Some(p) = pairs
        .iter()
        .find(|p| p.reference.width() != side || p.reference.height() != side)
    {
        return Err(CliError::Data(format!(
            "pairs must all be {side}×{side}; found {}×{}",
            p.reference.width(),
            p.reference.height()
        )));
    }
    Ok(side)
}

fn build_network(cfg: &RunConfig, side: usize) -> Result<Network, CliError> {
    Ok(Network::new(cfg.network_config(side))?)
}

/// Trains on the manifest, writing `best.cpnw`, `last.cpnw` and
/// `training_log.txt`. Returns the path of the best weights.
pub fn cmd_train(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest_path: &Path,
    init: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let (train_m, val_m) = if cfg.train.val_fraction > 0.0 {
        let v = cfg.train.val_fraction;
        let mut parts = split(&manifest, &[1.0 - v, v], stage_seed(cfg.seed, "split"))?;
        let val = parts.pop().expect("two parts");
        (parts.pop().expect("two parts"), val)
    } else {
        (manifest.clone(), manifest)
    };
    let train_pairs = load_all(&train_m)?;
    let val_pairs = load_all(&val_m)?;
    let side = square_side(&train_pairs)?;
    let net = build_network(cfg, side)?;
    let initial = match init {
        Some(p) => load_weights(&net, p)?,
        None => NetworkWeights::init(&net, stage_seed(cfg.seed, "init")),
    };
    let mut tc = cfg.train_config(stage_seed(cfg.seed, "train"));
    tc.checkpoint_dir = Some(ctx.out.clone());
    let outcome = train(&net, initial, &train_pairs, &val_pairs, &tc, |r| {
        ctx.log(format!("train: {}", r.to_line()))
    })
    .map_err(|e| match e {
        TrainError::Data(d) => CliError::from(d),
        other => other.into(),
    })?;
    outcome.log.write_text(ctx.create("training_log.txt")?)?;
    Ok(ctx.path("best.cpnw"))
}

/// Edge probabilities for one pair.
pub fn predict(net: &Network, weights: &NetworkWeights, pair: &FramePair) -> Result<ProbabilityMap, CliError> {
    let r = batch_tensor(&[&pair.reference]);
    let d = batch_tensor(&[&pair.deformed]);
    let (_, _, edge) = net.infer(weights, &r, &d)?;
    let map = ProbabilityMap::from_network(&edge).remove(0);
    if map.data.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("network produced non-finite probabilities".into()));
    }
    Ok(map)
}

fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<FramePair>, CliError> {
    (0..manifest.len())
        .map(|i| manifest.load_pair(i).map_err(CliError::from))
        .collect()
}

fn model(cfg: &RunConfig, pairs: &[FramePair], weights: &Path) -> Result<(Network, NetworkWeights), CliError> {
    let net = build_network(cfg, square_side(pairs)?)?;
    let w = load_weights(&net, weights)?;
    Ok((net, w))
}

/// Writes one `pred/NNNN.prob` per pair and the list `predictions.txt`.
pub fn cmd_infer(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest_path: &Path,
    weights: &Path,
) -> Result<PathBuf, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let pairs = load_pairs(&manifest)?;
    let (net, w) = model(cfg, &pairs, weights)?;
    fs::create_dir_all(ctx.path("pred"))?;
    let mut list = ctx.create("predictions.txt")?;
    for (i, pair) in pairs.iter().enumerate() {
        let map = predict(&net, &w, pair)?;
        let name = format!("pred/{i:04}.prob");
        map.write(&ctx.path(&name))?;
        writeln!(list, "{name}")?;
        ctx.log(format!("infer: pair {i}"));
    }
    list.flush()?;
    Ok(ctx.path("predictions.txt"))
}

/// Reads a prediction list; relative entries resolve against its directory.
pub fn read_predictions(list: &Path) -> Result<Vec<ProbabilityMap>, CliError> {
    let text = fs::read_to_string(list).map_err(|e| CliError::Data(format!("{}: {e}", list.display())))?;
    let base = list.parent().unwrap_or(Path::new("."));
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = Path::new(l);
            let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            ProbabilityMap::read(&p).map_err(CliError::from)
        })
        .collect()
}

fn ground_truth(manifest: &DatasetManifest, pairs: &[FramePair]) -> Result<Vec<CrackEdgeMap>, CliError> {
    pairs
        .iter()
        .zip(&manifest.entries)
        .map(|(p, e)| {
            p.gt.clone().ok_or_else(|| {
                CliError::Data(format!("{} has no ground-truth edge map", e.deformed.display()))
            })
        })
        .collect()
}

fn write_report(ctx: &Ctx, report: &EvalReport) -> Result<(), CliError> {
    let mut t = ctx.create("eval.txt")?;
    report.write_text(&mut t)?;
    t.flush()?;
    let mut c = ctx.create("pr_curve.csv")?;
    report.write_curve_csv(&mut c)?;
    c.flush()?;
    Ok(())
}

/// Scores predictions against the manifest's ground truth, writing
/// `eval.txt` and `pr_curve.csv`.
pub fn cmd_eval(ctx: &Ctx, manifest_path: &Path, predictions: &Path) -> Result<EvalReport, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let preds = read_predictions(predictions)?;
    let pairs = load_pairs(&manifest)?;
    let gts = ground_truth(&manifest, &pairs)?;
    let report = evaluate(&preds, &gts)?;
    write_report(ctx, &report)?;
    ctx.log(format!("eval: ODS {:.4} OIS {:.4}", report.ods, report.ois));
    Ok(report)
}

/// One row per noise level: Gaussian noise on both images, then inference
/// and evaluation. Writes `noise.txt`.
pub fn cmd_noise(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest_path: &Path,
    weights: &Path,
) -> Result<Vec<(f64, f64, f64)>, CliError> {
    if cfg.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(CliError::Usage(format!("bad noise levels {:?}", cfg.noise_sigmas)));
    }
    let manifest = load_manifest(manifest_path)?;
    let pairs = load_pairs(&manifest)?;
    let gts = ground_truth(&manifest, &pairs)?;
    let (net, w) = model(cfg, &pairs, weights)?;
    let mut rows = Vec::new();
    let mut out = ctx.create("noise.txt")?;
    writeln!(out, "sigma, ods_f1, ois_f1")?;
    for &sigma in &cfg.noise_sigmas {
        let mut preds = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let noisy = FramePair {
                reference: inject_noise(&p.reference, sigma, stage_seed(cfg.seed, &format!("noise/{sigma}/{i}/ref"))),
                deformed: inject_noise(&p.deformed, sigma, stage_seed(cfg.seed, &format!("noise/{sigma}/{i}/def"))),
                ..p.clone()
            };
            preds.push(predict(&net, &w, &noisy)?);
        }
        let report = evaluate(&preds, &gts)?;
        writeln!(out, "{sigma}, {:.6}, {:.6}", report.ods, report.ois)?;
        ctx.log(format!("noise: sigma {sigma}: ODS {:.4}", report.ods));
        rows.push((sigma, report.ods, report.ois));
    }
    out.flush()?;
    Ok(rows)
}

/// Crack front speed per sequence from ground truth, or from predictions
/// thresholded at `speed.threshold`. Writes `speed.txt`.
pub fn cmd_speed(
    ctx: &Ctx,
    cfg: &RunConfig,
    manifest_path: &Path,
    predictions: Option<&Path>,
) -> Result<Vec<(String, f64)>, CliError> {
    let manifest = load_manifest(manifest_path)?;
    let pairs = load_pairs(&manifest)?;
    let maps: Vec<CrackEdgeMap> = match predictions {
        Some(list) => {
            let preds = read_predictions(list)?;
            if preds.len() != pairs.len() {
                return Err(CliError::Data(format!(
                    "{} predictions for {} pairs",
                    preds.len(),
                    pairs.len()
                )));
            }
            preds
                .iter()
                .zip(&pairs)
                .map(|(p, pair)| {
                    let mm = pair.mm_per_px * pair.reference.width() as f64 / p.width as f64;
                    p.binarize(cfg.speed.threshold, mm)
                })
                .collect()
        }
        None => ground_truth(&manifest, &pairs)?,
    };
    let mut out = ctx.create("speed.txt")?;
    let mut means = Vec::new();
    for (id, idx) in sequences(&manifest) {
        let seq: Vec<CrackEdgeMap> = idx.iter().map(|&i| maps[i].clone()).collect();
        let ts: Vec<f64> = idx.iter().map(|&i| manifest.entries[i].timestamp).collect();
        let trace = CrackFrontTrace::from_maps(&seq, &ts, &cfg.front_config())?;
        let report = compute_speed(&trace)?;
        writeln!(out, "sequence {id}")?;
        report.write_text(&mut out)?;
        ctx.log(format!("speed: {id}: {:.4} mm/s", report.mean_mm_s));
        means.push((id, report.mean_mm_s));
    }
    out.flush()?;
    Ok(means)
}
