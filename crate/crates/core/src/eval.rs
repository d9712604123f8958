//! Zero-tolerance edge evaluation: confusion counts, ODS/OIS F-1 and PR curves.

use std::io::Write;
use std::path::Path;

use crate::dic::CrackEdgeMap;
use crate::network::EdgeProbabilityMap;

/// Thresholds `t = 0.01, 0.02, …, 0.99`.
pub const THRESHOLD_STEPS: usize = 99;

pub fn threshold(k: usize) -> f64 {
    k as f64 / 100.0
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction is {0}×{1} but ground truth is {2}×{3}")]
    Dims(usize, usize, usize, usize),
    #[error("{predictions} predictions for {gts} ground-truth maps")]
    Count { predictions: usize, gts: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("{path}: malformed probability map: {detail}")]
    Format { path: String, detail: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Edge probabilities of a single frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    /// Splits a batched network output into per-frame maps.
    pub fn from_network(map: &EdgeProbabilityMap) -> Vec<Self> {
        let s = map.0.shape();
        (0..s[0])
            .map(|i| Self {
                width: s[3],
                height: s[2],
                data: map.item(i).to_vec(),
            })
            .collect()
    }

    /// Pixels with probability at least `t` become edges.
    pub fn binarize(&self, t: f64, mm_per_px: f64) -> CrackEdgeMap {
        CrackEdgeMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| (f64::from(p) >= t) as u8).collect(),
            mm_per_px,
        }
    }

    /// Raw little-endian f32 after a width/height header.
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let mut buf = Vec::with_capacity(8 + 4 * self.data.len());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let bytes = std::fs::read(path)?;
        let err = |detail: &str| EvalError::Format {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < 8 {
            return Err(err("missing header"));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * width * height {
            return Err(err("payload length does not match header"));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// Harmonic mean of precision and recall, 0 when both vanish.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn check_dims(pred: &ProbabilityMap, gt: &CrackEdgeMap) -> Result<(), EvalError> {
    if (pred.width, pred.height) != (gt.width, gt.height) || pred.data.len() != gt.data.len() {
        return Err(EvalError::Dims(pred.width, pred.height, gt.width, gt.height));
    }
    Ok(())
}

/// Pixel-exact matching at threshold `t`.
pub fn confusion_at_threshold(
    pred: &ProbabilityMap,
    gt: &CrackEdgeMap,
    t: f64,
) -> Result<Confusion, EvalError> {
    check_dims(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (f64::from(p) >= t, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Confusion counts of one frame at every grid threshold, via a histogram of
/// how many thresholds each pixel clears.
fn frame_curve(pred: &ProbabilityMap, gt: &CrackEdgeMap) -> Result<Vec<Confusion>, EvalError> {
    check_dims(pred, gt)?;
    // passes[k] = pixels whose highest cleared threshold index is k (0 = none)
    let mut pos = vec![0u64; THRESHOLD_STEPS + 1];
    let mut neg = vec![0u64; THRESHOLD_STEPS + 1];
    let mut total_pos = 0u64;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let p = f64::from(p);
        let mut k = ((p * 100.0).floor().clamp(0.0, THRESHOLD_STEPS as f64)) as usize;
        while k > 0 && p < threshold(k) {
            k -= 1;
        }
        while k < THRESHOLD_STEPS && p >= threshold(k + 1) {
            k += 1;
        }
        if g != 0 {
            pos[k] += 1;
            total_pos += 1;
        } else {
            neg[k] += 1;
        }
    }
    let mut out = vec![Confusion::default(); THRESHOLD_STEPS];
    let (mut tp, mut fp) = (0u64, 0u64);
    for k in (1..=THRESHOLD_STEPS).rev() {
        tp += pos[k];
        fp += neg[k];
        out[k - 1] = Confusion {
            tp,
            fp,
            fn_: total_pos - tp,
        };
    }
    Ok(out)
}

fn check_lists(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<(), EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::Count {
            predictions: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Confusion,
}

/// Dataset-pooled precision/recall at every grid threshold.
pub fn pr_curve(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<Vec<PrPoint>, EvalError> {
    check_lists(preds, gts)?;
    let mut pooled = vec![Confusion::default(); THRESHOLD_STEPS];
    for (p, g) in preds.iter().zip(gts) {
        for (acc, c) in pooled.iter_mut().zip(frame_curve(p, g)?) {
            acc.add(&c);
        }
    }
    Ok(pooled
        .into_iter()
        .enumerate()
        .map(|(i, c)| PrPoint {
            threshold: threshold(i + 1),
            precision: c.precision(),
            recall: c.recall(),
            counts: c,
        })
        .collect())
}

/// Best pooled F-1 over the threshold grid and the (lowest) threshold
/// attaining it.
pub fn ods_f1(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<(f64, f64), EvalError> {
    let curve = pr_curve(preds, gts)?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for p in &curve {
        let f = f1_score(&p.counts);
        if f > best.0 {
            best = (f, p.threshold);
        }
    }
    Ok(best)
}

/// F-1 with the no-crack convention: nothing to find and nothing predicted
/// scores 1.
pub fn f1_score(c: &Confusion) -> f64 {
    if c.tp + c.fp + c.fn_ == 0 {
        1.0
    } else {
        c.f1()
    }
}

/// Best F-1 of each frame over the threshold grid.
pub fn per_frame_f1(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<Vec<f64>, EvalError> {
    check_lists(preds, gts)?;
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            Ok(frame_curve(p, g)?
                .iter()
                .map(f1_score)
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

pub fn ois_f1(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<f64, EvalError> {
    let per = per_frame_f1(preds, gts)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub per_frame: Vec<f64>,
    pub curve: Vec<PrPoint>,
}

pub fn evaluate(preds: &[ProbabilityMap], gts: &[CrackEdgeMap]) -> Result<EvalReport, EvalError> {
    let (ods, ods_threshold) = ods_f1(preds, gts)?;
    let per_frame = per_frame_f1(preds, gts)?;
    let ois = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(EvalReport {
        ods,
        ods_threshold,
        ois,
        per_frame,
        curve: pr_curve(preds, gts)?,
    })
}

impl EvalReport {
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "ods_f1 {:.6}", self.ods)?;
        writeln!(out, "ods_threshold {:.2}", self.ods_threshold)?;
        writeln!(out, "ois_f1 {:.6}", self.ois)?;
        writeln!(out, "frames {}", self.per_frame.len())?;
        for (i, f) in self.per_frame.iter().enumerate() {
            writeln!(out, "frame {i} best_f1 {f:.6}")?;
        }
        Ok(())
    }

    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,precision,recall,f1")?;
        for p in &self.curve {
            writeln!(
                out,
                "{:.2},{:.6},{:.6},{:.6}",
                p.threshold,
                p.precision,
                p.recall,
                f1_score(&p.counts)
            )?;
        }
        Ok(())
    }
}
