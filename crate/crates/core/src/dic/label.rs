use std::path::Path;

use super::{DicError, DisplacementField};
use crate::image::{GrayImage, ImageError};

/// Binary crack-edge map (1 = crack edge), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CrackEdgeMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    pub mm_per_px: f64,
}

impl CrackEdgeMap {
    pub fn empty(width: usize, height: usize, mm_per_px: f64) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
            mm_per_px,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.data[y * self.width + x] = self.data[y * self.width + self.width - 1 - x];
            }
        }
        out
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| if self.get(x, y) { 255 } else { 0 })
    }

    /// Any non-zero gray level counts as an edge.
    pub fn from_image(img: &GrayImage, mm_per_px: f64) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&p| (p != 0) as u8).collect(),
            mm_per_px,
        }
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        self.to_image().write_pgm(path)
    }
}

/// Horizontal first differences `u[j+1] − u[j]`, one per gap between
/// neighbouring correlation points. Gaps touching an invalid node are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientGrid {
    pub rows: usize,
    /// Number of gaps per row (one less than the node columns).
    pub cols: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl GradientGrid {
    pub fn at(&self, row: usize, gap: usize) -> Option<f64> {
        let i = row * self.cols + gap;
        self.valid[i].then_some(self.values[i])
    }
}

pub fn displacement_gradient(field: &DisplacementField) -> GradientGrid {
    let rows = field.rows();
    let cols = field.cols().saturating_sub(1);
    let mut values = vec![0.0; rows * cols];
    let mut valid = vec![false; rows * cols];
    for r in 0..rows {
        for g in 0..cols {
            if let (Some((a, _)), Some((b, _))) = (field.at(r, g), field.at(r, g + 1)) {
                values[r * cols + g] = b - a;
                valid[r * cols + g] = true;
            }
        }
    }
    GradientGrid {
        rows,
        cols,
        values,
        valid,
    }
}

/// Marks both correlation points of every gap whose opening exceeds
/// `threshold`, at their positions in the deformed image.
pub fn label_crack_edges(
    field: &DisplacementField,
    gradient: &GradientGrid,
    threshold: f64,
    width: usize,
    height: usize,
    mm_per_px: f64,
) -> CrackEdgeMap {
    let mut map = CrackEdgeMap::empty(width, height, mm_per_px);
    for r in 0..gradient.rows {
        for g in 0..gradient.cols {
            if !gradient.at(r, g).is_some_and(|ux| ux > threshold) {
                continue;
            }
            for c in [g, g + 1] {
                let (u, v) = field.at(r, c).expect("valid gap has valid nodes");
                let x = (field.xs[c] as f64 + u).round();
                let y = (field.ys[r] as f64 + v).round();
                if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
                    map.set(x as usize, y as usize, true);
                }
            }
        }
    }
    map
}

/// Two-round temporal label check over a time-ordered sequence.
///
/// An unset pixel whose previous `n` and following `n` frames are all set is
/// filled. Then, walking backwards in time, a set pixel whose following `n`
/// frames are all unset is cleared. Frames without a full window are left
/// alone. Filling first and clearing against already-corrected later frames
/// makes the result a fixed point of the correction.
pub fn temporal_consistency_correct(sequence: &[CrackEdgeMap], n: usize) -> Vec<CrackEdgeMap> {
    let mut out = sequence.to_vec();
    let len = sequence.len();
    if len == 0 || n == 0 {
        return out;
    }
    let pixels = sequence[0].data.len();
    for t in n..len.saturating_sub(n) {
        for p in 0..pixels {
            if sequence[t].data[p] == 0
                && (t - n..t).all(|s| sequence[s].data[p] != 0)
                && (t + 1..=t + n).all(|s| sequence[s].data[p] != 0)
            {
                out[t].data[p] = 1;
            }
        }
    }
    for t in (0..len.saturating_sub(n)).rev() {
        for p in 0..pixels {
            if out[t].data[p] != 0 && (t + 1..=t + n).all(|s| out[s].data[p] == 0) {
                out[t].data[p] = 0;
            }
        }
    }
    out
}

/// Max-pools a label map down to `target×target` blocks.
pub fn downsample_label_map(map: &CrackEdgeMap, target: usize) -> Result<CrackEdgeMap, DicError> {
    let bad = || DicError::Downsample {
        width: map.width,
        height: map.height,
        target,
    };
    if target == 0 || map.width % target != 0 || map.height % target != 0 {
        return Err(bad());
    }
    let (fx, fy) = (map.width / target, map.height / target);
    let mut out = CrackEdgeMap::empty(target, target, map.mm_per_px * fx as f64);
    for y in 0..map.height {
        for x in 0..map.width {
            if map.get(x, y) {
                out.set(x / fx, y / fy, true);
            }
        }
    }
    Ok(out)
}
