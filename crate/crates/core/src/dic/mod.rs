//! Subset-based digital image correlation and crack-edge labeling.

mod label;
mod matching;

pub use label::{
    displacement_gradient, downsample_label_map, label_crack_edges, temporal_consistency_correct,
    CrackEdgeMap, GradientGrid,
};
pub use matching::{compute_displacement_field, match_subset, shape_function_map, SubsetMatch};

use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum DicError {
    #[error("invalid subset config: {0}")]
    Config(String),
    #[error("reference and deformed images differ in size: {0}×{1} vs {2}×{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("subset at ({x}, {y}) with search radius does not fit the {width}×{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("area of interest {width}×{height} holds no correlation point")]
    EmptyGrid { width: usize, height: usize },
    #[error("cannot downsample {width}×{height} to {target}×{target}")]
    Downsample {
        width: usize,
        height: usize,
        target: usize,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetConfig {
    /// Odd subset side length in pixels.
    pub subset_size: usize,
    /// Pixels between neighbouring correlation points.
    pub spacing: usize,
    pub search_radius: usize,
    pub subpixel: bool,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        Self {
            subset_size: 23,
            spacing: 11,
            search_radius: 10,
            subpixel: true,
        }
    }
}

impl SubsetConfig {
    pub fn validate(&self) -> Result<(), DicError> {
        if self.subset_size < 3 || self.subset_size % 2 == 0 {
            return Err(DicError::Config(format!(
                "subset size {} must be odd and at least 3",
                self.subset_size
            )));
        }
        if self.spacing == 0 {
            return Err(DicError::Config("spacing must be at least 1".into()));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.subset_size / 2
    }

    /// Correlation-point coordinates along an axis of `len` pixels: block
    /// centres `spacing/2 + j·spacing` whose subset and search window fit.
    pub fn grid_positions(&self, len: usize) -> Vec<usize> {
        let margin = self.half() + self.search_radius;
        (0..)
            .map(|j| self.spacing / 2 + j * self.spacing)
            .take_while(|&p| p + margin < len)
            .filter(|&p| p >= margin)
            .collect()
    }
}

/// Displacements at a rectangular grid of correlation points, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
    pub spacing: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub quality: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisplacementField {
    pub fn rows(&self) -> usize {
        self.ys.len()
    }

    pub fn cols(&self) -> usize {
        self.xs.len()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.xs.len() + col
    }

    /// Returns `(u, v)` of a valid node.
    pub fn at(&self, row: usize, col: usize) -> Option<(f64, f64)> {
        let i = self.index(row, col);
        self.valid[i].then(|| (self.u[i], self.v[i]))
    }

    /// Comma-separated rows `x0,y0,u,v,quality,valid`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<(), DicError> {
        writeln!(out, "x0,y0,u,v,quality,valid")?;
        for (r, &y) in self.ys.iter().enumerate() {
            for (c, &x) in self.xs.iter().enumerate() {
                let i = self.index(r, c);
                writeln!(
                    out,
                    "{x},{y},{},{},{},{}",
                    self.u[i], self.v[i], self.quality[i], self.valid[i] as u8
                )?;
            }
        }
        Ok(())
    }
}

/// Full labeling of one pair: displacement field, opening gradient,
/// thresholding in deformed coordinates and max-pool to `map_size`.
pub fn label_pair(
    reference: &crate::image::GrayImage,
    deformed: &crate::image::GrayImage,
    cfg: &SubsetConfig,
    threshold: f64,
    map_size: usize,
    mm_per_px: f64,
) -> Result<CrackEdgeMap, DicError> {
    let field = compute_displacement_field(reference, deformed, cfg)?;
    let grad = displacement_gradient(&field);
    let full = label_crack_edges(
        &field,
        &grad,
        threshold,
        reference.width(),
        reference.height(),
        mm_per_px,
    );
    downsample_label_map(&full, map_size)
}
