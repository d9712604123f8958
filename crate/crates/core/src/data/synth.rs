//! Synthetic speckle pairs with an opening crack and exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, FramePair};
use crate::dic::{downsample_label_map, CrackEdgeMap, SubsetConfig};
use crate::image::GrayImage;

/// A crack growing from a notch along a polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct CrackSpec {
    /// Vertices `(x, y)` from the notch towards the far end, `y` strictly
    /// decreasing.
    pub path: Vec<(f64, f64)>,
    /// Opening Δ in pixels, applied to `u` with opposite signs on the two faces.
    pub opening: f64,
    /// Distance over which the face displacement decays to zero (cosine taper).
    pub taper_half_width: f64,
    /// Tip row at frame 0; rows strictly below the tip are cracked.
    pub tip_start: f64,
    /// Tip movement per frame in pixels (negative grows upwards).
    pub tip_step: f64,
}

impl CrackSpec {
    /// Crack abscissa at row `y`, or `None` outside the path's extent.
    pub fn x_at(&self, y: f64) -> Option<f64> {
        let (first, last) = (self.path[0], self.path[self.path.len() - 1]);
        if y > first.1 || y < last.1 {
            return None;
        }
        for seg in self.path.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if y <= a.1 && y >= b.1 {
                let t = (a.1 - y) / (a.1 - b.1);
                return Some(a.0 + t * (b.0 - a.0));
            }
        }
        Some(last.0)
    }

    pub fn tip(&self, frame: usize) -> f64 {
        self.tip_start + frame as f64 * self.tip_step
    }

    fn taper(&self, distance: f64) -> f64 {
        if distance >= self.taper_half_width {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * distance / self.taper_half_width).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub size: usize,
    /// Approximate fraction of the surface covered by dots.
    pub speckle_density: f64,
    pub dot_radius: (f64, f64),
    pub blur_sigma: f64,
    /// Rigid displacement `(u, v)` applied everywhere.
    pub far_field: (f64, f64),
    pub crack: Option<CrackSpec>,
    /// Gray level of the opened gap.
    pub gap_level: f64,
    pub mm_per_px: f64,
    pub frame_rate: f64,
    /// Correlation-point grid on which crack edges are marked.
    pub grid: SubsetConfig,
    pub edge_map_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Desk-scale defaults: a crack rising from a bottom-centre notch.
    pub fn desk(size: usize, seed: u64) -> Self {
        let s = size as f64;
        Self {
            size,
            speckle_density: 0.5,
            dot_radius: (1.0, 2.0),
            blur_sigma: 1.0,
            far_field: (0.0, 0.0),
            crack: Some(CrackSpec {
                path: vec![(s / 2.0, s), (s / 2.0, 0.0)],
                opening: 3.0,
                taper_half_width: 96.0,
                tip_start: s * 0.75,
                tip_step: -16.0,
            }),
            gap_level: 30.0,
            mm_per_px: 0.025,
            frame_rate: 10.0,
            grid: desk_grid(),
            edge_map_size: size / 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.size == 0 || self.edge_map_size == 0 || self.size % self.edge_map_size != 0 {
            return bad(format!(
                "edge map size {} must divide image size {}",
                self.edge_map_size, self.size
            ));
        }
        if !(self.dot_radius.0 > 0.0 && self.dot_radius.0 <= self.dot_radius.1) {
            return bad(format!("bad dot radius range {:?}", self.dot_radius));
        }
        if !(self.speckle_density > 0.0 && self.speckle_density < 1.0) {
            return bad(format!("speckle density {} outside (0, 1)", self.speckle_density));
        }
        if self.frame_rate <= 0.0 {
            return bad("frame rate must be positive".into());
        }
        self.grid
            .validate()
            .map_err(|e| DataError::Spec(e.to_string()))?;
        if let Some(c) = &self.crack {
            let s = self.size as f64;
            if c.path.len() < 2 {
                return bad("crack path needs at least two vertices".into());
            }
            if c.path.iter().any(|&(x, y)| !(0.0..=s).contains(&x) || !(0.0..=s).contains(&y)) {
                return bad("crack path leaves the image".into());
            }
            if c.path.windows(2).any(|p| p[1].1 >= p[0].1) {
                return bad("crack path rows must strictly decrease from the notch".into());
            }
            if c.opening < 0.0 || c.taper_half_width <= 0.0 {
                return bad("opening must be non-negative and taper width positive".into());
            }
        }
        Ok(())
    }

    /// Analytic displacement `(u, v)` of reference point `(x, y)` at `frame`.
    pub fn displacement(&self, x: f64, y: f64, frame: usize) -> (f64, f64) {
        let (mut u, v) = self.far_field;
        if let Some(c) = &self.crack {
            if let Some(xc) = self.crack_x(c, y, frame) {
                let side = if x < xc { -1.0 } else { 1.0 };
                u += side * 0.5 * c.opening * c.taper((x - xc).abs());
            }
        }
        (u, v)
    }

    fn crack_x(&self, c: &CrackSpec, y: f64, frame: usize) -> Option<f64> {
        if y > c.tip(frame) {
            c.x_at(y)
        } else {
            None
        }
    }
}

/// 9-pixel subsets on an 8-pixel grid: one correlation point per edge-map
/// cell at stride 8.
pub fn desk_grid() -> SubsetConfig {
    SubsetConfig {
        subset_size: 9,
        spacing: 8,
        search_radius: 6,
        subpixel: true,
    }
}

/// A generated pair together with its exact dense flow (`u` plane, then `v`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub pair: FramePair,
    pub flow: Vec<f32>,
    /// Full-resolution edge marks before downsampling.
    pub edges: CrackEdgeMap,
}

/// Continuous speckle intensity: white background with dark discs whose
/// edges are softened over `blur` pixels.
struct Speckle {
    dots: Vec<(f64, f64, f64)>,
    cells: Vec<Vec<usize>>,
    cell: f64,
    grid: usize,
    blur: f64,
    reach: f64,
}

impl Speckle {
    fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let n = spec.size as f64;
        let mean_r = 0.5 * (spec.dot_radius.0 + spec.dot_radius.1);
        // Poisson coverage 1 − exp(−λπr²) matches the requested density
        let count = (-(1.0 - spec.speckle_density).ln() * n * n
            / (std::f64::consts::PI * mean_r * mean_r))
            .round() as usize;
        let blur = spec.blur_sigma.max(1e-3);
        let reach = spec.dot_radius.1 + 6.0 * blur;
        let cell = reach.max(4.0);
        let grid = (n / cell).ceil() as usize + 1;
        let mut cells = vec![Vec::new(); grid * grid];
        let mut dots = Vec::with_capacity(count);
        for k in 0..count {
            let cx = rng.random_range(-reach..n + reach);
            let cy = rng.random_range(-reach..n + reach);
            let r = if spec.dot_radius.0 < spec.dot_radius.1 {
                rng.random_range(spec.dot_radius.0..spec.dot_radius.1)
            } else {
                spec.dot_radius.0
            };
            dots.push((cx, cy, r));
            let gx = ((cx / cell).floor().max(0.0) as usize).min(grid - 1);
            let gy = ((cy / cell).floor().max(0.0) as usize).min(grid - 1);
            cells[gy * grid + gx].push(k);
        }
        Self {
            dots,
            cells,
            cell,
            grid,
            blur,
            reach,
        }
    }

    /// Gray level at continuous position `(x, y)` (pixel centres at integers).
    fn level(&self, x: f64, y: f64) -> f64 {
        let g = self.grid as isize;
        let (gx, gy) = ((x / self.cell).floor() as isize, (y / self.cell).floor() as isize);
        let mut white = 1.0;
        for cy in (gy - 1).max(0)..=(gy + 1).min(g - 1) {
            for cx in (gx - 1).max(0)..=(gx + 1).min(g - 1) {
                for &k in &self.cells[(cy * g + cx) as usize] {
                    let (dx, dy, r) = self.dots[k];
                    let d = ((x - dx).powi(2) + (y - dy).powi(2)).sqrt();
                    if d < self.reach {
                        // logistic approximation of a Gaussian-blurred disc edge
                        let cover = 1.0 / (1.0 + ((d - r) / (0.551 * self.blur)).exp());
                        white *= 1.0 - cover;
                    }
                }
            }
        }
        255.0 * white
    }
}

/// Reference abscissa of deformed point `xd` on one crack face, found by
/// fixed-point iteration of `x = xd − u(x)`.
fn invert_face(spec: &SyntheticSpec, c: &CrackSpec, xd: f64, xc: f64, side: f64) -> f64 {
    let mut x = xd - spec.far_field.0 - side * 0.5 * c.opening;
    for _ in 0..50 {
        let next = xd - spec.far_field.0 - side * 0.5 * c.opening * c.taper((x - xc).abs());
        if (next - x).abs() < 1e-12 {
            return next;
        }
        x = next;
    }
    x
}

fn render_deformed(spec: &SyntheticSpec, speckle: &Speckle, frame: usize) -> Vec<f64> {
    let n = spec.size;
    let mut out = vec![0.0; n * n];
    for yd in 0..n {
        let y = yd as f64 - spec.far_field.1;
        let crack = spec.crack.as_ref().and_then(|c| spec.crack_x(c, y, frame).map(|xc| (c, xc)));
        for xd in 0..n {
            let xd_f = xd as f64;
            out[yd * n + xd] = match crack {
                None => speckle.level(xd_f - spec.far_field.0, y),
                Some((c, xc)) => {
                    let left = invert_face(spec, c, xd_f, xc, -1.0);
                    let right = invert_face(spec, c, xd_f, xc, 1.0);
                    if left < xc {
                        speckle.level(left, y)
                    } else if right >= xc {
                        speckle.level(right, y)
                    } else {
                        spec.gap_level
                    }
                }
            };
        }
    }
    out
}

/// Marks the two correlation points flanking the crack on every cracked grid
/// row, at their analytically displaced positions.
fn exact_edges(spec: &SyntheticSpec, frame: usize) -> CrackEdgeMap {
    let n = spec.size;
    let mut map = CrackEdgeMap::empty(n, n, spec.mm_per_px);
    let Some(c) = spec.crack.as_ref().filter(|c| c.opening > 0.0) else {
        return map;
    };
    let xs = spec.grid.grid_positions(n);
    for &yr in &spec.grid.grid_positions(n) {
        let Some(xc) = spec.crack_x(c, yr as f64, frame) else {
            continue;
        };
        let right = xs.iter().position(|&x| x as f64 >= xc);
        let Some(ri) = right.filter(|&i| i > 0) else {
            continue;
        };
        for x in [xs[ri - 1], xs[ri]] {
            let (u, v) = spec.displacement(x as f64, yr as f64, frame);
            let (px, py) = ((x as f64 + u).round(), (yr as f64 + v).round());
            if px >= 0.0 && py >= 0.0 && (px as usize) < n && (py as usize) < n {
                map.set(px as usize, py as usize, true);
            }
        }
    }
    map
}

/// Renders one speckle reference and `frames` deformed states of it.
pub fn synth_generate(spec: &SyntheticSpec, frames: usize) -> Result<Vec<SynthFrame>, DataError> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speckle = Speckle::new(spec, &mut rng);
    let reference_levels: Vec<f64> = (0..n * n)
        .map(|i| speckle.level((i % n) as f64, (i / n) as f64))
        .collect();
    let reference = GrayImage::from_levels(n, n, &reference_levels);
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let deformed = GrayImage::from_levels(n, n, &render_deformed(spec, &speckle, k));
        let mut flow = vec![0.0f32; 2 * n * n];
        for y in 0..n {
            for x in 0..n {
                let (u, v) = spec.displacement(x as f64, y as f64, k);
                flow[y * n + x] = u as f32;
                flow[n * n + y * n + x] = v as f32;
            }
        }
        let edges = exact_edges(spec, k);
        let gt = downsample_label_map(&edges, spec.edge_map_size)?;
        out.push(SynthFrame {
            pair: FramePair {
                reference: reference.clone(),
                deformed,
                gt: Some(gt),
                timestamp: k as f64 / spec.frame_rate,
                mm_per_px: spec.mm_per_px,
            },
            flow,
            edges,
        });
    }
    Ok(out)
}
