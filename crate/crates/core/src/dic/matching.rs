use super::{DicError, DisplacementField, SubsetConfig};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetMatch {
    pub u: f64,
    pub v: f64,
    /// Peak ZNCC in [-1, 1].
    pub quality: f64,
}

/// First-order subset shape function: maps `point` of the subset centred at
/// `center` into the deformed image.
#[allow(clippy::too_many_arguments)]
pub fn shape_function_map(
    point: (f64, f64),
    center: (f64, f64),
    u: f64,
    v: f64,
    ux: f64,
    uy: f64,
    vx: f64,
    vy: f64,
) -> (f64, f64) {
    let dx = point.0 - center.0;
    let dy = point.1 - center.1;
    (point.0 + u + ux * dx + uy * dy, point.1 + v + vx * dx + vy * dy)
}

/// Zero-mean, unit-norm subset, or `None` when the subset is flat.
fn normalized_subset(levels: &[f64], width: usize, cx: usize, cy: usize, half: usize) -> Option<Vec<f64>> {
    let side = 2 * half + 1;
    let mut s = Vec::with_capacity(side * side);
    for y in cy - half..=cy + half {
        s.extend_from_slice(&levels[y * width + cx - half..=y * width + cx + half]);
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    s.iter_mut().for_each(|g| *g -= mean);
    let norm = s.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    s.iter_mut().for_each(|g| *g /= norm);
    Some(s)
}

fn zncc(target: &[f64], levels: &[f64], width: usize, cx: usize, cy: usize, half: usize) -> f64 {
    let side = 2 * half + 1;
    let n = (side * side) as f64;
    let (mut sum, mut sum_sq, mut dot) = (0.0, 0.0, 0.0);
    for (r, y) in (cy - half..=cy + half).enumerate() {
        let row = &levels[y * width + cx - half..=y * width + cx + half];
        let t = &target[r * side..(r + 1) * side];
        for (&g, &f) in row.iter().zip(t) {
            sum += g;
            sum_sq += g * g;
            dot += f * g;
        }
    }
    // target is zero-mean, so the deformed mean drops out of the dot product
    let var = sum_sq - sum * sum / n;
    if var <= 1e-9 {
        0.0
    } else {
        dot / var.sqrt()
    }
}

/// Offset of the extremum of a quadratic surface fitted to a 3×3
/// neighbourhood `c[dy][dx]`, or `None` when it is not a maximum.
fn quadratic_peak(c: [[f64; 3]; 3]) -> Option<(f64, f64)> {
    let mut col = [0.0; 3];
    let mut row = [0.0; 3];
    let mut bxy = 0.0;
    for (j, r) in c.iter().enumerate() {
        for (i, &value) in r.iter().enumerate() {
            col[i] += value / 3.0;
            row[j] += value / 3.0;
            bxy += (i as f64 - 1.0) * (j as f64 - 1.0) * value / 4.0;
        }
    }
    let bx = (col[2] - col[0]) / 2.0;
    let by = (row[2] - row[0]) / 2.0;
    let axx = col[2] + col[0] - 2.0 * col[1];
    let ayy = row[2] + row[0] - 2.0 * row[1];
    // Hessian [[axx, bxy], [bxy, ayy]] must be negative definite
    let det = axx * ayy - bxy * bxy;
    if axx >= 0.0 || det <= 0.0 {
        return None;
    }
    let dx = (-bx * ayy + by * bxy) / det;
    let dy = (-by * axx + bx * bxy) / det;
    (dx.abs() <= 1.0 && dy.abs() <= 1.0).then_some((dx, dy))
}

#[inline]
fn bilinear(levels: &[f64], width: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let i = y0 as usize * width + x0 as usize;
    let top = levels[i] * (1.0 - fx) + levels[i + 1] * fx;
    let bottom = levels[i + width] * (1.0 - fx) + levels[i + width + 1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Tukey biweight tuning constant, in robust standard deviations.
const TUKEY_C: f64 = 4.685;

/// Gauss-Newton refinement of a translation `(u, v)` minimising
/// `Σ w·(f − (a·g(x + p) + b))²` over `p` and the intensity gain/offset
/// `a, b`, with bilinear interpolation of the deformed image and weights `w`
/// re-estimated every iteration.
fn refine_gauss_newton(
    reference: &[f64],
    deformed: &[f64],
    width: usize,
    height: usize,
    center: (usize, usize),
    half: usize,
    start: (f64, f64),
) -> Option<(f64, f64)> {
    let (mut pu, mut pv) = start;
    let (mut a, mut b) = (1.0, 0.0);
    let h = half as isize;
    let mut samples: Vec<(f64, [f64; 4])> = Vec::with_capacity((2 * half + 1).pow(2));
    let mut abs_res: Vec<f64> = Vec::with_capacity(samples.capacity());
    for _ in 0..30 {
        let x_lo = center.0 as f64 - half as f64 + pu;
        let y_lo = center.1 as f64 - half as f64 + pv;
        if x_lo < 1.0
            || y_lo < 1.0
            || x_lo + 2.0 * half as f64 + 2.0 >= width as f64
            || y_lo + 2.0 * half as f64 + 2.0 >= height as f64
        {
            return None;
        }
        samples.clear();
        for dy in -h..=h {
            for dx in -h..=h {
                let (rx, ry) = ((center.0 as isize + dx) as usize, (center.1 as isize + dy) as usize);
                let f = reference[ry * width + rx];
                let (sx, sy) = (rx as f64 + pu, ry as f64 + pv);
                let g = bilinear(deformed, width, sx, sy);
                let gx = 0.5 * (bilinear(deformed, width, sx + 1.0, sy) - bilinear(deformed, width, sx - 1.0, sy));
                let gy = 0.5 * (bilinear(deformed, width, sx, sy + 1.0) - bilinear(deformed, width, sx, sy - 1.0));
                samples.push((f - (a * g + b), [a * gx, a * gy, g, 1.0]));
            }
        }
        // Tukey biweight on a MAD scale, so pixels that no longer belong to
        // the same material (an opened gap) stop pulling the estimate
        abs_res.clear();
        abs_res.extend(samples.iter().map(|s| s.0.abs()));
        abs_res.sort_by(f64::total_cmp);
        let cutoff = TUKEY_C * 1.4826 * abs_res[abs_res.len() / 2];
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for &(r, j) in &samples {
            let w = if cutoff <= 1e-9 {
                1.0
            } else if r.abs() >= cutoff {
                0.0
            } else {
                let t = r / cutoff;
                (1.0 - t * t).powi(2)
            };
            for p in 0..4 {
                jtr[p] += w * j[p] * r;
                for q in 0..4 {
                    jtj[p][q] += w * j[p] * j[q];
                }
            }
        }
        let step = solve4(jtj, jtr)?;
        pu += step[0];
        pv += step[1];
        a += step[2];
        b += step[3];
        if (pu - start.0).abs() > 2.0 || (pv - start.1).abs() > 2.0 {
            return None;
        }
        if step[0].abs() < 1e-5 && step[1].abs() < 1e-5 {
            break;
        }
    }
    Some((pu, pv))
}

fn solve4(mut m: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..4 {
            let factor = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    Some(x)
}

fn check_sizes(reference: &GrayImage, deformed: &GrayImage) -> Result<(), DicError> {
    if (reference.width(), reference.height()) != (deformed.width(), deformed.height()) {
        return Err(DicError::SizeMismatch(
            reference.width(),
            reference.height(),
            deformed.width(),
            deformed.height(),
        ));
    }
    Ok(())
}

/// Integer search window: offsets within `radius` of `(cx, cy)`.
#[derive(Clone, Copy)]
struct Window {
    cx: isize,
    cy: isize,
    radius: isize,
}

fn match_levels(
    reference: &[f64],
    deformed: &[f64],
    width: usize,
    center: (usize, usize),
    cfg: &SubsetConfig,
    window: Window,
) -> Option<SubsetMatch> {
    let half = cfg.half();
    let target = normalized_subset(reference, width, center.0, center.1, half)?;
    let r = window.radius;
    let side = 2 * r + 1;
    let mut scores = vec![f64::NEG_INFINITY; (side * side) as usize];
    let mut best = (0usize, f64::NEG_INFINITY);
    for dy in -r..=r {
        for dx in -r..=r {
            let cx = (center.0 as isize + window.cx + dx) as usize;
            let cy = (center.1 as isize + window.cy + dy) as usize;
            let s = zncc(&target, deformed, width, cx, cy, half);
            let k = ((dy + r) * side + dx + r) as usize;
            scores[k] = s;
            // strict comparison keeps the first maximum in scan order
            if s > best.1 {
                best = (k, s);
            }
        }
    }
    let (bx, by) = ((best.0 as isize % side) - r, (best.0 as isize / side) - r);
    let mut m = SubsetMatch {
        u: (window.cx + bx) as f64,
        v: (window.cy + by) as f64,
        quality: best.1.clamp(-1.0, 1.0),
    };
    // a perfect integer match leaves nothing for refinement to improve
    let exact = best.1 >= 1.0 - 1e-12;
    if cfg.subpixel && !exact && bx.abs() < r && by.abs() < r {
        let mut c = [[0.0; 3]; 3];
        for (j, row) in c.iter_mut().enumerate() {
            for (i, value) in row.iter_mut().enumerate() {
                let k = (by + r + j as isize - 1) * side + bx + r + i as isize - 1;
                *value = scores[k as usize];
            }
        }
        if let Some((ox, oy)) = quadratic_peak(c) {
            m.u += ox;
            m.v += oy;
        }
        let height = reference.len() / width;
        if let Some((u, v)) =
            refine_gauss_newton(reference, deformed, width, height, center, half, (m.u, m.v))
        {
            m.u = u;
            m.v = v;
        }
    }
    Some(m)
}

/// Integer ZNCC search around `center`. With subpixel refinement on, a
/// quadratic surface fitted to the 3×3 correlation neighbourhood of the peak
/// seeds a Gauss-Newton polish of the translation. `Ok(None)` marks a flat
/// (textureless) subset.
pub fn match_subset(
    reference: &GrayImage,
    deformed: &GrayImage,
    center: (usize, usize),
    cfg: &SubsetConfig,
) -> Result<Option<SubsetMatch>, DicError> {
    cfg.validate()?;
    check_sizes(reference, deformed)?;
    let (w, h) = (reference.width(), reference.height());
    let margin = cfg.half() + cfg.search_radius;
    if center.0 < margin || center.1 < margin || center.0 + margin >= w || center.1 + margin >= h {
        return Err(DicError::OutOfBounds {
            x: center.0,
            y: center.1,
            width: w,
            height: h,
        });
    }
    Ok(match_levels(
        &reference.levels(),
        &deformed.levels(),
        w,
        center,
        cfg,
        full_window(cfg),
    ))
}

pub fn compute_displacement_field(
    reference: &GrayImage,
    deformed: &GrayImage,
    cfg: &SubsetConfig,
) -> Result<DisplacementField, DicError> {
    cfg.validate()?;
    check_sizes(reference, deformed)?;
    let (w, h) = (reference.width(), reference.height());
    let xs = cfg.grid_positions(w);
    let ys = cfg.grid_positions(h);
    if xs.is_empty() || ys.is_empty() {
        return Err(DicError::EmptyGrid {
            width: w,
            height: h,
        });
    }
    let (ref_levels, def_levels) = (reference.levels(), deformed.levels());
    let n = xs.len() * ys.len();
    let mut field = DisplacementField {
        xs,
        ys,
        spacing: cfg.spacing,
        u: vec![0.0; n],
        v: vec![0.0; n],
        quality: vec![0.0; n],
        valid: vec![false; n],
    };
    let set = |field: &mut DisplacementField, i: usize, m: SubsetMatch| {
        field.u[i] = m.u;
        field.v[i] = m.v;
        field.quality[i] = m.quality;
        field.valid[i] = true;
    };
    let (xs, ys) = (field.xs.clone(), field.ys.clone());
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let i = r * xs.len() + c;
            if let Some(m) = match_levels(&ref_levels, &def_levels, w, (x, y), cfg, full_window(cfg)) {
                set(&mut field, i, m);
            }
        }
    }
    // Subsets that straddle a discontinuity can lock onto a spurious peak
    // anywhere in the search range. Such nodes are re-matched close to what
    // their neighbours agree on.
    let limit = cfg.search_radius as isize - RECHECK_RADIUS;
    if limit >= 0 {
        for (i, (mu, mv)) in median_outliers(&field) {
            let (r, c) = (i / xs.len(), i % xs.len());
            let window = Window {
                cx: (mu.round() as isize).clamp(-limit, limit),
                cy: (mv.round() as isize).clamp(-limit, limit),
                radius: RECHECK_RADIUS,
            };
            if let Some(m) = match_levels(&ref_levels, &def_levels, w, (xs[c], ys[r]), cfg, window) {
                set(&mut field, i, m);
            }
        }
    }
    Ok(field)
}

fn full_window(cfg: &SubsetConfig) -> Window {
    Window {
        cx: 0,
        cy: 0,
        radius: cfg.search_radius as isize,
    }
}

/// Search radius, in pixels, around the neighbour median when re-matching.
const RECHECK_RADIUS: isize = 2;
/// Normalised median test: noise floor (px) and residual threshold.
const MEDIAN_EPS: f64 = 0.1;
const MEDIAN_THRESHOLD: f64 = 2.0;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Nodes failing the normalised median test against their valid
/// 8-neighbours in either component, with the neighbour medians `(u, v)`.
/// All nodes are judged against the first-pass field.
fn median_outliers(field: &DisplacementField) -> Vec<(usize, (f64, f64))> {
    let (rows, cols) = (field.rows(), field.cols());
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !field.valid[i] {
                continue;
            }
            let mut nu = Vec::with_capacity(8);
            let mut nv = Vec::with_capacity(8);
            for rr in r.saturating_sub(1)..(r + 2).min(rows) {
                for cc in c.saturating_sub(1)..(c + 2).min(cols) {
                    let j = rr * cols + cc;
                    if j != i && field.valid[j] {
                        nu.push(field.u[j]);
                        nv.push(field.v[j]);
                    }
                }
            }
            if nu.len() < 3 {
                continue;
            }
            let residual = |values: &mut Vec<f64>, x: f64| {
                let m = median(values);
                let mut spread: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
                ((x - m).abs() / (median(&mut spread) + MEDIAN_EPS), m)
            };
            let (ru, mu) = residual(&mut nu, field.u[i]);
            let (rv, mv) = residual(&mut nv, field.v[i]);
            if ru > MEDIAN_THRESHOLD || rv > MEDIAN_THRESHOLD {
                out.push((i, (mu, mv)));
            }
        }
    }
    out
}
