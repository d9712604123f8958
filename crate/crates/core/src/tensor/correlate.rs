//! Correlation layer: patch-wise dot products between two feature maps over a
//! bounded displacement neighborhood. No trainable weights.
//!
//! For patch radius `k` and maximum displacement `d`, output channel
//! `(dy + d)·(2d+1) + (dx + d)` at location `x` holds
//! `Σ_{o ∈ [−k,k]²} ⟨f1(x + o), f2(x + (dx,dy) + o)⟩`, with zero padding outside
//! the maps. Per output element the sum runs patch-offset-major and
//! channel-inner.

use super::{shape_err, Real, Tensor, TensorError};

fn check<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>) -> Result<(usize, usize, usize, usize), TensorError> {
    let dims = f1.dims4("correlate")?;
    if f1.shape() != f2.shape() {
        return Err(shape_err(
            "correlate",
            format!("feature maps differ: {:?} vs {:?}", f1.shape(), f2.shape()),
        ));
    }
    Ok(dims)
}

/// Visits every in-bounds (output, f1, f2) index triple for one displacement
/// and patch offset, row by row.
#[inline]
fn for_each_pair(
    h: usize,
    w: usize,
    (dy, dx): (isize, isize),
    (oy, ox): (isize, isize),
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    // need y+oy and y+dy+oy inside [0, h), same for x.
    let lo = |a: isize, b: isize| (-a.min(b)).max(0) as usize;
    let hi = |a: isize, b: isize, n: usize| (n as isize - a.max(b)).clamp(0, n as isize) as usize;
    let (y0, y1) = (lo(oy, dy + oy), hi(oy, dy + oy, h));
    let (x0, x1) = (lo(ox, dx + ox), hi(ox, dx + ox, w));
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let out_row = y * w;
        let a_row = (y as isize + oy) as usize * w;
        let b_row = (y as isize + dy + oy) as usize * w;
        f(
            out_row + x0,
            (a_row as isize + x0 as isize + ox) as usize,
            (b_row as isize + x0 as isize + dx + ox) as usize,
            x1 - x0,
        );
    }
}

pub fn correlate<T: Real>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    k: usize,
    d: usize,
) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = check(f1, f2)?;
    let (k, d) = (k as isize, d as isize);
    let span = (2 * d + 1) as usize;
    let hw = h * w;
    let mut out = vec![T::zero(); n * span * span * hw];
    for b in 0..n {
        let a = &f1.data()[b * c * hw..(b + 1) * c * hw];
        let z = &f2.data()[b * c * hw..(b + 1) * c * hw];
        for dy in -d..=d {
            for dx in -d..=d {
                let ch = ((dy + d) as usize) * span + (dx + d) as usize;
                let dst = &mut out[(b * span * span + ch) * hw..(b * span * span + ch + 1) * hw];
                for oy in -k..=k {
                    for ox in -k..=k {
                        for_each_pair(h, w, (dy, dx), (oy, ox), |o, ia, ib, len| {
                            for x in 0..len {
                                let mut acc = T::zero();
                                for cc in 0..c {
                                    acc += a[cc * hw + ia + x] * z[cc * hw + ib + x];
                                }
                                dst[o + x] += acc;
                            }
                        });
                    }
                }
            }
        }
    }
    Tensor::new(&[n, span * span, h, w], out)
}

/// Returns gradients with respect to `f1` and `f2`.
pub fn correlate_backward<T: Real>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    k: usize,
    d: usize,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = f1.shape()[..] else {
        unreachable!("validated in forward")
    };
    let (k, d) = (k as isize, d as isize);
    let span = (2 * d + 1) as usize;
    let hw = h * w;
    let mut g1 = vec![T::zero(); f1.len()];
    let mut g2 = vec![T::zero(); f2.len()];
    for b in 0..n {
        let a = &f1.data()[b * c * hw..(b + 1) * c * hw];
        let z = &f2.data()[b * c * hw..(b + 1) * c * hw];
        let ga = &mut g1[b * c * hw..(b + 1) * c * hw];
        let gz = &mut g2[b * c * hw..(b + 1) * c * hw];
        for dy in -d..=d {
            for dx in -d..=d {
                let ch = ((dy + d) as usize) * span + (dx + d) as usize;
                let go = &grad_out[(b * span * span + ch) * hw..(b * span * span + ch + 1) * hw];
                for oy in -k..=k {
                    for ox in -k..=k {
                        for_each_pair(h, w, (dy, dx), (oy, ox), |o, ia, ib, len| {
                            for cc in 0..c {
                                let (pa, pb) = (cc * hw + ia, cc * hw + ib);
                                for x in 0..len {
                                    let g = go[o + x];
                                    ga[pa + x] += g * z[pb + x];
                                    gz[pb + x] += g * a[pa + x];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
    (g1, g2)
}
