//! Backward warping: `out(x, y) = image(x + u, y + v)` with bilinear sampling.
//! Samples falling outside the image read as zero.

use super::{shape_err, Real, Tensor, TensorError};

struct Sample<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

#[inline]
fn sample_point<T: Real>(x: usize, y: usize, u: T, v: T) -> Sample<T> {
    let sx = T::from_usize(x).unwrap() + u;
    let sy = T::from_usize(y).unwrap() + v;
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Sample {
        x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
        fx: sx - fx0,
        fy: sy - fy0,
    }
}

#[inline]
fn pixel<T: Real>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

fn check<T: Real>(image: &Tensor<T>, flow: &Tensor<T>) -> Result<(usize, usize, usize, usize), TensorError> {
    let (n, c, h, w) = image.dims4("warp")?;
    if flow.shape() != [n, 2, h, w] {
        return Err(shape_err(
            "warp",
            format!("flow must be {:?}, got {:?}", [n, 2, h, w], flow.shape()),
        ));
    }
    Ok((n, c, h, w))
}

pub fn warp<T: Real>(image: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = check(image, flow)?;
    let hw = h * w;
    let mut out = vec![T::zero(); image.len()];
    let one = T::one();
    for b in 0..n {
        let fu = &flow.data()[(2 * b) * hw..(2 * b + 1) * hw];
        let fv = &flow.data()[(2 * b + 1) * hw..(2 * b + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let s = sample_point(x, y, fu[i], fv[i]);
                let (w00, w10) = ((one - s.fx) * (one - s.fy), s.fx * (one - s.fy));
                let (w01, w11) = ((one - s.fx) * s.fy, s.fx * s.fy);
                for ch in 0..c {
                    let plane = &image.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    out[(b * c + ch) * hw + i] = w00 * pixel(plane, h, w, s.x0, s.y0)
                        + w10 * pixel(plane, h, w, s.x0 + 1, s.y0)
                        + w01 * pixel(plane, h, w, s.x0, s.y0 + 1)
                        + w11 * pixel(plane, h, w, s.x0 + 1, s.y0 + 1);
                }
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Returns `(d image, d flow)`.
///
/// The flow gradient is the derivative of the bilinear interpolant, which is
/// discontinuous at integer sample coordinates.
pub fn warp_backward<T: Real>(
    image: &Tensor<T>,
    flow: &Tensor<T>,
    grad_out: &[T],
    need_image: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let [n, c, h, w] = image.shape()[..] else {
        unreachable!("validated in forward")
    };
    let hw = h * w;
    let one = T::one();
    let mut gi = need_image.then(|| vec![T::zero(); image.len()]);
    let mut gf = vec![T::zero(); flow.len()];
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize;
    for b in 0..n {
        let fu = &flow.data()[(2 * b) * hw..(2 * b + 1) * hw];
        let fv = &flow.data()[(2 * b + 1) * hw..(2 * b + 2) * hw];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let s = sample_point(x, y, fu[i], fv[i]);
                let corners = [
                    (s.x0, s.y0, (one - s.fx) * (one - s.fy)),
                    (s.x0 + 1, s.y0, s.fx * (one - s.fy)),
                    (s.x0, s.y0 + 1, (one - s.fx) * s.fy),
                    (s.x0 + 1, s.y0 + 1, s.fx * s.fy),
                ];
                let mut du = T::zero();
                let mut dv = T::zero();
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let plane = &image.data()[off..off + hw];
                    let g = grad_out[off + i];
                    let p00 = pixel(plane, h, w, s.x0, s.y0);
                    let p10 = pixel(plane, h, w, s.x0 + 1, s.y0);
                    let p01 = pixel(plane, h, w, s.x0, s.y0 + 1);
                    let p11 = pixel(plane, h, w, s.x0 + 1, s.y0 + 1);
                    du += g * ((one - s.fy) * (p10 - p00) + s.fy * (p11 - p01));
                    dv += g * ((one - s.fx) * (p01 - p00) + s.fx * (p11 - p10));
                    if let Some(gi) = gi.as_mut() {
                        for &(cx, cy, wt) in &corners {
                            if inside(cx, cy) {
                                gi[off + cy as usize * w + cx as usize] += g * wt;
                            }
                        }
                    }
                }
                gf[(2 * b) * hw + i] = du;
                gf[(2 * b + 1) * hw + i] = dv;
            }
        }
    }
    (gi, gf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_identity() {
        let img = Tensor::<f64>::from_fn(&[1, 3, 4, 5], |i| (i as f64).sin());
        let flow = Tensor::zeros(&[1, 2, 4, 5]);
        assert_eq!(warp(&img, &flow).unwrap(), img);
    }

    #[test]
    fn unit_horizontal_flow_on_ramp() {
        let (h, w) = (3, 5);
        let img = Tensor::<f64>::from_fn(&[1, 1, h, w], |i| (i % w) as f64 * 10.0);
        let mut flow = Tensor::zeros(&[1, 2, h, w]);
        flow.data_mut()[..h * w].fill(1.0);
        let out = warp(&img, &flow).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expected = if x + 1 < w { img.data()[y * w + x + 1] } else { 0.0 };
                assert_eq!(out.data()[y * w + x], expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn integer_flow_is_exact_on_interior() {
        let (h, w) = (6, 7);
        let img = Tensor::<f64>::from_fn(&[1, 2, h, w], |i| ((i * 37) % 11) as f64);
        let mut flow = Tensor::zeros(&[1, 2, h, w]);
        flow.data_mut()[..h * w].fill(-2.0);
        flow.data_mut()[h * w..].fill(1.0);
        let out = warp(&img, &flow).unwrap();
        for ch in 0..2 {
            for y in 0..h - 1 {
                for x in 2..w {
                    let src = img.data()[ch * h * w + (y + 1) * w + x - 2];
                    assert_eq!(out.data()[ch * h * w + y * w + x], src);
                }
            }
        }
    }

    #[test]
    fn flow_shape_is_checked() {
        let img = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let flow = Tensor::zeros(&[1, 2, 4, 5]);
        assert!(warp(&img, &flow).is_err());
    }
}
