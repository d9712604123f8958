use super::{shape_err, Real, Tensor, TensorError};

/// Source index pair and blend weight for one output coordinate under the
/// half-pixel (align-corners = false) convention.
fn taps(out: usize, size: usize, factor: usize) -> (usize, usize, f64) {
    let src = ((out as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, src - i0 as f64)
}

fn tap_table<T: Real>(out: usize, size: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    (0..out)
        .map(|o| {
            let (i0, i1, l) = taps(o, size, factor);
            (i0, i1, T::from_f64_lossy(1.0 - l), T::from_f64_lossy(l))
        })
        .collect()
}

/// Bilinear upsampling of the spatial dims by an integer factor.
pub fn upsample_bilinear<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = input.dims4("upsample_bilinear")?;
    if factor == 0 {
        return Err(shape_err("upsample_bilinear", "factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(Tensor::new(input.shape(), input.data().to_vec())?);
    }
    let (oh, ow) = (h * factor, w * factor);
    let ys = tap_table::<T>(oh, h, factor);
    let xs = tap_table::<T>(ow, w, factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane_in, plane_out) in input.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            let r0 = &plane_in[y0 * w..(y0 + 1) * w];
            let r1 = &plane_in[y1 * w..(y1 + 1) * w];
            let dst = &mut plane_out[oy * ow..(oy + 1) * ow];
            for (d, &(x0, x1, wx0, wx1)) in dst.iter_mut().zip(&xs) {
                *d = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn upsample_bilinear_backward<T: Real>(
    input_shape: &[usize],
    factor: usize,
    grad_out: &[T],
) -> Vec<T> {
    let [_, _, h, w] = input_shape[..] else {
        unreachable!("validated in forward")
    };
    if factor == 1 {
        return grad_out.to_vec();
    }
    let (oh, ow) = (h * factor, w * factor);
    let ys = tap_table::<T>(oh, h, factor);
    let xs = tap_table::<T>(ow, w, factor);
    let total: usize = input_shape.iter().product();
    let mut gi = vec![T::zero(); total];
    for (g_in, g_out) in gi.chunks_mut(h * w).zip(grad_out.chunks(oh * ow)) {
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            let src = &g_out[oy * ow..(oy + 1) * ow];
            for (&g, &(x0, x1, wx0, wx1)) in src.iter().zip(&xs) {
                g_in[y0 * w + x0] += g * wy0 * wx0;
                g_in[y0 * w + x1] += g * wy0 * wx1;
                g_in[y1 * w + x0] += g * wy1 * wx0;
                g_in[y1 * w + x1] += g * wy1 * wx1;
            }
        }
    }
    gi
}

/// Stacks rank-4 tensors along the channel axis in argument order.
pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat", "no inputs"))?;
    let (n, _, h, w) = first.dims4("concat")?;
    let mut channels = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err(
                "concat",
                format!("part {:?} does not match batch/spatial dims of {:?}", p.shape(), first.shape()),
            ));
        }
        channels += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * channels * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    Tensor::new(&[n, channels, h, w], out)
}

/// Splits a concatenated gradient back into per-part gradients.
pub fn concat_backward<T: Real>(part_shapes: &[&[usize]], grad_out: &[T]) -> Vec<Vec<T>> {
    let [n, _, h, w] = part_shapes[0][..] else {
        unreachable!("validated in forward")
    };
    let hw = h * w;
    let total_c: usize = part_shapes.iter().map(|s| s[1]).sum();
    let mut grads: Vec<Vec<T>> = part_shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for b in 0..n {
        let mut offset = b * total_c * hw;
        for (g, s) in grads.iter_mut().zip(part_shapes) {
            let len = s[1] * hw;
            g.extend_from_slice(&grad_out[offset..offset + len]);
            offset += len;
        }
    }
    grads
}
