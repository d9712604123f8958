//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Reduction order per output element is fixed by the GEMM inner dimension
//! (kernel-major, channel-inner in column layout), so results do not depend on
//! scheduling.

use super::{shape_err, Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

fn conv_out(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if k == 0 || k > padded || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

fn im2col<T: Real>(g: &Geometry, input: &[T], cols: &mut [T]) {
    let n_cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry, cols: &[T], out: &mut [T]) {
    let n_cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, Geometry), TensorError> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (o, wc, kh, kw) = weights.dims4("conv2d")?;
    if wc != c {
        return Err(shape_err(
            "conv2d",
            format!("weights expect {wc} input channels but input has {c}"),
        ));
    }
    let (out_h, out_w) = match (
        conv_out(h, kh, stride, padding),
        conv_out(w, kw, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(shape_err(
                "conv2d",
                format!(
                    "kernel {kh}×{kw} (stride {stride}, padding {padding}) does not fit input {h}×{w}"
                ),
            ))
        }
    };
    Ok((
        n,
        o,
        Geometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h,
            out_w,
        },
    ))
}

/// 2-D cross-correlation of `N×C×H×W` input with `O×C×kh×kw` weights plus bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let (n, o, g) = conv_geometry(input, weights, stride, padding)?;
    if bias.len() != o {
        return Err(shape_err(
            "conv2d",
            format!("bias has {} entries for {o} output channels", bias.len()),
        ));
    }
    let in_len = g.channels * g.height * g.width;
    let out_len = o * g.col_cols();
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.col_cols()]
    };
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let y = &mut out[b * out_len..(b + 1) * out_len];
        for (plane, &bv) in y.chunks_mut(g.col_cols()).zip(bias.data()) {
            plane.fill(bv);
        }
        let src = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        T::gemm(
            o,
            g.col_rows(),
            g.col_cols(),
            weights.data(),
            false,
            src,
            false,
            y,
            true,
        );
    }
    Tensor::new(&[n, o, g.out_h, g.out_w], out)
}

/// Gradients produced by [`conv2d_backward`] / [`deconv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &[T],
    need_input: bool,
) -> Result<Conv2dGrads<T>, TensorError> {
    let (n, o, g) = conv_geometry(input, weights, stride, padding)?;
    let in_len = g.channels * g.height * g.width;
    let out_len = o * g.col_cols();
    assert_eq!(grad_out.len(), n * out_len);
    let mut gw = vec![T::zero(); weights.len()];
    let mut gb = vec![T::zero(); o];
    let mut gi = need_input.then(|| vec![T::zero(); input.len()]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let gy = &grad_out[b * out_len..(b + 1) * out_len];
        for (acc, plane) in gb.iter_mut().zip(gy.chunks(g.col_cols())) {
            *acc += plane.iter().copied().sum::<T>();
        }
        let src: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(o, g.col_cols(), g.col_rows(), gy, false, src, true, &mut gw, true);
        if let Some(gi) = gi.as_mut() {
            let gx = &mut gi[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(g.col_rows(), o, g.col_cols(), weights.data(), true, gy, false, gx, true);
            } else {
                T::gemm(
                    g.col_rows(),
                    o,
                    g.col_cols(),
                    weights.data(),
                    true,
                    gy,
                    false,
                    &mut cols,
                    false,
                );
                col2im(&g, &cols, gx);
            }
        }
    }
    Ok(Conv2dGrads {
        input: gi,
        weights: gw,
        bias: Some(gb),
    })
}

fn deconv_geometry<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, Geometry), TensorError> {
    let (n, c, h, w) = input.dims4("deconv2d")?;
    let (wc, o, kh, kw) = weights.dims4("deconv2d")?;
    if wc != c {
        return Err(shape_err(
            "deconv2d",
            format!("weights expect {wc} input channels but input has {c}"),
        ));
    }
    if stride == 0 || h == 0 || w == 0 {
        return Err(shape_err("deconv2d", "stride and input dims must be positive"));
    }
    let out_dim = |size: usize, k: usize| -> Option<usize> {
        let full = (size - 1) * stride + k;
        full.checked_sub(2 * padding).filter(|&d| d > 0)
    };
    let (out_h, out_w) = match (out_dim(h, kh), out_dim(w, kw)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(shape_err(
                "deconv2d",
                format!("non-positive output size for input {h}×{w}, kernel {kh}×{kw}, stride {stride}, padding {padding}"),
            ))
        }
    };
    // The transposed convolution is the adjoint of a convolution mapping the
    // `o×out_h×out_w` output back onto the `c×h×w` input grid.
    Ok((
        n,
        c,
        Geometry {
            channels: o,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            padding,
            out_h: h,
            out_w: w,
        },
    ))
}

/// Transposed convolution; weights are `C_in×C_out×kh×kw`.
///
/// Output size per axis is `(H−1)·stride − 2·padding + k`.
pub fn deconv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let (n, c_in, g) = deconv_geometry(input, weights, stride, padding)?;
    let in_len = c_in * g.col_cols();
    let out_len = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        T::gemm(
            g.col_rows(),
            c_in,
            g.col_cols(),
            weights.data(),
            true,
            x,
            false,
            &mut cols,
            false,
        );
        col2im(&g, &cols, &mut out[b * out_len..(b + 1) * out_len]);
    }
    Tensor::new(&[n, g.channels, g.height, g.width], out)
}

pub fn deconv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &[T],
    need_input: bool,
) -> Result<Conv2dGrads<T>, TensorError> {
    let (n, c_in, g) = deconv_geometry(input, weights, stride, padding)?;
    let in_len = c_in * g.col_cols();
    let out_len = g.channels * g.height * g.width;
    assert_eq!(grad_out.len(), n * out_len);
    let mut gw = vec![T::zero(); weights.len()];
    let mut gi = need_input.then(|| vec![T::zero(); input.len()]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        im2col(&g, &grad_out[b * out_len..(b + 1) * out_len], &mut cols);
        // dW (C_in × C_out·k·k) += X · colsᵀ
        T::gemm(c_in, g.col_cols(), g.col_rows(), x, false, &cols, true, &mut gw, true);
        if let Some(gi) = gi.as_mut() {
            T::gemm(
                c_in,
                g.col_rows(),
                g.col_cols(),
                weights.data(),
                false,
                &cols,
                false,
                &mut gi[b * in_len..(b + 1) * in_len],
                true,
            );
        }
    }
    Ok(Conv2dGrads {
        input: gi,
        weights: gw,
        bias: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_padded_output_shape() {
        let x = Tensor::<f64>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[3, 4, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d(&x, &w, &b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("4 input channels"), "{err}");
    }

    #[test]
    fn deconv_tiles_each_input_into_its_block() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = deconv2d(&x, &w, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let expected = [
            1.0, 1.0, 2.0, 2.0, //
            1.0, 1.0, 2.0, 2.0, //
            3.0, 3.0, 4.0, 4.0, //
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn deconv_doubles_resolution() {
        let x = Tensor::<f32>::zeros(&[1, 3, 16, 16]);
        let w = Tensor::zeros(&[3, 5, 4, 4]);
        let y = deconv2d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 32, 32]);
    }

    #[test]
    fn deconv_rejects_non_positive_output() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let w = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(deconv2d(&x, &w, 1, 1).is_err());
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> with shared weights and no bias.
        let x = Tensor::<f64>::from_fn(&[1, 2, 6, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let w = Tensor::<f64>::from_fn(&[3, 2, 4, 4], |i| ((i * 104729) % 11) as f64 - 5.0);
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        let r = Tensor::<f64>::from_fn(y.shape(), |i| ((i * 31) % 7) as f64 - 3.0);
        // deconv weights are C_in×C_out: the conv's O becomes the deconv's input.
        let wt = Tensor::new(&[3, 2, 4, 4], w.data().to_vec()).unwrap();
        let xr = deconv2d(&r, &wt, 2, 1).unwrap();
        assert_eq!(xr.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xr.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
