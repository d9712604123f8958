use super::{shape_err, Real, Tensor, TensorError};

pub fn leaky_relu<T: Real>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64_lossy(slope);
    input.map(|x| if x > T::zero() { x } else { s * x })
}

pub fn leaky_relu_backward<T: Real>(input: &Tensor<T>, slope: f64, grad_out: &[T]) -> Vec<T> {
    let s = T::from_f64_lossy(slope);
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { s * g })
        .collect()
}

/// Logistic function, evaluated so that large |x| saturates without overflow.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect()
}

/// Per-pixel Euclidean norm over channels of `warped − reference`: `N×1×H×W`.
pub fn brightness_error<T: Real>(
    warped: &Tensor<T>,
    reference: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = warped.dims4("brightness_error")?;
    if warped.shape() != reference.shape() {
        return Err(shape_err(
            "brightness_error",
            format!(
                "warped {:?} and reference {:?} differ",
                warped.shape(),
                reference.shape()
            ),
        ));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); n * hw];
    for b in 0..n {
        let acc = &mut out[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let a = &warped.data()[off..off + hw];
            let r = &reference.data()[off..off + hw];
            for ((o, &x), &y) in acc.iter_mut().zip(a).zip(r) {
                let d = x - y;
                *o += d * d;
            }
        }
        acc.iter_mut().for_each(|v| *v = v.sqrt());
    }
    Tensor::new(&[n, 1, h, w], out)
}

/// Returns `(d warped, d reference)`; the norm's gradient is taken as zero
/// where the difference vanishes.
pub fn brightness_error_backward<T: Real>(
    warped: &Tensor<T>,
    reference: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = warped.shape()[..] else {
        unreachable!("validated in forward")
    };
    let hw = h * w;
    let mut gw = vec![T::zero(); warped.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in 0..hw {
                let norm = output.data()[b * hw + i];
                if norm > T::zero() {
                    let d = warped.data()[off + i] - reference.data()[off + i];
                    gw[off + i] = grad_out[b * hw + i] * d / norm;
                }
            }
        }
    }
    let gr = gw.iter().map(|&g| -g).collect();
    (gw, gr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_definition_and_relu_limit() {
        let x = Tensor::<f64>::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).data(), &[-0.1, 0.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.0).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_and_saturation() {
        let x = Tensor::<f64>::new(&[3], vec![0.0, 40.0, -40.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() < 1e-15);
        assert!(y.data()[2] >= 0.0 && y.data()[2] < 1e-15);
        assert!(y.all_finite());
        let big = Tensor::<f32>::new(&[2], vec![1e4, -1e4]).unwrap();
        assert!(sigmoid(&big).all_finite());
    }

    #[test]
    fn brightness_error_cases() {
        let r = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64);
        let same = brightness_error(&r, &r).unwrap();
        assert_eq!(same.shape(), &[1, 1, 2, 2]);
        assert!(same.data().iter().all(|&v| v == 0.0));

        let mut w = r.clone();
        // difference (1, 2, 2) at pixel 0 across the three channels
        w.data_mut()[0] += 1.0;
        w.data_mut()[4] += 2.0;
        w.data_mut()[8] += 2.0;
        let e = brightness_error(&w, &r).unwrap();
        assert_eq!(e.data(), &[3.0, 0.0, 0.0, 0.0]);

        let one = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let mut other = one.clone();
        other.data_mut()[3] = -3.0;
        assert_eq!(brightness_error(&other, &one).unwrap().data()[3], 3.0);
    }

    #[test]
    fn brightness_error_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(brightness_error(&a, &b).is_err());
    }
}
