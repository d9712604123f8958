//! Linear operation tape for reverse-mode gradients.
//!
//! Every op appends its output tensor and an [`OpRecord`]; [`Tape::backward`]
//! walks the records in reverse. Leaves are either constants (no gradient) or
//! trainable parameters.

use super::{
    brightness_error, brightness_error_backward, concat, concat_backward, conv2d,
    conv2d_backward, correlate, correlate_backward, deconv2d, deconv2d_backward, leaky_relu,
    leaky_relu_backward, sigmoid, sigmoid_backward, upsample_bilinear,
    upsample_bilinear_backward, warp, warp_backward, Real, Tensor, TensorError,
};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// inputs: input, weights, bias
    Conv2d { stride: usize, padding: usize },
    /// inputs: input, weights
    Deconv2d { stride: usize, padding: usize },
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// inputs: f1, f2
    Correlate { k: usize, d: usize },
    /// inputs: image, flow
    Warp,
    /// inputs: warped, reference
    BrightnessError,
    UpsampleBilinear { factor: usize },
    Concat,
    Scale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpRecord {
    pub op: Op,
    pub inputs: Vec<Var>,
    pub output: Var,
}

fn eval<T: Real>(op: &Op, x: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    match *op {
        Op::Conv2d { stride, padding } => conv2d(x[0], x[1], x[2], stride, padding),
        Op::Deconv2d { stride, padding } => deconv2d(x[0], x[1], stride, padding),
        Op::LeakyRelu { slope } => Ok(leaky_relu(x[0], slope)),
        Op::Sigmoid => Ok(sigmoid(x[0])),
        Op::Correlate { k, d } => correlate(x[0], x[1], k, d),
        Op::Warp => warp(x[0], x[1]),
        Op::BrightnessError => brightness_error(x[0], x[1]),
        Op::UpsampleBilinear { factor } => upsample_bilinear(x[0], factor),
        Op::Concat => concat(x),
        Op::Scale { factor } => {
            let f = T::from_f64_lossy(factor);
            Ok(x[0].map(|v| v * f))
        }
    }
}

/// Gradients for each input (`None` when not requested or not applicable).
fn grads<T: Real>(
    op: &Op,
    x: &[&Tensor<T>],
    y: &Tensor<T>,
    gy: &[T],
    need: &[bool],
) -> Result<Vec<Option<Vec<T>>>, TensorError> {
    Ok(match *op {
        Op::Conv2d { stride, padding } => {
            let g = conv2d_backward(x[0], x[1], stride, padding, gy, need[0])?;
            vec![g.input, Some(g.weights), g.bias]
        }
        Op::Deconv2d { stride, padding } => {
            let g = deconv2d_backward(x[0], x[1], stride, padding, gy, need[0])?;
            vec![g.input, Some(g.weights)]
        }
        Op::LeakyRelu { slope } => vec![Some(leaky_relu_backward(x[0], slope, gy))],
        Op::Sigmoid => vec![Some(sigmoid_backward(y, gy))],
        Op::Correlate { k, d } => {
            let (a, b) = correlate_backward(x[0], x[1], k, d, gy);
            vec![Some(a), Some(b)]
        }
        Op::Warp => {
            let (gi, gf) = warp_backward(x[0], x[1], gy, need[0]);
            vec![gi, Some(gf)]
        }
        Op::BrightnessError => {
            let (a, b) = brightness_error_backward(x[0], x[1], y, gy);
            vec![Some(a), Some(b)]
        }
        Op::UpsampleBilinear { factor } => {
            vec![Some(upsample_bilinear_backward(x[0].shape(), factor, gy))]
        }
        Op::Concat => {
            let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
            concat_backward(&shapes, gy).into_iter().map(Some).collect()
        }
        Op::Scale { factor } => {
            let f = T::from_f64_lossy(factor);
            vec![Some(gy.iter().map(|&g| g * f).collect())]
        }
    })
}

#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    requires_grad: Vec<bool>,
    records: Vec<OpRecord>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            requires_grad: Vec::new(),
            records: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    /// A leaf that receives no gradient (images, fixed inputs).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false)
    }

    /// A trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.values[v.0].grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.values[v.0].take_grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn records(&self) -> &[OpRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        let value = {
            let xs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.values[v.0]).collect();
            eval(&op, &xs)?
        };
        let rg = inputs.iter().any(|v| self.requires_grad[v.0]);
        let output = self.push(value, rg);
        self.records.push(OpRecord {
            op,
            inputs: inputs.to_vec(),
            output,
        });
        Ok(output)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        self.apply(Op::Conv2d { stride, padding }, &[x, w, b])
    }

    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        self.apply(Op::Deconv2d { stride, padding }, &[x, w])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.apply(Op::LeakyRelu { slope }, &[x])
            .expect("elementwise op cannot fail")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.apply(Op::Sigmoid, &[x]).expect("elementwise op cannot fail")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.apply(Op::Scale { factor }, &[x])
            .expect("elementwise op cannot fail")
    }

    pub fn correlate(&mut self, f1: Var, f2: Var, k: usize, d: usize) -> Result<Var, TensorError> {
        self.apply(Op::Correlate { k, d }, &[f1, f2])
    }

    pub fn warp(&mut self, image: Var, flow: Var) -> Result<Var, TensorError> {
        self.apply(Op::Warp, &[image, flow])
    }

    pub fn brightness_error(&mut self, warped: Var, reference: Var) -> Result<Var, TensorError> {
        self.apply(Op::BrightnessError, &[warped, reference])
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        self.apply(Op::UpsampleBilinear { factor }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(Op::Concat, parts)
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// `output`) through every recorded op. Intermediate gradients are freed
    /// as soon as they have been consumed; leaf gradients accumulate.
    pub fn backward(&mut self, output: Var, seed: &[T]) -> Result<(), TensorError> {
        self.backward_multi(&[(output, seed)])
    }

    /// Like [`Tape::backward`] for a scalar that depends on several outputs.
    pub fn backward_multi(&mut self, seeds: &[(Var, &[T])]) -> Result<(), TensorError> {
        let mut last = 0;
        for &(output, seed) in seeds {
            if seed.len() != self.values[output.0].len() {
                return Err(super::shape_err(
                    "backward",
                    format!(
                        "seed has {} entries for output of {} elements",
                        seed.len(),
                        self.values[output.0].len()
                    ),
                ));
            }
            last = last.max(output.0);
        }
        for &(output, seed) in seeds {
            self.values[output.0].accumulate_grad(seed);
        }
        for r in (0..self.records.len()).rev() {
            let out = self.records[r].output;
            if out.0 > last {
                continue;
            }
            let need: Vec<bool> = self.records[r]
                .inputs
                .iter()
                .map(|v| self.requires_grad[v.0])
                .collect();
            if !need.iter().any(|&n| n) {
                continue;
            }
            let Some(gy) = self.values[out.0].take_grad() else {
                continue;
            };
            let input_grads = {
                let rec = &self.records[r];
                let xs: Vec<&Tensor<T>> = rec.inputs.iter().map(|v| &self.values[v.0]).collect();
                grads(&rec.op, &xs, &self.values[out.0], &gy, &need)?
            };
            let inputs = self.records[r].inputs.clone();
            for ((v, g), needed) in inputs.into_iter().zip(input_grads).zip(need) {
                if let (Some(g), true) = (g, needed) {
                    self.values[v.0].accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    /// Recomputes every recorded op in order from the current leaf values.
    pub fn replay(&mut self) -> Result<(), TensorError> {
        for r in 0..self.records.len() {
            let value = {
                let rec = &self.records[r];
                let xs: Vec<&Tensor<T>> = rec.inputs.iter().map(|v| &self.values[v.0]).collect();
                eval(&rec.op, &xs)?
            };
            let out = self.records[r].output;
            self.values[out.0] = value;
        }
        Ok(())
    }
}
