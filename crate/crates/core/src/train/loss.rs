use crate::tensor::Real;

use super::TrainError;

/// Balance hyperparameters of the class-balanced cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Offset added to the negative-class weight.
    pub gamma: f64,
    /// Multiplier on the positive-class weight.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            lambda: 1.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma >= 0.0 && self.lambda >= 0.0) {
            return Err(TrainError::Config(format!(
                "loss weights must be non-negative (gamma {}, lambda {})",
                self.gamma, self.lambda
            )));
        }
        Ok(())
    }

    /// `(α, β)` for a label map: α weights background pixels, β edge pixels.
    pub fn weights(&self, gt: &[u8]) -> (f64, f64) {
        let n = gt.len().max(1) as f64;
        let pos = gt.iter().filter(|&&g| g != 0).count() as f64;
        let neg = gt.len() as f64 - pos;
        (self.gamma + pos / n, self.lambda * neg / n)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negated class-balanced log-likelihood of one edge map, taken on the
/// pre-sigmoid logits, and its gradient with respect to them.
pub fn class_balanced_bce<T: Real>(logits: &[T], gt: &[u8], cfg: &LossConfig) -> Result<(f64, Vec<T>), TrainError> {
    if logits.len() != gt.len() {
        return Err(TrainError::Shape(format!(
            "{} logits for {} labels",
            logits.len(),
            gt.len()
        )));
    }
    let (alpha, beta) = cfg.weights(gt);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(gt)
        .map(|(&x, &g)| {
            let x = x.to_f64_lossy();
            let d = if g != 0 {
                loss += beta * softplus(-x);
                -beta * sigmoid(-x)
            } else {
                loss += alpha * softplus(x);
                alpha * sigmoid(x)
            };
            T::from_f64_lossy(d)
        })
        .collect();
    Ok((loss, grad))
}
