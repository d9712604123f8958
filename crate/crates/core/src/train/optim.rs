use std::collections::BTreeMap;

use crate::network::NetworkWeights;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moments and step counter of a decoupled-weight-decay Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f32]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f32]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// One update of every parameter. Gradients are checked in full before
    /// anything is touched, so a rejected step leaves parameters and state
    /// as they were.
    pub fn step(
        &mut self,
        params: &mut NetworkWeights,
        grads: &BTreeMap<String, Vec<f32>>,
        lr: f64,
    ) -> Result<(), TrainError> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| TrainError::Shape(format!("no gradient for `{name}`")))?;
            if g.len() != p.len() {
                return Err(TrainError::Shape(format!(
                    "gradient for `{name}` has {} elements, parameter {}",
                    g.len(),
                    p.len()
                )));
            }
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    name: name.clone(),
                    index: i,
                });
            }
        }
        if let Some(name) = grads.keys().find(|k| params.get(k).is_none()) {
            return Err(TrainError::Shape(format!("gradient for unknown parameter `{name}`")));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = f64::from(*m) / bc1;
                let v_hat = f64::from(*v) / bc2;
                *w *= decay;
                *w -= (lr * m_hat / (v_hat.sqrt() + c.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Step decay: `base / 2^floor(epoch / period)`; a zero period never decays.
pub fn lr_at(epoch: usize, base: f64, period: usize) -> f64 {
    if period == 0 {
        return base;
    }
    base / 2f64.powi((epoch / period) as i32)
}
