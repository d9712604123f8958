//! The crack-propagation cascade: a correlation flow network, a stacked flow
//! refinement network, and a modified stacked network whose expanding part
//! feeds an edge-detection head instead of a final flow prediction.

mod graph;
mod weights;

pub use graph::{
    crackpropnet_forward, edge_head_forward, flownet_c_forward, flownet_s_forward, CascadeOutput,
    LayerKind, LayerSpec, Network, ParamVars, Stage, STACKED_CHANNELS,
};
pub use weights::{load_weights, read_weights, save_weights, write_weights, NetworkWeights};

use crate::tensor::{Tensor, TensorError};

/// Fixed ratio between input resolution and edge-map resolution.
pub const OUTPUT_STRIDE: usize = 8;

/// Inputs must be divisible by this (six stride-2 contractions).
pub const SIZE_MULTIPLE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("weight file format error: {0}")]
    Format(String),
    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weight file truncated while reading {0}")]
    Truncated(String),
    #[error("shape mismatch for layer parameter `{name}`: graph expects {expected:?}, file has {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("parameter `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Multiplies every FlowNet channel width; must lie in (0, 1].
    pub channel_scale: f64,
    /// Correlation patch radius (patch size `2k+1`).
    pub corr_k: usize,
    /// Correlation maximum displacement in feature cells.
    pub corr_d: usize,
    pub input_size: usize,
    pub edge_map_size: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            channel_scale: 0.25,
            corr_k: 0,
            corr_d: 10,
            input_size: 1024,
            edge_map_size: 128,
            leaky_slope: 0.1,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale configuration for a square input of `size` pixels.
    pub fn for_input(size: usize) -> Self {
        Self {
            input_size: size,
            edge_map_size: size / OUTPUT_STRIDE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if !(self.channel_scale > 0.0 && self.channel_scale <= 1.0) {
            return bad(format!("channel_scale {} outside (0, 1]", self.channel_scale));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        if self.input_size == 0 || self.input_size % SIZE_MULTIPLE != 0 {
            return bad(format!(
                "input size {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.input_size
            ));
        }
        if self.edge_map_size * OUTPUT_STRIDE != self.input_size {
            return bad(format!(
                "edge map size {} must be input size {} / {OUTPUT_STRIDE}",
                self.edge_map_size, self.input_size
            ));
        }
        Ok(())
    }

    /// Scaled channel width, never below one.
    pub fn width(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(1)
    }
}

/// Dense flow `(u, v)` in pixels at input resolution: `N×2×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(pub Tensor<f32>);

impl FlowField {
    /// Mean `(u, v)` over pixels at least `margin` away from the border.
    pub fn interior_mean(&self, margin: usize) -> (f64, f64) {
        let s = self.0.shape();
        let (h, w) = (s[2], s[3]);
        let mut acc = (0.0, 0.0);
        let mut count = 0usize;
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                acc.0 += f64::from(self.0.data()[y * w + x]);
                acc.1 += f64::from(self.0.data()[h * w + y * w + x]);
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        (acc.0 / n, acc.1 / n)
    }
}

/// Sigmoid edge probabilities, `N×1×(H/8)×(W/8)`, each in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilityMap(pub Tensor<f32>);

impl EdgeProbabilityMap {
    /// Probabilities of batch item `index` as a flat row-major slice.
    pub fn item(&self, index: usize) -> &[f32] {
        let s = self.0.shape();
        let len = s[1] * s[2] * s[3];
        &self.0.data()[index * len..(index + 1) * len]
    }

    pub fn side(&self) -> usize {
        self.0.shape()[3]
    }
}
