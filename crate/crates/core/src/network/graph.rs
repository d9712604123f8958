use std::collections::BTreeMap;

use super::{
    EdgeProbabilityMap, FlowField, NetworkConfig, NetworkError, NetworkWeights, OUTPUT_STRIDE,
};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Channels of the stacked refinement input: `I_r`, `I_d`, flow, warped `I_d`,
/// brightness error.
pub const STACKED_CHANNELS: usize = 3 + 3 + 2 + 3 + 1;

/// Layer-name prefixes of the three cascade stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    FlowNetC,
    FlowNetS,
    EdgeNet,
}

impl Stage {
    pub fn prefix(self) -> &'static str {
        match self {
            Stage::FlowNetC => "flownetc",
            Stage::FlowNetS => "flownets",
            Stage::EdgeNet => "edgenet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Transposed convolution without bias.
    Deconv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub stage: Stage,
    pub kind: LayerKind,
}

impl LayerSpec {
    /// `(parameter name, shape)` pairs owned by this layer.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![
                (format!("{}.weight", self.name), vec![out_ch, in_ch, kernel, kernel]),
                (format!("{}.bias", self.name), vec![out_ch]),
            ],
            LayerKind::Deconv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![(format!("{}.weight", self.name), vec![in_ch, out_ch, kernel, kernel])],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerKind::Deconv {
                in_ch,
                kernel,
                stride,
                ..
            } => (in_ch * kernel * kernel / (stride * stride)).max(1),
        }
    }

    /// Output layers (flow predictions, edge side outputs) are linear.
    pub fn is_prediction(&self) -> bool {
        let last = self.name.rsplit('.').next().unwrap_or("");
        last.starts_with("predict_flow") || last.starts_with("side") || last == "fuse"
    }
}

/// Parameter name → tape variable.
pub type ParamVars = BTreeMap<String, Var>;

/// Layer inventory and wiring of the cascade for one [`NetworkConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    index: BTreeMap<String, usize>,
}

struct Builder<'a> {
    cfg: &'a NetworkConfig,
    stage: Stage,
    layers: Vec<LayerSpec>,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) {
        self.layers.push(LayerSpec {
            name: format!("{}.{name}", self.stage.prefix()),
            stage: self.stage,
            kind: LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding: kernel / 2,
            },
        });
    }

    fn deconv(&mut self, name: &str, in_ch: usize, out_ch: usize) {
        self.layers.push(LayerSpec {
            name: format!("{}.{name}", self.stage.prefix()),
            stage: self.stage,
            kind: LayerKind::Deconv {
                in_ch,
                out_ch,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
        });
    }

    /// conv4 … conv6_1, shared by both contracting variants.
    fn contracting_tail(&mut self, c3: usize) {
        let w = |b| self.cfg.width(b);
        let (c4, c5, c6) = (w(512), w(512), w(1024));
        self.conv("conv4", c3, c4, 3, 2);
        self.conv("conv4_1", c4, c4, 3, 1);
        self.conv("conv5", c4, c5, 3, 2);
        self.conv("conv5_1", c5, c5, 3, 1);
        self.conv("conv6", c5, c6, 3, 2);
        self.conv("conv6_1", c6, c6, 3, 1);
    }

    /// Expanding part. `full` keeps the stride-4 stage and final flow head;
    /// otherwise it stops after the stride-8 concatenation and adds the edge head.
    fn expanding(&mut self, skip2: usize, full: bool) {
        let w = |b| self.cfg.width(b);
        let (c3, c4, c5, c6) = (w(256), w(512), w(512), w(1024));
        self.conv("predict_flow6", c6, 2, 3, 1);
        self.deconv("upflow6", 2, 2);
        self.deconv("deconv5", c6, w(512));
        let cat5 = c5 + w(512) + 2;
        self.conv("predict_flow5", cat5, 2, 3, 1);
        self.deconv("upflow5", 2, 2);
        self.deconv("deconv4", cat5, w(256));
        let cat4 = c4 + w(256) + 2;
        self.conv("predict_flow4", cat4, 2, 3, 1);
        self.deconv("upflow4", 2, 2);
        self.deconv("deconv3", cat4, w(128));
        let cat3 = c3 + w(128) + 2;
        if full {
            self.conv("predict_flow3", cat3, 2, 3, 1);
            self.deconv("upflow3", 2, 2);
            self.deconv("deconv2", cat3, w(64));
            let cat2 = skip2 + w(64) + 2;
            self.conv("predict_flow2", cat2, 2, 3, 1);
        } else {
            self.conv("side5", cat5, 1, 1, 1);
            self.conv("side4", cat4, 1, 1, 1);
            self.conv("side3", cat3, 1, 1, 1);
            self.conv("fuse", 3, 1, 1, 1);
        }
    }
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let w = |b| config.width(b);
        let mut layers = Vec::new();

        let mut b = Builder {
            cfg: &config,
            stage: Stage::FlowNetC,
            layers: Vec::new(),
        };
        b.conv("conv1", 3, w(64), 7, 2);
        b.conv("conv2", w(64), w(128), 5, 2);
        b.conv("conv3", w(128), w(256), 5, 2);
        b.conv("conv_redir", w(256), w(32), 1, 1);
        let corr_channels = (2 * config.corr_d + 1).pow(2);
        b.conv("conv3_1", w(32) + corr_channels, w(256), 3, 1);
        b.contracting_tail(w(256));
        b.expanding(w(128), true);
        layers.append(&mut b.layers);

        for (stage, full) in [(Stage::FlowNetS, true), (Stage::EdgeNet, false)] {
            b.stage = stage;
            b.conv("conv1", STACKED_CHANNELS, w(64), 7, 2);
            b.conv("conv2", w(64), w(128), 5, 2);
            b.conv("conv3", w(128), w(256), 5, 2);
            b.conv("conv3_1", w(256), w(256), 3, 1);
            b.contracting_tail(w(256));
            b.expanding(w(128), full);
            layers.append(&mut b.layers);
        }

        let index = layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.clone(), i))
            .collect();
        Ok(Self {
            config,
            layers,
            index,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    /// Every parameter in graph order with its expected shape.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(LayerSpec::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Registers every weight on the tape, as trainable parameters or as
    /// constants (inference).
    pub fn bind<T: Real>(
        &self,
        tape: &mut Tape<T>,
        weights: &NetworkWeights,
        trainable: bool,
    ) -> Result<ParamVars, NetworkError> {
        weights.check_against(self)?;
        Ok(weights
            .iter()
            .map(|(name, t)| {
                let t = t.cast::<T>();
                let v = if trainable {
                    tape.param(t)
                } else {
                    tape.constant(t)
                };
                (name.clone(), v)
            })
            .collect())
    }

    /// Runs the cascade once on `N×3×H×W` images in [0, 1] without recording
    /// gradients.
    pub fn infer(
        &self,
        weights: &NetworkWeights,
        reference: &Tensor<f32>,
        deformed: &Tensor<f32>,
    ) -> Result<(FlowField, FlowField, EdgeProbabilityMap), NetworkError> {
        let mut tape = Tape::<f32>::new();
        let params = self.bind(&mut tape, weights, false)?;
        let r = tape.constant(reference.clone());
        let d = tape.constant(deformed.clone());
        let out = crackpropnet_forward(self, &mut tape, &params, r, d)?;
        Ok((
            FlowField(tape.value(out.w1).clone()),
            FlowField(tape.value(out.w2).clone()),
            EdgeProbabilityMap(tape.value(out.edge_prob).clone()),
        ))
    }
}

struct Ctx<'a, T: Real> {
    net: &'a Network,
    tape: &'a mut Tape<T>,
    params: &'a ParamVars,
}

impl<T: Real> Ctx<'_, T> {
    fn param(&self, name: &str) -> Result<Var, NetworkError> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::Missing(name.to_string()))
    }

    fn layer(&self, name: &str) -> Result<LayerKind, NetworkError> {
        self.net
            .layer(name)
            .map(|l| l.kind)
            .ok_or_else(|| NetworkError::Missing(name.to_string()))
    }

    /// Convolution (or deconvolution) followed by leaky ReLU unless the layer
    /// is a prediction layer.
    fn layer_fwd(&mut self, stage: Stage, name: &str, x: Var) -> Result<Var, NetworkError> {
        let full = format!("{}.{name}", stage.prefix());
        let w = self.param(&format!("{full}.weight"))?;
        let y = match self.layer(&full)? {
            LayerKind::Conv {
                stride, padding, ..
            } => {
                let b = self.param(&format!("{full}.bias"))?;
                self.tape.conv2d(x, w, b, stride, padding)?
            }
            LayerKind::Deconv {
                stride, padding, ..
            } => self.tape.deconv2d(x, w, stride, padding)?,
        };
        let linear = self.net.layer(&full).is_some_and(LayerSpec::is_prediction)
            || name.starts_with("upflow");
        Ok(if linear {
            y
        } else {
            self.tape.leaky_relu(y, self.net.config.leaky_slope)
        })
    }

    fn contracting_tail(&mut self, stage: Stage, c3_1: Var) -> Result<[Var; 3], NetworkError> {
        let x = self.layer_fwd(stage, "conv4", c3_1)?;
        let c4_1 = self.layer_fwd(stage, "conv4_1", x)?;
        let x = self.layer_fwd(stage, "conv5", c4_1)?;
        let c5_1 = self.layer_fwd(stage, "conv5_1", x)?;
        let x = self.layer_fwd(stage, "conv6", c5_1)?;
        let c6_1 = self.layer_fwd(stage, "conv6_1", x)?;
        Ok([c4_1, c5_1, c6_1])
    }

    /// Refinement stages down to stride 8; returns `[concat5, concat4, concat3]`.
    fn expanding_to_stride8(
        &mut self,
        stage: Stage,
        c6_1: Var,
        c5_1: Var,
        c4_1: Var,
        c3_1: Var,
    ) -> Result<[Var; 3], NetworkError> {
        let mut coarse = c6_1;
        let mut cats = Vec::with_capacity(3);
        for (level, skip) in [(6, c5_1), (5, c4_1), (4, c3_1)] {
            let flow = self.layer_fwd(stage, &format!("predict_flow{level}"), coarse)?;
            let up = self.layer_fwd(stage, &format!("upflow{level}"), flow)?;
            let de = self.layer_fwd(stage, &format!("deconv{}", level - 1), coarse)?;
            coarse = self.tape.concat(&[skip, de, up])?;
            cats.push(coarse);
        }
        Ok([cats[0], cats[1], cats[2]])
    }

    /// Stride-4 stage plus final flow prediction, upsampled to full resolution.
    fn flow_head(&mut self, stage: Stage, cat3: Var, skip2: Var) -> Result<Var, NetworkError> {
        let flow3 = self.layer_fwd(stage, "predict_flow3", cat3)?;
        let up = self.layer_fwd(stage, "upflow3", flow3)?;
        let de = self.layer_fwd(stage, "deconv2", cat3)?;
        let cat2 = self.tape.concat(&[skip2, de, up])?;
        let flow2 = self.layer_fwd(stage, "predict_flow2", cat2)?;
        Ok(self.tape.upsample_bilinear(flow2, 4)?)
    }
}

/// Correlation flow network on separate reference/deformed streams.
pub fn flownet_c_forward<T: Real>(
    net: &Network,
    tape: &mut Tape<T>,
    params: &ParamVars,
    reference: Var,
    deformed: Var,
) -> Result<Var, NetworkError> {
    let stage = Stage::FlowNetC;
    let mut ctx = Ctx { net, tape, params };
    let mut streams = Vec::with_capacity(2);
    for image in [reference, deformed] {
        let x = ctx.layer_fwd(stage, "conv1", image)?;
        let c2 = ctx.layer_fwd(stage, "conv2", x)?;
        let c3 = ctx.layer_fwd(stage, "conv3", c2)?;
        streams.push((c2, c3));
    }
    let (c2a, f1) = streams[0];
    let (_, f2) = streams[1];
    let cfg = &net.config;
    let corr = ctx.tape.correlate(f1, f2, cfg.corr_k, cfg.corr_d)?;
    let channels = ctx.tape.value(f1).shape()[1];
    let corr = ctx
        .tape
        .scale(corr, 1.0 / (channels * (2 * cfg.corr_k + 1).pow(2)) as f64);
    let corr = ctx.tape.leaky_relu(corr, cfg.leaky_slope);
    let redir = ctx.layer_fwd(stage, "conv_redir", f1)?;
    let x = ctx.tape.concat(&[redir, corr])?;
    let c3_1 = ctx.layer_fwd(stage, "conv3_1", x)?;
    let [c4_1, c5_1, c6_1] = ctx.contracting_tail(stage, c3_1)?;
    let [_, _, cat3] = ctx.expanding_to_stride8(stage, c6_1, c5_1, c4_1, c3_1)?;
    ctx.flow_head(stage, cat3, c2a)
}

fn stacked_contracting<T: Real>(
    ctx: &mut Ctx<'_, T>,
    stage: Stage,
    stacked: Var,
) -> Result<[Var; 5], NetworkError> {
    let channels = ctx.tape.value(stacked).shape().get(1).copied().unwrap_or(0);
    if channels != STACKED_CHANNELS {
        return Err(NetworkError::Config(format!(
            "stacked input must have {STACKED_CHANNELS} channels (image pair, flow, warped image, error), got {channels}"
        )));
    }
    let x = ctx.layer_fwd(stage, "conv1", stacked)?;
    let c2 = ctx.layer_fwd(stage, "conv2", x)?;
    let x = ctx.layer_fwd(stage, "conv3", c2)?;
    let c3_1 = ctx.layer_fwd(stage, "conv3_1", x)?;
    let [c4_1, c5_1, c6_1] = ctx.contracting_tail(stage, c3_1)?;
    Ok([c2, c3_1, c4_1, c5_1, c6_1])
}

/// Stacked refinement network on the 12-channel input.
pub fn flownet_s_forward<T: Real>(
    net: &Network,
    tape: &mut Tape<T>,
    params: &ParamVars,
    stacked: Var,
) -> Result<Var, NetworkError> {
    let stage = Stage::FlowNetS;
    let mut ctx = Ctx { net, tape, params };
    let [c2, c3_1, c4_1, c5_1, c6_1] = stacked_contracting(&mut ctx, stage, stacked)?;
    let [_, _, cat3] = ctx.expanding_to_stride8(stage, c6_1, c5_1, c4_1, c3_1)?;
    ctx.flow_head(stage, cat3, c2)
}

/// Side outputs from expanding features (coarsest first, finest last, the
/// finest at stride 8), resized to the finest resolution, stacked and fused by
/// a 1×1 convolution. Returns `(logits, probabilities)`.
pub fn edge_head_forward<T: Real>(
    net: &Network,
    tape: &mut Tape<T>,
    params: &ParamVars,
    features: &[Var],
) -> Result<(Var, Var), NetworkError> {
    let stage = Stage::EdgeNet;
    let mut ctx = Ctx { net, tape, params };
    let names = ["side5", "side4", "side3"];
    if features.len() != names.len() {
        return Err(NetworkError::Config(format!(
            "edge head expects {} feature maps, got {}",
            names.len(),
            features.len()
        )));
    }
    let target = ctx.tape.value(features[2]).shape()[3];
    let mut sides = Vec::with_capacity(3);
    for (&f, name) in features.iter().zip(names) {
        let s = ctx.layer_fwd(stage, name, f)?;
        let size = ctx.tape.value(s).shape()[3];
        if target % size != 0 {
            return Err(NetworkError::Config(format!(
                "side output {name} of width {size} does not divide {target}"
            )));
        }
        sides.push(ctx.tape.upsample_bilinear(s, target / size)?);
    }
    let stacked = ctx.tape.concat(&sides)?;
    let logits = ctx.layer_fwd(stage, "fuse", stacked)?;
    let prob = ctx.tape.sigmoid(logits);
    Ok((logits, prob))
}

/// Handles to the cascade outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct CascadeOutput {
    pub w1: Var,
    pub w2: Var,
    pub edge_logits: Var,
    pub edge_prob: Var,
}

fn stack_for_refinement<T: Real>(
    tape: &mut Tape<T>,
    reference: Var,
    deformed: Var,
    flow: Var,
) -> Result<Var, NetworkError> {
    let warped = tape.warp(deformed, flow)?;
    let error = tape.brightness_error(warped, reference)?;
    Ok(tape.concat(&[reference, deformed, flow, warped, error])?)
}

/// Full cascade on `N×3×H×W` images in [0, 1]; `H`, `W` multiples of 64.
pub fn crackpropnet_forward<T: Real>(
    net: &Network,
    tape: &mut Tape<T>,
    params: &ParamVars,
    reference: Var,
    deformed: Var,
) -> Result<CascadeOutput, NetworkError> {
    let shape = tape.value(reference).shape().to_vec();
    let valid = shape.len() == 4
        && shape[1] == 3
        && shape[2] % super::SIZE_MULTIPLE == 0
        && shape[3] % super::SIZE_MULTIPLE == 0
        && shape[2] > 0
        && shape[3] > 0;
    if !valid || tape.value(deformed).shape() != shape.as_slice() {
        return Err(NetworkError::Config(format!(
            "images must be N×3×H×W with H, W multiples of {}; got {:?} and {:?}",
            super::SIZE_MULTIPLE,
            shape,
            tape.value(deformed).shape()
        )));
    }
    let w1 = flownet_c_forward(net, tape, params, reference, deformed)?;
    let stacked = stack_for_refinement(tape, reference, deformed, w1)?;
    let w2 = flownet_s_forward(net, tape, params, stacked)?;
    let stacked = stack_for_refinement(tape, reference, deformed, w2)?;

    let stage = Stage::EdgeNet;
    let features = {
        let mut ctx = Ctx { net, tape, params };
        let [_, c3_1, c4_1, c5_1, c6_1] = stacked_contracting(&mut ctx, stage, stacked)?;
        ctx.expanding_to_stride8(stage, c6_1, c5_1, c4_1, c3_1)?
    };
    let (edge_logits, edge_prob) = edge_head_forward(net, tape, params, &features)?;
    debug_assert_eq!(tape.value(edge_prob).shape()[3] * OUTPUT_STRIDE, shape[3]);
    Ok(CascadeOutput {
        w1,
        w2,
        edge_logits,
        edge_prob,
    })
}
