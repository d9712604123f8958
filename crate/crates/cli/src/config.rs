//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use crackprop::data::{AugmentationConfig, CrackSpec, SyntheticSpec};
use crackprop::dic::SubsetConfig;
use crackprop::network::NetworkConfig;
use crackprop::speed::{Axis, FrontConfig};
use crackprop::train::{AdamWConfig, LossConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSection {
    pub size: usize,
    pub frames: usize,
    pub sequences: usize,
    pub mm_per_px: f64,
    pub frame_rate: f64,
    pub opening: f64,
    pub tip_step: f64,
    pub speckle_density: f64,
    pub blur_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSection {
    /// Opening threshold in pixels.
    pub threshold: f64,
    pub subset_size: usize,
    pub spacing: usize,
    pub search_radius: usize,
    /// Temporal window; 0 disables the correction.
    pub temporal_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub channel_scale: f64,
    pub corr_d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_period: usize,
    /// Fraction of pairs held out for validation; 0 validates on the
    /// training pairs.
    pub val_fraction: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub target_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSection {
    pub threshold: f64,
    pub axis: Axis,
    pub notch_band: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub verbosity: u8,
    pub synth: SynthSection,
    pub label: LabelSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub noise_sigmas: Vec<f64>,
    pub speed: SpeedSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            verbosity: 0,
            synth: SynthSection {
                size: 512,
                frames: 8,
                sequences: 1,
                mm_per_px: 0.00625,
                frame_rate: 10.0,
                opening: 3.0,
                tip_step: -16.0,
                speckle_density: 0.5,
                blur_sigma: 1.0,
            },
            label: LabelSection {
                threshold: 0.5,
                subset_size: 9,
                spacing: 8,
                search_radius: 6,
                temporal_n: 1,
            },
            network: NetworkSection {
                channel_scale: 0.25,
                corr_d: 4,
            },
            train: TrainSection {
                batch_size: 1,
                epochs: 40,
                base_lr: 5e-5,
                lr_period: 5,
                val_fraction: 0.0,
                gamma: 0.0,
                lambda: 1.1,
                weight_decay: 1e-4,
                augment: true,
                target_f1: None,
            },
            noise_sigmas: vec![5.0, 15.0, 25.0],
            speed: SpeedSection {
                threshold: 0.5,
                axis: Axis::Up,
                notch_band: 4,
            },
        }
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect()
}

impl RunConfig {
    /// Every key, one per line; floats use the shortest exact form so the
    /// text parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let (sy, la, ne, tr, sp) = (&self.synth, &self.label, &self.network, &self.train, &self.speed);
        kv("run.seed", self.seed.to_string());
        kv("run.verbosity", self.verbosity.to_string());
        kv("synth.size", sy.size.to_string());
        kv("synth.frames", sy.frames.to_string());
        kv("synth.sequences", sy.sequences.to_string());
        kv("synth.mm_per_px", sy.mm_per_px.to_string());
        kv("synth.frame_rate", sy.frame_rate.to_string());
        kv("synth.opening", sy.opening.to_string());
        kv("synth.tip_step", sy.tip_step.to_string());
        kv("synth.speckle_density", sy.speckle_density.to_string());
        kv("synth.blur_sigma", sy.blur_sigma.to_string());
        kv("label.threshold", la.threshold.to_string());
        kv("label.subset_size", la.subset_size.to_string());
        kv("label.spacing", la.spacing.to_string());
        kv("label.search_radius", la.search_radius.to_string());
        kv("label.temporal_n", la.temporal_n.to_string());
        kv("network.channel_scale", ne.channel_scale.to_string());
        kv("network.corr_d", ne.corr_d.to_string());
        kv("train.batch_size", tr.batch_size.to_string());
        kv("train.epochs", tr.epochs.to_string());
        kv("train.base_lr", tr.base_lr.to_string());
        kv("train.lr_period", tr.lr_period.to_string());
        kv("train.val_fraction", tr.val_fraction.to_string());
        kv("train.gamma", tr.gamma.to_string());
        kv("train.lambda", tr.lambda.to_string());
        kv("train.weight_decay", tr.weight_decay.to_string());
        kv("train.augment", tr.augment.to_string());
        kv(
            "train.target_f1",
            tr.target_f1.map_or_else(|| "none".to_string(), |f| f.to_string()),
        );
        kv("noise.sigmas", list(&self.noise_sigmas));
        kv("speed.threshold", sp.threshold.to_string());
        kv("speed.axis", sp.axis.name().to_string());
        kv("speed.notch_band", sp.notch_band.to_string());
        s
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
        }
        let v = value;
        match key {
            "run.seed" => self.seed = p(key, v)?,
            "run.verbosity" => self.verbosity = p(key, v)?,
            "synth.size" => self.synth.size = p(key, v)?,
            "synth.frames" => self.synth.frames = p(key, v)?,
            "synth.sequences" => self.synth.sequences = p(key, v)?,
            "synth.mm_per_px" => self.synth.mm_per_px = p(key, v)?,
            "synth.frame_rate" => self.synth.frame_rate = p(key, v)?,
            "synth.opening" => self.synth.opening = p(key, v)?,
            "synth.tip_step" => self.synth.tip_step = p(key, v)?,
            "synth.speckle_density" => self.synth.speckle_density = p(key, v)?,
            "synth.blur_sigma" => self.synth.blur_sigma = p(key, v)?,
            "label.threshold" => self.label.threshold = p(key, v)?,
            "label.subset_size" => self.label.subset_size = p(key, v)?,
            "label.spacing" => self.label.spacing = p(key, v)?,
            "label.search_radius" => self.label.search_radius = p(key, v)?,
            "label.temporal_n" => self.label.temporal_n = p(key, v)?,
            "network.channel_scale" => self.network.channel_scale = p(key, v)?,
            "network.corr_d" => self.network.corr_d = p(key, v)?,
            "train.batch_size" => self.train.batch_size = p(key, v)?,
            "train.epochs" => self.train.epochs = p(key, v)?,
            "train.base_lr" => self.train.base_lr = p(key, v)?,
            "train.lr_period" => self.train.lr_period = p(key, v)?,
            "train.val_fraction" => self.train.val_fraction = p(key, v)?,
            "train.gamma" => self.train.gamma = p(key, v)?,
            "train.lambda" => self.train.lambda = p(key, v)?,
            "train.weight_decay" => self.train.weight_decay = p(key, v)?,
            "train.augment" => self.train.augment = p(key, v)?,
            "train.target_f1" => {
                self.train.target_f1 = if v == "none" { None } else { Some(p(key, v)?) }
            }
            "noise.sigmas" => self.noise_sigmas = parse_list(v)?,
            "speed.threshold" => self.speed.threshold = p(key, v)?,
            "speed.axis" => {
                self.speed.axis = Axis::parse(v).ok_or_else(|| format!("unknown axis `{v}`"))?
            }
            "speed.notch_band" => self.speed.notch_band = p(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| CliError::Usage(format!("{origin}:{}: {m}", i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        let sy = &self.synth;
        let mut spec = SyntheticSpec::desk(sy.size, seed);
        spec.mm_per_px = sy.mm_per_px;
        spec.frame_rate = sy.frame_rate;
        spec.speckle_density = sy.speckle_density;
        spec.blur_sigma = sy.blur_sigma;
        spec.grid = self.subset();
        if let Some(CrackSpec { opening, tip_step, .. }) = spec.crack.as_mut() {
            *opening = sy.opening;
            *tip_step = sy.tip_step;
        }
        spec
    }

    pub fn subset(&self) -> SubsetConfig {
        SubsetConfig {
            subset_size: self.label.subset_size,
            spacing: self.label.spacing,
            search_radius: self.label.search_radius,
            subpixel: true,
        }
    }

    pub fn network_config(&self, input_size: usize) -> NetworkConfig {
        NetworkConfig {
            channel_scale: self.network.channel_scale,
            corr_d: self.network.corr_d,
            ..NetworkConfig::for_input(input_size)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let tr = &self.train;
        TrainConfig {
            batch_size: tr.batch_size,
            epochs: tr.epochs,
            base_lr: tr.base_lr,
            lr_period: tr.lr_period,
            seed,
            augmentation: if tr.augment {
                AugmentationConfig::default()
            } else {
                AugmentationConfig::identity()
            },
            loss: LossConfig {
                gamma: tr.gamma,
                lambda: tr.lambda,
            },
            optimizer: AdamWConfig {
                weight_decay: tr.weight_decay,
                ..AdamWConfig::default()
            },
            target_f1: tr.target_f1,
            ..TrainConfig::default()
        }
    }

    pub fn front_config(&self) -> FrontConfig {
        FrontConfig {
            axis: self.speed.axis,
            notch_band: self.speed.notch_band,
        }
    }
}
