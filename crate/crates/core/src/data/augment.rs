use rand::Rng;

use super::FramePair;
use crate::dic::CrackEdgeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub flip_prob: f64,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness: (0.95, 1.05),
            contrast: (0.95, 1.05),
            saturation: (0.95, 1.05),
            hue: (-0.05, 0.05),
        }
    }
}

impl AugmentationConfig {
    /// No flip, all photometric factors fixed at identity.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            saturation: (1.0, 1.0),
            hue: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let within = |(lo, hi): (f64, f64), a: f64, b: f64| lo <= hi && lo >= a && hi <= b;
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("flip probability {} outside [0, 1]", self.flip_prob));
        }
        for (name, r) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !within(r, 0.9, 1.1) {
                return Err(format!("{name} range {r:?} outside [0.9, 1.1]"));
            }
        }
        if !within(self.hue, -0.1, 0.1) {
            return Err(format!("hue range {:?} outside [-0.1, 0.1]", self.hue));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> AugmentParams {
        let mut uniform = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let brightness = uniform(self.brightness);
        let contrast = uniform(self.contrast);
        let saturation = uniform(self.saturation);
        let hue = uniform(self.hue);
        AugmentParams {
            flip: rng.random_bool(self.flip_prob),
            brightness,
            contrast,
            saturation,
            hue,
        }
    }
}

/// One sampled transform set, shared by both images of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of a full turn.
    pub hue: f64,
}

/// Augmented pair as `3×H×W` planes in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub width: usize,
    pub height: usize,
    pub reference: Vec<f32>,
    pub deformed: Vec<f32>,
    pub gt: Option<CrackEdgeMap>,
}

fn flip_planes(planes: &mut [f32], width: usize) {
    for row in planes.chunks_mut(width) {
        row.reverse();
    }
}

fn photometric(planes: &mut [f32], hw: usize, p: &AugmentParams) {
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if p.brightness != 1.0 {
        let b = p.brightness as f32;
        planes.iter_mut().for_each(|v| *v = clamp(*v * b));
    }
    let luma = |planes: &[f32], i: usize| {
        0.299 * planes[i] + 0.587 * planes[hw + i] + 0.114 * planes[2 * hw + i]
    };
    if p.contrast != 1.0 {
        let mean = (0..hw).map(|i| luma(planes, i)).sum::<f32>() / hw as f32;
        let c = p.contrast as f32;
        planes
            .iter_mut()
            .for_each(|v| *v = clamp((*v - mean) * c + mean));
    }
    if p.saturation != 1.0 {
        let s = p.saturation as f32;
        for i in 0..hw {
            let g = luma(planes, i);
            for ch in 0..3 {
                let v = &mut planes[ch * hw + i];
                *v = clamp((*v - g) * s + g);
            }
        }
    }
    if p.hue != 0.0 {
        // rotate chroma in YIQ space
        let (sin, cos) = (std::f32::consts::TAU * p.hue as f32).sin_cos();
        for i in 0..hw {
            let (r, g, b) = (planes[i], planes[hw + i], planes[2 * hw + i]);
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            let ci = 0.596 * r - 0.274 * g - 0.322 * b;
            let cq = 0.211 * r - 0.523 * g + 0.312 * b;
            let (i2, q2) = (ci * cos - cq * sin, ci * sin + cq * cos);
            planes[i] = clamp(y + 0.956 * i2 + 0.621 * q2);
            planes[hw + i] = clamp(y - 0.272 * i2 - 0.647 * q2);
            planes[2 * hw + i] = clamp(y - 1.106 * i2 + 1.703 * q2);
        }
    }
}

/// Applies one transform set to both images; a flip also mirrors the ground
/// truth, photometric changes leave it untouched.
pub fn augment(pair: &FramePair, params: &AugmentParams) -> AugmentedPair {
    let (w, h) = (pair.reference.width(), pair.reference.height());
    let mut reference = pair.reference.to_rgb_planes();
    let mut deformed = pair.deformed.to_rgb_planes();
    let mut gt = pair.gt.clone();
    for planes in [&mut reference, &mut deformed] {
        if params.flip {
            flip_planes(planes, w);
        }
        photometric(planes, w * h, params);
    }
    if params.flip {
        gt = gt.map(|g| g.flip_horizontal());
    }
    AugmentedPair {
        width: w,
        height: h,
        reference,
        deformed,
        gt,
    }
}
