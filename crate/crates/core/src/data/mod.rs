//! Frame pairs, preprocessing, augmentation, noise injection and the
//! synthetic speckle generator.

mod augment;
mod manifest;
mod synth;

pub use augment::{augment, AugmentParams, AugmentationConfig, AugmentedPair};
pub use manifest::{read_flow, split, write_flow, DatasetManifest, ManifestEntry};
pub use synth::{desk_grid, synth_generate, CrackSpec, SynthFrame, SyntheticSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dic::{CrackEdgeMap, DicError};
use crate::image::{GrayImage, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("image {width}×{height} is smaller than {target}×{target}")]
    TooSmall {
        width: usize,
        height: usize,
        target: usize,
    },
    #[error("reference and deformed images differ in size")]
    PairMismatch,
    #[error("{path}: missing file")]
    Missing { path: String },
    #[error("{path}:{line}: {detail}")]
    Manifest {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("invalid split fractions: {0}")]
    Split(String),
    #[error("{path}: malformed flow file: {detail}")]
    Flow { path: String, detail: String },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dic(#[from] DicError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// One reference/deformed image pair with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub reference: GrayImage,
    pub deformed: GrayImage,
    pub gt: Option<CrackEdgeMap>,
    pub timestamp: f64,
    pub mm_per_px: f64,
}

/// Min-pools by the largest integer factor keeping both sides at least
/// `target`, then centre-crops to `target×target`.
pub fn preprocess(raw: &GrayImage, target: usize) -> Result<GrayImage, DataError> {
    let (w, h) = (raw.width(), raw.height());
    let factor = (w / target.max(1)).min(h / target.max(1));
    if target == 0 || factor == 0 {
        return Err(DataError::TooSmall {
            width: w,
            height: h,
            target,
        });
    }
    let (pw, ph) = (w / factor, h / factor);
    let (ox, oy) = ((pw - target) / 2, (ph - target) / 2);
    Ok(GrayImage::from_fn(target, target, |x, y| {
        let (bx, by) = ((x + ox) * factor, (y + oy) * factor);
        let mut m = u8::MAX;
        for yy in by..by + factor {
            for xx in bx..bx + factor {
                m = m.min(raw.get(xx, yy));
            }
        }
        m
    }))
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` gray levels,
/// rounding and clamping to [0, 255].
pub fn inject_noise(image: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let levels: Vec<f64> = image
        .pixels()
        .iter()
        .map(|&p| f64::from(p) + normal.sample(&mut rng))
        .collect();
    GrayImage::from_levels(image.width(), image.height(), &levels)
}
