use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, FramePair};
use crate::dic::CrackEdgeMap;
use crate::image::GrayImage;

/// One line of a manifest. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub frame_index: usize,
    pub reference: PathBuf,
    pub deformed: PathBuf,
    pub gt: Option<PathBuf>,
    pub timestamp: f64,
    pub mm_per_px: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            base_dir: base_dir.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Sorted sequence ids with their frame rate estimated from timestamps.
    pub fn frame_rates(&self) -> Vec<(String, Option<f64>)> {
        let mut ids: Vec<&String> = self.entries.iter().map(|e| &e.sequence_id).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                let ts: Vec<f64> = self
                    .entries
                    .iter()
                    .filter(|e| &e.sequence_id == id)
                    .map(|e| e.timestamp)
                    .collect();
                let rate = (ts.len() >= 2 && ts[ts.len() - 1] > ts[0])
                    .then(|| (ts.len() - 1) as f64 / (ts[ts.len() - 1] - ts[0]));
                (id.clone(), rate)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# sequence_id, frame_index, ref_path, def_path, gt_path|-, timestamp_s, mm_per_px\n");
        for e in &self.entries {
            let gt = e
                .gt
                .as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string());
            let _ = writeln!(
                s,
                "{}, {}, {}, {}, {}, {}, {}",
                e.sequence_id,
                e.frame_index,
                e.reference.display(),
                e.deformed.display(),
                gt,
                e.timestamp,
                e.mm_per_px
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parses a manifest and checks every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|_| DataError::Missing {
            path: path.display().to_string(),
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, base_dir, &path.display().to_string())?;
        for e in &manifest.entries {
            for p in [Some(&e.reference), Some(&e.deformed), e.gt.as_ref()]
                .into_iter()
                .flatten()
            {
                let full = manifest.resolve(p);
                if !full.is_file() {
                    return Err(DataError::Missing {
                        path: full.display().to_string(),
                    });
                }
            }
        }
        Ok(manifest)
    }

    pub fn parse(text: &str, base_dir: PathBuf, origin: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| DataError::Manifest {
                path: origin.to_string(),
                line: i + 1,
                detail,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", fields.len())));
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad {what} `{s}`")))
            };
            let frame_index = fields[1]
                .parse()
                .map_err(|_| err(format!("bad frame index `{}`", fields[1])))?;
            let timestamp = num(fields[5], "timestamp")?;
            if timestamp < 0.0 {
                return Err(err("negative timestamp".into()));
            }
            entries.push(ManifestEntry {
                sequence_id: fields[0].to_string(),
                frame_index,
                reference: PathBuf::from(fields[2]),
                deformed: PathBuf::from(fields[3]),
                gt: (fields[4] != "-").then(|| PathBuf::from(fields[4])),
                timestamp,
                mm_per_px: num(fields[6], "resolution")?,
            });
        }
        Ok(Self { base_dir, entries })
    }

    pub fn load_pair(&self, index: usize) -> Result<FramePair, DataError> {
        let e = &self.entries[index];
        let reference = GrayImage::read(&self.resolve(&e.reference))?;
        let deformed = GrayImage::read(&self.resolve(&e.deformed))?;
        if (reference.width(), reference.height()) != (deformed.width(), deformed.height()) {
            return Err(DataError::PairMismatch);
        }
        let gt = match &e.gt {
            Some(p) => {
                let img = GrayImage::read(&self.resolve(p))?;
                let scale = reference.width() as f64 / img.width() as f64;
                Some(CrackEdgeMap::from_image(&img, e.mm_per_px * scale))
            }
            None => None,
        };
        Ok(FramePair {
            reference,
            deformed,
            gt,
            timestamp: e.timestamp,
            mm_per_px: e.mm_per_px,
        })
    }

    /// Dense flow sidecar stored next to the deformed image, if present.
    pub fn flow_path(&self, index: usize) -> PathBuf {
        self.resolve(&self.entries[index].deformed).with_extension("flow")
    }
}

/// Seeded random partition at the frame-pair level. Each part keeps the
/// original entry order.
pub fn split(
    manifest: &DatasetManifest,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<DatasetManifest>, DataError> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!("{fractions:?} must be non-negative and sum to 1")));
    }
    let n = manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (i, &f) in fractions.iter().enumerate() {
        let count = if i + 1 == fractions.len() {
            n - start
        } else {
            ((f * n as f64).round() as usize).min(n - start)
        };
        let mut idx = order[start..start + count].to_vec();
        idx.sort_unstable();
        start += count;
        parts.push(DatasetManifest {
            base_dir: manifest.base_dir.clone(),
            entries: idx.into_iter().map(|j| manifest.entries[j].clone()).collect(),
        });
    }
    Ok(parts)
}

/// Writes `u` then `v` planes as little-endian f32 after a width/height header.
pub fn write_flow(path: &Path, width: usize, height: usize, flow: &[f32]) -> Result<(), DataError> {
    if flow.len() != 2 * width * height {
        return Err(DataError::Flow {
            path: path.display().to_string(),
            detail: format!("{} values for a {width}×{height} field", flow.len()),
        });
    }
    let mut buf = Vec::with_capacity(8 + 4 * flow.len());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for v in flow {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<(usize, usize, Vec<f32>), DataError> {
    let bytes = std::fs::read(path)?;
    let err = |detail: &str| DataError::Flow {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 {
        return Err(err("missing header"));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * w * h {
        return Err(err("payload length does not match header"));
    }
    let flow = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, flow))
}
