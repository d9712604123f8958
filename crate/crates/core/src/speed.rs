//! Crack-front tracking and mean propagation speed.

use std::collections::VecDeque;
use std::io::Write;

use crate::dic::CrackEdgeMap;

#[derive(Debug, thiserror::Error)]
pub enum SpeedError {
    #[error("need at least two frames with a crack front, found {0}")]
    TooFewFronts(usize),
    #[error("timestamps must increase strictly (frame {0})")]
    Timestamps(usize),
    #[error("{maps} edge maps for {timestamps} timestamps")]
    Count { maps: usize, timestamps: usize },
    #[error("invalid spatial resolution {0} mm/px")]
    Resolution(f64),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Direction the crack grows in, seen in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Notch on the bottom edge (semi-circular bending).
    Up,
    Down,
    Left,
    Right,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "up" => Some(Self::Up),
            "down" => Some(Self::Down),
            "left" => Some(Self::Left),
            "right" => Some(Self::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
            Self::Left => "left",
            Self::Right => "right",
        }
    }

    /// Distance from the notch edge of pixel `(x, y)`.
    fn depth(self, x: usize, y: usize, width: usize, height: usize) -> usize {
        match self {
            Self::Up => height - 1 - y,
            Self::Down => y,
            Self::Left => width - 1 - x,
            Self::Right => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontConfig {
    pub axis: Axis,
    /// A component counts as notch-rooted when it comes within this many
    /// pixels of the notch edge.
    pub notch_band: usize,
}

impl Default for FrontConfig {
    fn default() -> Self {
        Self {
            axis: Axis::Up,
            notch_band: 4,
        }
    }
}

/// Tip of the notch-rooted crack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Front {
    /// Pixels advanced from the notch edge along the axis.
    pub depth: f64,
    /// Tip location (mean over the tip pixels), `(x, y)`.
    pub point: (f64, f64),
}

/// Deepest pixel of the 8-connected components that touch the notch band.
/// `None` means no crack yet.
pub fn extract_front(map: &CrackEdgeMap, cfg: &FrontConfig) -> Option<Front> {
    let (w, h) = (map.width, map.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if map.get(x, y) && cfg.axis.depth(x, y, w, h) <= cfg.notch_band {
                seen[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    let mut rooted = Vec::new();
    while let Some((x, y)) = queue.pop_front() {
        rooted.push((x, y));
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !seen[ny * w + nx] && map.get(nx, ny) {
                    seen[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let deepest = rooted.iter().map(|&(x, y)| cfg.axis.depth(x, y, w, h)).max()?;
    let tip: Vec<_> = rooted
        .iter()
        .filter(|&&(x, y)| cfg.axis.depth(x, y, w, h) == deepest)
        .collect();
    let n = tip.len() as f64;
    let point = (
        tip.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        tip.iter().map(|p| p.1 as f64).sum::<f64>() / n,
    );
    Some(Front {
        depth: deepest as f64,
        point,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrackFrontTrace {
    pub fronts: Vec<Option<Front>>,
    pub timestamps: Vec<f64>,
    pub mm_per_px: f64,
    pub axis: Axis,
}

impl CrackFrontTrace {
    pub fn from_maps(maps: &[CrackEdgeMap], timestamps: &[f64], cfg: &FrontConfig) -> Result<Self, SpeedError> {
        if maps.len() != timestamps.len() {
            return Err(SpeedError::Count {
                maps: maps.len(),
                timestamps: timestamps.len(),
            });
        }
        Ok(Self {
            fronts: maps.iter().map(|m| extract_front(m, cfg)).collect(),
            timestamps: timestamps.to_vec(),
            mm_per_px: maps.first().map_or(0.0, |m| m.mm_per_px),
            axis: cfg.axis,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub from: usize,
    pub to: usize,
    /// Arc length between the two tips, mm.
    pub length_mm: f64,
    /// Signed: negative when the front moved back toward the notch.
    pub speed_mm_s: f64,
    pub regression: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedReport {
    /// Path-length-weighted mean of the interval speeds, mm/s.
    pub mean_mm_s: f64,
    pub path_mm: f64,
    pub intervals: Vec<Interval>,
    pub regressions: usize,
    trace: CrackFrontTrace,
}

/// Axis retreat (px) tolerated before an interval is flagged.
pub const REGRESSION_TOLERANCE_PX: f64 = 1.0;

pub fn compute_speed(trace: &CrackFrontTrace) -> Result<SpeedReport, SpeedError> {
    if !(trace.mm_per_px.is_finite() && trace.mm_per_px > 0.0) {
        return Err(SpeedError::Resolution(trace.mm_per_px));
    }
    if trace.fronts.len() != trace.timestamps.len() {
        return Err(SpeedError::Count {
            maps: trace.fronts.len(),
            timestamps: trace.timestamps.len(),
        });
    }
    if let Some(i) = (1..trace.timestamps.len()).find(|&i| trace.timestamps[i] <= trace.timestamps[i - 1]) {
        return Err(SpeedError::Timestamps(i));
    }
    let tracked: Vec<(usize, Front)> = trace
        .fronts
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|f| (i, f)))
        .collect();
    if tracked.len() < 2 {
        return Err(SpeedError::TooFewFronts(tracked.len()));
    }
    let intervals: Vec<Interval> = tracked
        .windows(2)
        .map(|w| {
            let ((i, a), (j, b)) = (w[0], w[1]);
            let arc = (b.point.0 - a.point.0).hypot(b.point.1 - a.point.1);
            let advance = b.depth - a.depth;
            let length_mm = arc * trace.mm_per_px;
            let dt = trace.timestamps[j] - trace.timestamps[i];
            Interval {
                from: i,
                to: j,
                length_mm,
                speed_mm_s: length_mm / dt * if advance < 0.0 { -1.0 } else { 1.0 },
                regression: advance < -REGRESSION_TOLERANCE_PX,
            }
        })
        .collect();
    let path_mm: f64 = intervals.iter().map(|s| s.length_mm).sum();
    let mean_mm_s = if path_mm > 0.0 {
        intervals.iter().map(|s| s.length_mm * s.speed_mm_s).sum::<f64>() / path_mm
    } else {
        0.0
    };
    Ok(SpeedReport {
        mean_mm_s,
        path_mm,
        regressions: intervals.iter().filter(|s| s.regression).count(),
        intervals,
        trace: trace.clone(),
    })
}

impl SpeedReport {
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frame, t_s, front_px, interval_mm_s")?;
        for (i, (f, t)) in self.trace.fronts.iter().zip(&self.trace.timestamps).enumerate() {
            let front = f.map_or("-".to_string(), |f| format!("{:.3}", f.depth));
            let speed = self
                .intervals
                .iter()
                .find(|s| s.to == i)
                .map_or("-".to_string(), |s| format!("{:.6}", s.speed_mm_s));
            writeln!(out, "{i}, {t:.6}, {front}, {speed}")?;
        }
        writeln!(
            out,
            "mean_mm_s {:.6} path_mm {:.6} axis {} regressions {}",
            self.mean_mm_s,
            self.path_mm,
            self.trace.axis.name(),
            self.regressions
        )
    }
}
