//! Rate coding: per-pixel event counts over one segment, and the three-channel
//! network input derived from them.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::event::{Polarity, SensorGeometry};
use crate::grid::Grid;
use crate::segment::EventSegment;

/// Which events contribute to a pixel's count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PolarityMode {
    #[default]
    Both,
    PositiveOnly,
    /// `|#on - #off|` per pixel.
    Signed,
}

impl FromStr for PolarityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(PolarityMode::Both),
            "positive" | "positive_only" => Ok(PolarityMode::PositiveOnly),
            "signed" => Ok(PolarityMode::Signed),
            _ => Err(format!(
                "unknown polarity mode {s:?} (both|positive|signed)"
            )),
        }
    }
}

impl fmt::Display for PolarityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolarityMode::Both => "both",
            PolarityMode::PositiveOnly => "positive",
            PolarityMode::Signed => "signed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateMap {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl RateMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: vec![0; width * height],
        }
    }

    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Self {
        assert_eq!(counts.len(), width * height);
        Self {
            width,
            height,
            counts,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Extracts a `width x height` window whose top-left corner is at
    /// `(x0, y0)` in map coordinates; cells outside the map read as zero.
    pub fn crop(&self, x0: i64, y0: i64, width: usize, height: usize) -> RateMap {
        let mut out = RateMap::zeros(width, height);
        for v in 0..height {
            let sy = y0 + v as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for u in 0..width {
                let sx = x0 + u as i64;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                out.counts[v * width + u] = self.get(sx as usize, sy as usize);
            }
        }
        out
    }

    /// Plain PGM (P2) dump, counts clamped to 0..=255.
    pub fn write_pgm<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "P2")?;
        writeln!(sink, "{} {}", self.width, self.height)?;
        writeln!(sink, "255")?;
        for row in self.counts.chunks_exact(self.width) {
            let line: Vec<String> = row.iter().map(|c| c.min(&255).to_string()).collect();
            writeln!(sink, "{}", line.join(" "))?;
        }
        sink.flush()
    }
}

/// Counts events per pixel; timing inside the segment is discarded.
pub fn encode(segment: &EventSegment<'_>, geometry: SensorGeometry, mode: PolarityMode) -> RateMap {
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    match mode {
        PolarityMode::Both | PolarityMode::PositiveOnly => {
            let mut map = RateMap::zeros(w, h);
            for e in segment.events {
                if mode == PolarityMode::PositiveOnly && e.p != Polarity::On {
                    continue;
                }
                map.counts[e.y as usize * w + e.x as usize] += 1;
            }
            map
        }
        PolarityMode::Signed => {
            let mut net = vec![0i64; w * h];
            for e in segment.events {
                net[e.y as usize * w + e.x as usize] += e.p.as_i8() as i64;
            }
            let counts = net.into_iter().map(|n| n.unsigned_abs() as u32).collect();
            RateMap::from_counts(w, h, counts)
        }
    }
}

/// Three identical channels scaled to `255 * count / max`, then each channel
/// shifted by `-means[c]`. An all-zero map stays zero before the shift.
pub fn to_input(map: &RateMap, means: [f64; 3]) -> Grid {
    let max = map.max();
    let scale = if max > 0 { 255.0 / max as f64 } else { 0.0 };
    let plane: Vec<f64> = map.counts.iter().map(|&c| c as f64 * scale).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for mean in means {
        data.extend(plane.iter().map(|v| v - mean));
    }
    Grid::from_vec(map.height, map.width, 3, data)
}
