//! Accuracy and throughput measurement.

use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::event::{BBox, EventStream, GroundTruthEntry};
use crate::features::NetworkSpec;
use crate::rate::encode;
use crate::segment::{segment, SegmentationPolicy};
use crate::tracker::{track, TrackError, TrackParams, TrackPoint};

/// Thresholds of the precision curve, in pixels.
pub const PRECISION_THRESHOLDS: std::ops::RangeInclusive<u32> = 1..=50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("segment indices differ at position {position}: trajectory {found}, ground truth {expected}")]
    IndexMismatch {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("trajectory has {found} entries, ground truth has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("repeated runs of {0:?} produced different trajectories")]
    Nondeterministic(Vec<String>),
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleReport {
    pub segments: Vec<usize>,
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Fraction of segments with error <= tau for tau = 1..=50.
    pub precision: Vec<f64>,
}

impl CleReport {
    /// Precision at an integer pixel threshold in 1..=50.
    pub fn precision_at(&self, tau: u32) -> Option<f64> {
        if PRECISION_THRESHOLDS.contains(&tau) {
            Some(self.precision[(tau - 1) as usize])
        } else {
            None
        }
    }

    pub fn write_per_segment<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "segment,cle")?;
        for (s, e) in self.segments.iter().zip(&self.errors) {
            writeln!(sink, "{s},{e}")?;
        }
        sink.flush()
    }

    pub fn write_precision_curve<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "threshold,precision")?;
        for (tau, p) in PRECISION_THRESHOLDS.zip(&self.precision) {
            writeln!(sink, "{tau},{p}")?;
        }
        sink.flush()
    }

    pub fn write_summary<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "segments={}", self.errors.len())?;
        writeln!(sink, "mean_cle={}", self.mean)?;
        writeln!(sink, "precision@20={}", self.precision[19])?;
        sink.flush()
    }
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Per-segment Euclidean distance between box centers, matched by segment
/// index.
pub fn center_location_error(
    predicted: &[GroundTruthEntry],
    truth: &[GroundTruthEntry],
) -> Result<CleReport, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut errors = Vec::with_capacity(truth.len());
    for (position, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if p.segment != t.segment {
            return Err(EvalError::IndexMismatch {
                position,
                expected: t.segment,
                found: p.segment,
            });
        }
        errors.push(center_distance(&p.bbox, &t.bbox));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let precision = PRECISION_THRESHOLDS
        .map(|tau| errors.iter().filter(|&&e| e <= tau as f64).count() as f64 / n)
        .collect();
    Ok(CleReport {
        segments: truth.iter().map(|t| t.segment).collect(),
        errors,
        mean,
        precision,
    })
}

pub fn trajectory_boxes(points: &[TrackPoint]) -> Vec<GroundTruthEntry> {
    points
        .iter()
        .map(|p| GroundTruthEntry {
            segment: p.segment,
            bbox: p.bbox,
            occluded: false,
        })
        .collect()
}

/// Reference tracker that follows the event centroid inside a fixed-size
/// search window around the previous estimate.
pub fn centroid_tracker(
    stream: &EventStream,
    policy: SegmentationPolicy,
    init: &BBox,
    padding: f64,
) -> Result<Vec<TrackPoint>, TrackError> {
    let geometry = stream.geometry();
    init.validate(geometry)
        .map_err(|reason| TrackError::InitOutOfBounds {
            bbox: *init,
            reason,
        })?;
    let (w, h) = (init.w, init.h);
    let (ww, wh) = (
        (padding * w as f64).round() as i64,
        (padding * h as f64).round() as i64,
    );
    let mut center = (init.x + w / 2, init.y + h / 2);
    let mut out = Vec::new();
    for (i, seg) in segment(stream, policy)?.iter().enumerate() {
        if i > 0 {
            let map = encode(seg, geometry, Default::default());
            let window = map.crop(
                center.0 - ww / 2,
                center.1 - wh / 2,
                ww as usize,
                wh as usize,
            );
            let total = window.total() as f64;
            if total > 0.0 {
                let (mut sx, mut sy) = (0.0, 0.0);
                for y in 0..window.height() {
                    for x in 0..window.width() {
                        let c = window.get(x, y) as f64;
                        sx += c * x as f64;
                        sy += c * y as f64;
                    }
                }
                center = (
                    center.0 - ww / 2 + (sx / total).round() as i64,
                    center.1 - wh / 2 + (sy / total).round() as i64,
                );
            }
        }
        let bbox = BBox::new(center.0 - w / 2, center.1 - h / 2, w, h);
        out.push(TrackPoint {
            segment: seg.index,
            center: bbox.center(),
            bbox,
        });
    }
    Ok(out)
}

/// One tap configuration to time.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub label: String,
    pub params: TrackParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub label: String,
    pub taps: Vec<String>,
    pub segments: usize,
    pub median_seconds: f64,
    pub segments_per_second: f64,
}

/// Median wall time over `reps` runs of the full tracking loop for every
/// configuration. Repeated runs must agree exactly.
pub fn bench(
    stream: &EventStream,
    policy: SegmentationPolicy,
    init: &GroundTruthEntry,
    configs: &[BenchConfig],
    network: Option<&NetworkSpec>,
    reps: usize,
) -> Result<Vec<BenchResult>, EvalError> {
    if reps == 0 {
        return Err(EvalError::ZeroRepetitions);
    }
    let mut results = Vec::with_capacity(configs.len());
    for config in configs {
        let mut times = Vec::with_capacity(reps);
        let mut first: Option<Vec<TrackPoint>> = None;
        for _ in 0..reps {
            let started = Instant::now();
            let traj = track(stream, policy, init, &config.params, network)?;
            times.push(started.elapsed().as_secs_f64());
            match &first {
                None => first = Some(traj),
                Some(f) if *f != traj => {
                    return Err(EvalError::Nondeterministic(config.params.taps.clone()))
                }
                Some(_) => {}
            }
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median = if times.len() % 2 == 1 {
            times[mid]
        } else {
            0.5 * (times[mid - 1] + times[mid])
        };
        let segments = first.map_or(0, |f| f.len());
        results.push(BenchResult {
            label: config.label.clone(),
            taps: config.params.taps.clone(),
            segments,
            median_seconds: median,
            segments_per_second: if median > 0.0 {
                segments as f64 / median
            } else {
                f64::INFINITY
            },
        });
    }
    Ok(results)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_bench<W: Write>(results: &[BenchResult], mut sink: W) -> io::Result<()> {
    writeln!(sink, "config,taps,segments,median_seconds,segments_per_sec")?;
    for r in results {
        writeln!(
            sink,
            "{},{},{},{:.6},{:.3}",
            csv_field(&r.label),
            r.taps.join("+"),
            r.segments,
            r.median_seconds,
            r.segments_per_second
        )?;
    }
    sink.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(segment: usize, x: i64, y: i64) -> GroundTruthEntry {
        GroundTruthEntry {
            segment,
            bbox: BBox::new(x, y, 10, 10),
            occluded: false,
        }
    }

    #[test]
    fn three_four_five() {
        let report = center_location_error(&[entry(0, 13, 24)], &[entry(0, 10, 20)]).unwrap();
        assert_eq!(report.errors, vec![5.0]);
        assert_eq!(report.mean, 5.0);
        assert_eq!(report.precision_at(4), Some(0.0));
        assert_eq!(report.precision_at(5), Some(1.0));
        assert_eq!(report.precision_at(51), None);
    }

    #[test]
    fn precision_is_fraction_within_threshold() {
        let truth: Vec<_> = (0..4).map(|i| entry(i, 0, 0)).collect();
        let pred = vec![
            entry(0, 0, 0),
            entry(1, 3, 0),
            entry(2, 0, 25),
            entry(3, 60, 0),
        ];
        let r = center_location_error(&pred, &truth).unwrap();
        assert_eq!(r.mean, (0.0 + 3.0 + 25.0 + 60.0) / 4.0);
        assert_eq!(r.precision_at(20), Some(0.5));
        assert_eq!(r.precision_at(25), Some(0.75));
        assert_eq!(r.precision_at(50), Some(0.75));
    }

    #[test]
    fn mismatches_are_rejected() {
        let truth = vec![entry(0, 0, 0), entry(1, 0, 0)];
        assert!(matches!(
            center_location_error(&[entry(0, 0, 0), entry(2, 0, 0)], &truth),
            Err(EvalError::IndexMismatch {
                position: 1,
                expected: 1,
                found: 2
            })
        ));
        assert!(matches!(
            center_location_error(&[entry(0, 0, 0)], &truth),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            center_location_error(&[], &[]),
            Err(EvalError::Empty)
        ));
    }

    #[test]
    fn summary_format() {
        let r = center_location_error(&[entry(0, 13, 24)], &[entry(0, 10, 20)]).unwrap();
        let mut buf = Vec::new();
        r.write_summary(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "segments=1\nmean_cle=5\nprecision@20=1\n"
        );
    }
}
