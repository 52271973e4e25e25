//! Segment-by-segment tracking with per-layer correlation filters.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::cf::{
    detect_with, fuse_responses, make_label, train_filter_with, CfError, CfParams, FilterModel,
    GaussianLabel, LayerFilter, WeightedResponse,
};
use crate::event::{BBox, EventError, EventStream, GroundTruthEntry, SensorGeometry};
use crate::features::{forward, raw_feature, FeatureStack, NetworkError, NetworkSpec, RAW_TAP};
use crate::fft2::Fft2;
use crate::grid::Grid;
use crate::rate::{encode, to_input, PolarityMode, RateMap};
use crate::segment::{segment, SegmentError, SegmentationPolicy};

pub const TRAJ_HEADER: &str = "# evtrack-traj v1";

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("initial box {bbox:?} invalid: {reason}")]
    InitOutOfBounds { bbox: BBox, reason: &'static str },
    #[error("tap {0:?} needs a network but none was supplied")]
    MissingNetwork(String),
    #[error("invalid tracking parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Filter(#[from] CfError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackParams {
    /// `raw` and/or network layer names.
    pub taps: Vec<String>,
    /// Per-tap fusion weights; equal weights when `None`.
    pub fusion_weights: Option<Vec<f64>>,
    pub cf: CfParams,
    /// Online learning rate for the running filter average.
    pub eta: f64,
    /// Label width as a fraction of `sqrt(w * h)` of the target box.
    pub sigma_factor: f64,
    /// Search window size relative to the target box.
    pub padding: f64,
    pub polarity: PolarityMode,
    /// Hold position and skip the update when the search window holds fewer
    /// than this fraction of the running mean window event count. `0` disables.
    pub min_evidence: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            taps: vec!["conv1_1".into(), "conv2_2".into(), "conv3_3".into()],
            fusion_weights: None,
            cf: CfParams::default(),
            eta: 0.01,
            sigma_factor: 0.1,
            padding: 2.0,
            polarity: PolarityMode::Both,
            min_evidence: 0.25,
        }
    }
}

impl TrackParams {
    pub fn with_taps(taps: &[&str]) -> Self {
        Self {
            taps: taps.iter().map(|t| t.to_string()).collect(),
            ..Self::default()
        }
    }

    fn validate(&self, network: Option<&NetworkSpec>) -> Result<Vec<f64>, TrackError> {
        let bad = |m: String| Err(TrackError::InvalidParams(m));
        if self.taps.is_empty() {
            return bad("at least one tap is required".into());
        }
        for (i, t) in self.taps.iter().enumerate() {
            if self.taps[..i].contains(t) {
                return bad(format!("tap {t:?} listed twice"));
            }
            if t != RAW_TAP {
                match network {
                    None => return Err(TrackError::MissingNetwork(t.clone())),
                    Some(net) if net.factor_of(t).is_none() => {
                        return Err(NetworkError::UnknownTap(t.clone()).into())
                    }
                    Some(_) => {}
                }
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta {} outside [0, 1]", self.eta));
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return bad(format!(
                "sigma factor {} must be positive",
                self.sigma_factor
            ));
        }
        if !(self.padding >= 1.0 && self.padding.is_finite()) {
            return bad(format!("padding {} must be >= 1", self.padding));
        }
        if !(self.cf.lambda >= 0.0) {
            return bad(format!("lambda {} must be >= 0", self.cf.lambda));
        }
        if !(self.min_evidence >= 0.0) {
            return bad("min evidence must be >= 0".into());
        }
        let weights = match &self.fusion_weights {
            Some(w) if w.len() != self.taps.len() => {
                return bad(format!(
                    "{} fusion weights for {} taps",
                    w.len(),
                    self.taps.len()
                ))
            }
            Some(w) => w.clone(),
            None => vec![1.0; self.taps.len()],
        };
        if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
            return bad("fusion weights must be >= 0 and not all zero".into());
        }
        Ok(weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub segment: usize,
    pub center: (f64, f64),
    pub bbox: BBox,
}

struct TapState {
    name: String,
    factor: usize,
    fft: Fft2,
    label: GaussianLabel,
}

/// Tracker state for one target. Position is an integer pixel corner; the
/// target size is fixed for the whole run.
pub struct Tracker<'n> {
    geometry: SensorGeometry,
    params: TrackParams,
    network: Option<&'n NetworkSpec>,
    weights: Vec<f64>,
    center: (i64, i64),
    size: (i64, i64),
    window: (usize, usize),
    taps: Vec<TapState>,
    model: Option<FilterModel>,
    evidence: Option<f64>,
    segments_seen: usize,
}

impl<'n> Tracker<'n> {
    pub fn new(
        geometry: SensorGeometry,
        init: BBox,
        params: TrackParams,
        network: Option<&'n NetworkSpec>,
    ) -> Result<Self, TrackError> {
        init.validate(geometry)
            .map_err(|reason| TrackError::InitOutOfBounds { bbox: init, reason })?;
        let weights = params.validate(network)?;
        let ww = ((params.padding * init.w as f64).round() as usize).max(1);
        let wh = ((params.padding * init.h as f64).round() as usize).max(1);
        let sigma_px = params.sigma_factor * ((init.w * init.h) as f64).sqrt();
        let mut taps = Vec::with_capacity(params.taps.len());
        for name in &params.taps {
            let factor = if name == RAW_TAP {
                1
            } else {
                network.and_then(|n| n.factor_of(name)).unwrap_or(1)
            };
            let (fh, fw) = (wh.div_ceil(factor), ww.div_ceil(factor));
            taps.push(TapState {
                name: name.clone(),
                factor,
                fft: Fft2::new(fh, fw),
                label: make_label(fh, fw, sigma_px / factor as f64),
            });
        }
        Ok(Self {
            geometry,
            params,
            network,
            weights,
            center: (init.x + init.w / 2, init.y + init.h / 2),
            size: (init.w, init.h),
            window: (ww, wh),
            taps,
            model: None,
            evidence: None,
            segments_seen: 0,
        })
    }

    pub fn center(&self) -> (i64, i64) {
        self.center
    }

    pub fn model(&self) -> Option<&FilterModel> {
        self.model.as_ref()
    }

    fn crop(&self, map: &RateMap, center: (i64, i64)) -> RateMap {
        let (ww, wh) = self.window;
        map.crop(
            center.0 - (ww / 2) as i64,
            center.1 - (wh / 2) as i64,
            ww,
            wh,
        )
    }

    /// Unit-energy feature grids for every tap, in tap order.
    fn features(&self, window: &RateMap) -> Result<Vec<Grid>, TrackError> {
        let conv_taps: Vec<&str> = self
            .taps
            .iter()
            .filter(|t| t.name != RAW_TAP)
            .map(|t| t.name.as_str())
            .collect();
        let mut conv: Vec<FeatureStack> = match (conv_taps.is_empty(), self.network) {
            (true, _) => Vec::new(),
            (false, Some(net)) => forward(&to_input(window, net.input_means()), net, &conv_taps)?,
            (false, None) => return Err(TrackError::MissingNetwork(conv_taps[0].to_string())),
        };
        conv.reverse();
        let mut out = Vec::with_capacity(self.taps.len());
        for tap in &self.taps {
            let stack = if tap.name == RAW_TAP {
                raw_feature(window)
            } else {
                conv.pop().expect("one stack per conv tap")
            };
            let mut grid = stack.grid;
            let norm = grid.norm();
            if norm > 0.0 {
                grid.scale(1.0 / norm);
            }
            out.push(grid);
        }
        Ok(out)
    }

    fn train(&self, features: &[Grid]) -> Result<Vec<LayerFilter>, TrackError> {
        self.taps
            .iter()
            .zip(features)
            .map(|(tap, f)| Ok(train_filter_with(&tap.fft, f, &tap.label, &self.params.cf)?))
            .collect()
    }

    fn tap_names(&self) -> Vec<String> {
        self.taps.iter().map(|t| t.name.clone()).collect()
    }

    /// Pixel displacement of the fused response peak from the window center.
    fn locate(&self, model: &FilterModel, features: &[Grid]) -> Result<(i64, i64), TrackError> {
        let responses = self
            .taps
            .iter()
            .zip(&model.filters)
            .zip(features)
            .map(|((tap, filter), f)| detect_with(&tap.fft, filter, f))
            .collect::<Result<Vec<_>, _>>()?;
        let weighted: Vec<WeightedResponse> = responses
            .iter()
            .zip(&self.taps)
            .zip(&self.weights)
            .map(|((r, tap), &weight)| WeightedResponse {
                response: r,
                factor: tap.factor,
                weight,
            })
            .collect();
        let (ww, wh) = self.window;
        let fused = fuse_responses(&weighted, wh, ww)?;
        let (row, col) = fused.argmax();
        Ok((col as i64 - (ww / 2) as i64, row as i64 - (wh / 2) as i64))
    }

    fn clamp(&self, (x, y): (i64, i64)) -> (i64, i64) {
        (
            x.clamp(0, self.geometry.width as i64 - 1),
            y.clamp(0, self.geometry.height as i64 - 1),
        )
    }

    fn point(&self, segment: usize) -> TrackPoint {
        let (cx, cy) = self.center;
        let (w, h) = self.size;
        let bbox = BBox::new(cx - w / 2, cy - h / 2, w, h);
        TrackPoint {
            segment,
            center: bbox.center(),
            bbox,
        }
    }

    /// Consumes one segment's rate map and returns the new estimate.
    pub fn step(&mut self, map: &RateMap) -> Result<TrackPoint, TrackError> {
        let index = self.segments_seen;
        self.segments_seen += 1;
        let window = self.crop(map, self.center);
        let mass = window.total() as f64;
        if mass == 0.0 {
            return Ok(self.point(index));
        }
        let Some(model) = self.model.as_ref() else {
            let features = self.features(&window)?;
            let filters = self.train(&features)?;
            self.model = Some(FilterModel::new(
                self.tap_names(),
                filters,
                self.weights.clone(),
                self.params.eta,
            )?);
            self.evidence = Some(mass);
            return Ok(self.point(index));
        };
        if let Some(reference) = self.evidence {
            if mass < self.params.min_evidence * reference {
                return Ok(self.point(index));
            }
        }
        let features = self.features(&window)?;
        let (dx, dy) = self.locate(model, &features)?;
        let next = self.clamp((self.center.0 + dx, self.center.1 + dy));
        let features = if next == self.center {
            features
        } else {
            self.features(&self.crop(map, next))?
        };
        self.center = next;
        let filters = self.train(&features)?;
        let names = self.tap_names();
        let eta = self.params.eta;
        if let Some(model) = self.model.as_mut() {
            model.update(&names, &filters, eta)?;
        }
        self.evidence = self.evidence.map(|e| 0.9 * e + 0.1 * mass);
        Ok(self.point(index))
    }
}

/// Tracks the target through every segment of `stream`, starting from the
/// ground-truth box of segment 0.
pub fn track(
    stream: &EventStream,
    policy: SegmentationPolicy,
    init: &GroundTruthEntry,
    params: &TrackParams,
    network: Option<&NetworkSpec>,
) -> Result<Vec<TrackPoint>, TrackError> {
    let geometry = stream.geometry();
    let mut tracker = Tracker::new(geometry, init.bbox, params.clone(), network)?;
    let segments = segment(stream, policy)?;
    let mut out = Vec::with_capacity(segments.len());
    for seg in &segments {
        let map = encode(seg, geometry, params.polarity);
        let mut p = tracker.step(&map)?;
        p.segment = seg.index;
        out.push(p);
    }
    Ok(out)
}

pub fn write_trajectory<W: Write>(points: &[TrackPoint], mut sink: W) -> io::Result<()> {
    writeln!(sink, "{TRAJ_HEADER}")?;
    for p in points {
        let b = p.bbox;
        writeln!(
            sink,
            "{},{},{},{},{},{},{}",
            p.segment, p.center.0, p.center.1, b.x, b.y, b.w, b.h
        )?;
    }
    sink.flush()
}

pub fn read_trajectory<R: BufRead>(source: R) -> Result<Vec<TrackPoint>, EventError> {
    let malformed = |line: usize, reason: String| EventError::MalformedLine { line, reason };
    let mut lines = source.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).transpose()?;
    if first.as_deref().map(|l| l.trim_end_matches('\r')) != Some(TRAJ_HEADER) {
        return Err(malformed(1, format!("expected header {TRAJ_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (idx, text) in lines {
        let text = text?;
        let line = idx + 1;
        let text = text.trim_end_matches('\r');
        if text.is_empty() {
            continue;
        }
        let f: Vec<&str> = text.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(malformed(
                line,
                format!("expected 7 fields, found {}", f.len()),
            ));
        }
        let segment: usize = f[0]
            .parse()
            .map_err(|e| malformed(line, format!("segment {:?}: {e}", f[0])))?;
        let real = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("bad number {s:?}")))
        };
        let int = |s: &str| {
            s.parse::<i64>()
                .map_err(|e| malformed(line, format!("bad integer {s:?}: {e}")))
        };
        out.push(TrackPoint {
            segment,
            center: (real(f[1])?, real(f[2])?),
            bbox: BBox::new(int(f[3])?, int(f[4])?, int(f[5])?, int(f[6])?),
        });
    }
    Ok(out)
}
