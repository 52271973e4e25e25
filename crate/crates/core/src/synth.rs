//! Deterministic synthetic event scenes with ground truth.
//!
//! Pixel `(x, y)` covers the unit square `[x, x+1) x [y, y+1)` and is sampled
//! at its center. Object geometry is a signed distance `d` (negative inside).
//! Time is stepped in `step_us` increments; a pixel emits events during a step
//! when the object boundary lies within one pixel of it for the whole step and
//! the boundary moves across it (normal speed of at least `MIN_EDGE_SPEED`).
//! Emission is Poisson with `object_rate` events per second. A pixel entering
//! the object (leading edge) fires `+1`, one being left (trailing edge) `-1`.
//! A static scene therefore emits nothing but noise.
//!
//! Background noise is a homogeneous Poisson process over the sensor and the
//! whole duration, with fair-coin polarity.
//!
//! Ground-truth boxes are clamped to the sensor when the object is partly
//! outside it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::event::{BBox, Event, EventStream, GroundTruthEntry, Polarity, SensorGeometry};
use crate::segment::{EventSegment, SegmentationPolicy};

/// Boundary normal speed (px/s) below which a pixel does not fire.
pub const MIN_EDGE_SPEED: f64 = 1.0;
/// Distance from the boundary (px) within which a pixel may fire.
pub const EDGE_BAND: f64 = 1.0;
const BAND_MARGIN: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("target center ({x:.2}, {y:.2}) leaves the sensor at t = {t_us} us")]
    PathOutOfBounds { t_us: u64, x: f64, y: f64 },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disk { radius: f64 },
    Rectangle { half_width: f64, half_height: f64 },
    Ring { outer: f64, inner: f64 },
}

impl Shape {
    fn signed_distance(&self, qx: f64, qy: f64, scale: f64) -> f64 {
        match *self {
            Shape::Disk { radius } => qx.hypot(qy) - radius * scale,
            Shape::Ring { outer, inner } => {
                let r = qx.hypot(qy);
                (r - outer * scale).max(inner * scale - r)
            }
            Shape::Rectangle {
                half_width,
                half_height,
            } => {
                let dx = qx.abs() - half_width * scale;
                let dy = qy.abs() - half_height * scale;
                let outside = dx.max(0.0).hypot(dy.max(0.0));
                outside + dx.max(dy).min(0.0)
            }
        }
    }

    /// Half extents of the axis-aligned box around the shape rotated by `angle`.
    fn half_extent(&self, scale: f64, angle: f64) -> (f64, f64) {
        match *self {
            Shape::Disk { radius } => (radius * scale, radius * scale),
            Shape::Ring { outer, .. } => (outer * scale, outer * scale),
            Shape::Rectangle {
                half_width,
                half_height,
            } => {
                let (s, c) = angle.sin_cos();
                let (a, b) = (half_width * scale, half_height * scale);
                (a * c.abs() + b * s.abs(), a * s.abs() + b * c.abs())
            }
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let ok = match *self {
            Shape::Disk { radius } => radius > 0.0,
            Shape::Rectangle {
                half_width,
                half_height,
            } => half_width > 0.0 && half_height > 0.0,
            Shape::Ring { outer, inner } => inner > 0.0 && outer > inner,
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Invalid(format!("degenerate shape {self:?}")))
        }
    }
}

/// Center trajectory, positions in pixels, speeds in px/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MotionPath {
    Linear {
        start: (f64, f64),
        velocity: (f64, f64),
    },
    /// Counter-clockwise (in image coordinates) from angle `phase`.
    Circular {
        center: (f64, f64),
        radius: f64,
        speed: f64,
        phase: f64,
    },
    /// Drift along `velocity` with a sinusoidal offset perpendicular to it.
    Sinusoidal {
        start: (f64, f64),
        velocity: (f64, f64),
        amplitude: f64,
        wavelength: f64,
    },
}

impl MotionPath {
    pub fn position(&self, t_s: f64) -> (f64, f64) {
        match *self {
            MotionPath::Linear { start, velocity } => {
                (start.0 + velocity.0 * t_s, start.1 + velocity.1 * t_s)
            }
            MotionPath::Circular {
                center,
                radius,
                speed,
                phase,
            } => {
                let angle = phase + speed * t_s / radius;
                (
                    center.0 + radius * angle.cos(),
                    center.1 + radius * angle.sin(),
                )
            }
            MotionPath::Sinusoidal {
                start,
                velocity,
                amplitude,
                wavelength,
            } => {
                let speed = velocity.0.hypot(velocity.1);
                let (nx, ny) = if speed > 0.0 {
                    (-velocity.1 / speed, velocity.0 / speed)
                } else {
                    (0.0, 0.0)
                };
                let off = amplitude * (2.0 * PI * speed * t_s / wavelength).sin();
                (
                    start.0 + velocity.0 * t_s + nx * off,
                    start.1 + velocity.1 * t_s + ny * off,
                )
            }
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let ok = match *self {
            MotionPath::Linear { .. } => true,
            MotionPath::Circular { radius, .. } => radius > 0.0,
            MotionPath::Sinusoidal { wavelength, .. } => wavelength > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Invalid(format!("degenerate path {self:?}")))
        }
    }
}

/// One moving object. Its size is multiplied by
/// `(1 + growth * t) * (1 + pulse_amplitude * sin(2πt / pulse_period))`
/// and it rotates at `spin` rad/s about its center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub path: MotionPath,
    /// Relative size change per second.
    pub growth: f64,
    pub pulse_amplitude: f64,
    pub pulse_period_us: f64,
    /// Radians per second.
    pub spin: f64,
}

impl ObjectSpec {
    pub fn new(shape: Shape, path: MotionPath) -> Self {
        Self {
            shape,
            path,
            growth: 0.0,
            pulse_amplitude: 0.0,
            pulse_period_us: 1.0,
            spin: 0.0,
        }
    }

    pub fn scale(&self, t_us: f64) -> f64 {
        let t_s = t_us * 1e-6;
        let pulse = if self.pulse_amplitude != 0.0 {
            1.0 + self.pulse_amplitude * (2.0 * PI * t_us / self.pulse_period_us).sin()
        } else {
            1.0
        };
        (1.0 + self.growth * t_s) * pulse
    }

    pub fn center(&self, t_us: f64) -> (f64, f64) {
        self.path.position(t_us * 1e-6)
    }

    /// Signed distance (px) from point `(px, py)` to the boundary at `t_us`.
    pub fn signed_distance(&self, px: f64, py: f64, t_us: f64) -> f64 {
        let (cx, cy) = self.center(t_us);
        let angle = self.spin * t_us * 1e-6;
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (px - cx, py - cy);
        let (qx, qy) = (c * dx + s * dy, -s * dx + c * dy);
        self.shape.signed_distance(qx, qy, self.scale(t_us))
    }

    /// Continuous axis-aligned bounds `(x0, y0, x1, y1)` at `t_us`.
    pub fn bounds(&self, t_us: f64) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center(t_us);
        let (hx, hy) = self
            .shape
            .half_extent(self.scale(t_us), self.spin * t_us * 1e-6);
        (cx - hx, cy - hy, cx + hx, cy + hy)
    }

    fn validate(&self) -> Result<(), SceneError> {
        self.shape.validate()?;
        self.path.validate()?;
        if self.pulse_amplitude != 0.0
            && !(self.pulse_amplitude.abs() < 1.0 && self.pulse_period_us > 0.0)
        {
            return Err(SceneError::Invalid(
                "pulse amplitude must be in (-1, 1) with a positive period".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub duration_us: u64,
    pub target: ObjectSpec,
    /// Untracked moving objects (decoys, background texture).
    pub distractors: Vec<ObjectSpec>,
    /// Events per boundary pixel per second while the boundary sweeps it.
    pub object_rate: f64,
    /// Uniform background events per second over the whole sensor.
    pub noise_rate: f64,
    /// Half-open interval during which the target emits nothing.
    pub occlusion: Option<(u64, u64)>,
    pub step_us: u64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(geometry: SensorGeometry, duration_us: u64, target: ObjectSpec) -> Self {
        Self {
            geometry,
            duration_us,
            target,
            distractors: Vec::new(),
            object_rate: 300.0,
            noise_rate: 0.0,
            occlusion: None,
            step_us: 250,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.object_rate >= 0.0 && self.object_rate.is_finite()) {
            return Err(SceneError::Invalid("object rate must be >= 0".into()));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(SceneError::Invalid("noise rate must be >= 0".into()));
        }
        if self.step_us == 0 {
            return Err(SceneError::Invalid("step must be at least 1 us".into()));
        }
        if let Some((a, b)) = self.occlusion {
            if a > b {
                return Err(SceneError::Invalid("occlusion interval is reversed".into()));
            }
        }
        self.target.validate()?;
        for d in &self.distractors {
            d.validate()?;
        }
        let (w, h) = (self.geometry.width as f64, self.geometry.height as f64);
        let mut t = 0;
        loop {
            let (x, y) = self.target.center(t as f64);
            if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
                return Err(SceneError::PathOutOfBounds { t_us: t, x, y });
            }
            if t >= self.duration_us {
                break;
            }
            t = (t + self.step_us).min(self.duration_us);
        }
        Ok(())
    }

    fn occluded(&self, t_us: f64) -> bool {
        self.occlusion
            .is_some_and(|(a, b)| t_us >= a as f64 && t_us < b as f64)
    }
}

/// Ground truth as a function of time, turned into per-segment entries once
/// the stream is segmented.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTemplate {
    pub geometry: SensorGeometry,
    pub target: ObjectSpec,
    pub occlusion: Option<(u64, u64)>,
}

impl GroundTruthTemplate {
    /// Integer box around the target at `t_us`, clamped to the sensor.
    pub fn bbox_at(&self, t_us: f64) -> BBox {
        let (x0, y0, x1, y1) = self.target.bounds(t_us);
        let (w, h) = (self.geometry.width as i64, self.geometry.height as i64);
        let left = (x0.round() as i64).clamp(0, w - 1);
        let top = (y0.round() as i64).clamp(0, h - 1);
        let right = (x1.round() as i64).clamp(left + 1, w);
        let bottom = (y1.round() as i64).clamp(top + 1, h);
        BBox::new(left, top, right - left, bottom - top)
    }

    pub fn occluded_at(&self, t_us: f64) -> bool {
        self.occlusion
            .is_some_and(|(a, b)| t_us >= a as f64 && t_us < b as f64)
    }

    /// One entry per segment, sampled at the segment's mid time.
    pub fn entries(&self, segments: &[EventSegment<'_>]) -> Vec<GroundTruthEntry> {
        segments
            .iter()
            .map(|s| {
                let t = s.mid_time();
                GroundTruthEntry {
                    segment: s.index,
                    bbox: self.bbox_at(t),
                    occluded: self.occluded_at(t),
                }
            })
            .collect()
    }
}

fn emit_object(
    obj: &ObjectSpec,
    spec: &SceneSpec,
    t_a: u64,
    t_b: u64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Event>,
) {
    let dt = (t_b - t_a) as f64;
    let lambda = spec.object_rate * dt * 1e-6;
    if lambda <= 0.0 {
        return;
    }
    let poisson = Poisson::new(lambda).expect("positive rate");
    let (ta, tb) = (t_a as f64, t_b as f64);
    let tm = 0.5 * (ta + tb);
    let (ax0, ay0, ax1, ay1) = obj.bounds(ta);
    let (bx0, by0, bx1, by1) = obj.bounds(tb);
    let pad = EDGE_BAND + 1.0;
    let (w, h) = (spec.geometry.width as i64, spec.geometry.height as i64);
    let x_lo = ((ax0.min(bx0) - pad).floor() as i64).max(0);
    let x_hi = ((ax1.max(bx1) + pad).ceil() as i64).min(w - 1);
    let y_lo = ((ay0.min(by0) - pad).floor() as i64).max(0);
    let y_hi = ((ay1.max(by1) + pad).ceil() as i64).min(h - 1);
    let limit = EDGE_BAND - BAND_MARGIN;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d_a = obj.signed_distance(px, py, ta);
            let d_b = obj.signed_distance(px, py, tb);
            let d_m = obj.signed_distance(px, py, tm);
            if d_a.abs() > limit || d_b.abs() > limit || d_m.abs() > limit {
                continue;
            }
            let normal_speed = (d_b - d_a) / (dt * 1e-6);
            if normal_speed.abs() < MIN_EDGE_SPEED {
                continue;
            }
            let polarity = if normal_speed < 0.0 {
                Polarity::On
            } else {
                Polarity::Off
            };
            let n = poisson.sample(rng) as u64;
            for _ in 0..n {
                let t = rng.random_range(t_a..t_b);
                out.push(Event::new(t, x as u16, y as u16, polarity));
            }
        }
    }
}

/// Generates the event stream and ground-truth template for `spec`.
/// Output is a pure function of `spec`, seed included.
pub fn generate_scene(spec: &SceneSpec) -> Result<(EventStream, GroundTruthTemplate), SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut objects_events = Vec::new();
    let mut step_events = Vec::new();
    let mut t_a = 0;
    while t_a < spec.duration_us {
        let t_b = (t_a + spec.step_us).min(spec.duration_us);
        step_events.clear();
        let mid = 0.5 * (t_a + t_b) as f64;
        if !spec.occluded(mid) {
            emit_object(&spec.target, spec, t_a, t_b, &mut rng, &mut step_events);
        }
        for d in &spec.distractors {
            emit_object(d, spec, t_a, t_b, &mut rng, &mut step_events);
        }
        step_events.sort_by_key(|e| e.t);
        objects_events.extend_from_slice(&step_events);
        t_a = t_b;
    }

    let mut noise = Vec::new();
    let expected = spec.noise_rate * spec.duration_us as f64 * 1e-6;
    if expected > 0.0 && spec.duration_us > 0 {
        let n = Poisson::new(expected)
            .expect("positive rate")
            .sample(&mut rng) as usize;
        noise.reserve(n);
        for _ in 0..n {
            let t = rng.random_range(0..spec.duration_us);
            let x = rng.random_range(0..spec.geometry.width) as u16;
            let y = rng.random_range(0..spec.geometry.height) as u16;
            let p = if rng.random_bool(0.5) {
                Polarity::On
            } else {
                Polarity::Off
            };
            noise.push(Event::new(t, x, y, p));
        }
        noise.sort_by_key(|e| e.t);
    }

    let mut merged = Vec::with_capacity(objects_events.len() + noise.len());
    let (mut i, mut j) = (0, 0);
    while i < objects_events.len() || j < noise.len() {
        let take_object =
            j >= noise.len() || (i < objects_events.len() && objects_events[i].t <= noise[j].t);
        if take_object {
            merged.push(objects_events[i]);
            i += 1;
        } else {
            merged.push(noise[j]);
            j += 1;
        }
    }
    let stream = EventStream::new(spec.geometry, merged)
        .map_err(|e| SceneError::Invalid(format!("generated stream invalid: {e}")))?;
    let template = GroundTruthTemplate {
        geometry: spec.geometry,
        target: spec.target,
        occlusion: spec.occlusion,
    };
    Ok((stream, template))
}

/// Ready-made scenes, one per tracking challenge: noise, complicated
/// background, occlusion, intersected trajectories, deformation, scale change
/// and pose change. All run 1 s on a 128x128 sensor with the target moving
/// 100 px/s, i.e. 1 px per 10 ms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Disk of radius 8 drifting right along the middle row.
    MovingDisk,
    /// Moving disk with heavy background noise.
    Noise,
    /// Moving disk over a lattice of small squares that all drift together.
    Background,
    /// Moving disk fully hidden for 50 ms (five 10 ms segments) from t = 400 ms.
    Occlusion,
    /// Moving disk crossed at mid-run by a slow, wide bar travelling downward.
    Decoy,
    /// Disk whose radius pulsates by ±30 % every 200 ms.
    Deformation,
    /// Disk growing from radius 6 to 12 over the run.
    Scale,
    /// Rotating 20x8 rectangle.
    Pose,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::MovingDisk,
        Preset::Noise,
        Preset::Background,
        Preset::Occlusion,
        Preset::Decoy,
        Preset::Deformation,
        Preset::Scale,
        Preset::Pose,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::MovingDisk => "moving-disk",
            Preset::Noise => "noise",
            Preset::Background => "background",
            Preset::Occlusion => "occlusion",
            Preset::Decoy => "decoy",
            Preset::Deformation => "deformation",
            Preset::Scale => "scale",
            Preset::Pose => "pose",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Segmentation the preset's ground truth is meant for: 10 ms slices
    /// for the occlusion scene (count-balanced segments would squeeze the
    /// event-free gap into a single segment), 100 count-balanced segments
    /// otherwise.
    pub fn default_policy(&self) -> SegmentationPolicy {
        match self {
            Preset::Occlusion => SegmentationPolicy::ByTime(10_000),
            _ => SegmentationPolicy::IntoK(100),
        }
    }

    pub fn scene(&self, seed: u64) -> SceneSpec {
        let geometry = SensorGeometry::DVS128;
        let duration_us = 1_000_000;
        let drift = MotionPath::Linear {
            start: (14.0, 64.0),
            velocity: (100.0, 0.0),
        };
        let disk = ObjectSpec::new(Shape::Disk { radius: 8.0 }, drift);
        let mut spec = SceneSpec::new(geometry, duration_us, disk);
        spec.seed = seed;
        // Roughly a third of the object event count, see `noise_fraction` tests.
        spec.noise_rate = 10_000.0;
        match self {
            Preset::MovingDisk => {}
            Preset::Noise => spec.noise_rate = 40_000.0,
            Preset::Background => {
                for gy in 0..8 {
                    for gx in 0..9 {
                        let start = (gx as f64 * 16.0 - 8.0, gy as f64 * 16.0 + 8.0);
                        spec.distractors.push(ObjectSpec::new(
                            Shape::Rectangle {
                                half_width: 2.0,
                                half_height: 2.0,
                            },
                            MotionPath::Linear {
                                start,
                                velocity: (16.0, 8.0),
                            },
                        ));
                    }
                }
            }
            Preset::Occlusion => spec.occlusion = Some((400_000, 450_000)),
            Preset::Decoy => {
                spec.distractors.push(ObjectSpec::new(
                    Shape::Rectangle {
                        half_width: 28.0,
                        half_height: 5.0,
                    },
                    MotionPath::Linear {
                        start: (64.0, 49.0),
                        velocity: (0.0, 30.0),
                    },
                ));
            }
            Preset::Deformation => {
                spec.target.pulse_amplitude = 0.3;
                spec.target.pulse_period_us = 200_000.0;
            }
            Preset::Scale => {
                spec.target.shape = Shape::Disk { radius: 6.0 };
                spec.target.growth = 1.0;
            }
            Preset::Pose => {
                spec.target.shape = Shape::Rectangle {
                    half_width: 10.0,
                    half_height: 4.0,
                };
                spec.target.spin = PI;
            }
        }
        spec
    }
}
