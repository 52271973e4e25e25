//! Event data model and the plain-text event / ground-truth file formats.
//!
//! Event file:
//! ```text
//! # evtrack-events v1 width=128 height=128
//! 1000,5,7,1
//! 1003,6,7,-1
//! ```
//! Ground-truth file:
//! ```text
//! # evtrack-gt v1
//! 0,12,40,16,16
//! 1,13,40,16,16
//! ```
//! A ground-truth row may carry a sixth field `occluded` when the target is
//! fully hidden in that segment.

use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

pub const EVENTS_MAGIC: &str = "# evtrack-events v1";
pub const GT_HEADER: &str = "# evtrack-gt v1";

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: event ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        line: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("line {line}: timestamp {t} precedes previous timestamp {prev}")]
    NonMonotonicTime { line: usize, t: u64, prev: u64 },
    #[error("header declares {found} but caller expects {expected}")]
    GeometryMismatch {
        expected: SensorGeometry,
        found: SensorGeometry,
    },
    #[error("line {line}: bounding box {bbox:?} invalid: {reason}")]
    InvalidBox {
        line: usize,
        bbox: BBox,
        reason: &'static str,
    },
    #[error("invalid sensor geometry {width}x{height}")]
    InvalidGeometry { width: u32, height: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Sign of the brightness change that triggered an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
}

impl SensorGeometry {
    pub const DVS128: SensorGeometry = SensorGeometry {
        width: 128,
        height: 128,
    };
    pub const DAVIS240: SensorGeometry = SensorGeometry {
        width: 240,
        height: 180,
    };

    pub fn new(width: u32, height: u32) -> Result<Self, EventError> {
        if width == 0 || height == 0 || width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1
        {
            return Err(EventError::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Time-ordered events from one sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream after checking bounds and time ordering.
    pub fn new(geometry: SensorGeometry, events: Vec<Event>) -> Result<Self, EventError> {
        let mut prev = 0u64;
        for (i, e) in events.iter().enumerate() {
            if !geometry.contains(e.x as u32, e.y as u32) {
                return Err(EventError::OutOfBounds {
                    line: i + 1,
                    x: e.x as u32,
                    y: e.y as u32,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            if e.t < prev {
                return Err(EventError::NonMonotonicTime {
                    line: i + 1,
                    t: e.t,
                    prev,
                });
            }
            prev = e.t;
        }
        Ok(Self { geometry, events })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            events: Vec::new(),
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Axis-aligned box, top-left convention, pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    /// Real-valued center; odd sizes give a `.5` coordinate.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn validate(&self, geometry: SensorGeometry) -> Result<(), &'static str> {
        if self.w < 1 || self.h < 1 {
            return Err("width and height must be at least 1");
        }
        if self.x < 0
            || self.y < 0
            || self.x + self.w > geometry.width as i64
            || self.y + self.h > geometry.height as i64
        {
            return Err("box extends outside the sensor");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundTruthEntry {
    pub segment: usize,
    pub bbox: BBox,
    /// Target fully hidden during this segment.
    pub occluded: bool,
}

fn parse_header_geometry(line: &str) -> Option<SensorGeometry> {
    let rest = line.strip_prefix(EVENTS_MAGIC)?;
    let mut width = None;
    let mut height = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("width=") {
            width = v.parse().ok();
        } else {
            height = tok.strip_prefix("height=")?.parse().ok();
        }
    }
    SensorGeometry::new(width?, height?).ok()
}

fn malformed(line: usize, reason: impl Into<String>) -> EventError {
    EventError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn parse_event_line(text: &str, line: usize) -> Result<(u64, u32, u32, Polarity), EventError> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 4 {
        return Err(malformed(
            line,
            format!("expected 4 fields t,x,y,p, found {}", fields.len()),
        ));
    }
    let t = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| malformed(line, format!("timestamp {:?}: {e}", fields[0])))?;
    let x = fields[1]
        .trim()
        .parse::<u32>()
        .map_err(|e| malformed(line, format!("x {:?}: {e}", fields[1])))?;
    let y = fields[2]
        .trim()
        .parse::<u32>()
        .map_err(|e| malformed(line, format!("y {:?}: {e}", fields[2])))?;
    let p = fields[3]
        .trim()
        .parse::<i8>()
        .ok()
        .and_then(Polarity::from_i8)
        .ok_or_else(|| malformed(line, format!("polarity {:?} not in {{1,-1}}", fields[3])))?;
    Ok((t, x, y, p))
}

fn parse_body(
    lines: impl Iterator<Item = (usize, io::Result<String>)>,
    geometry: SensorGeometry,
) -> Result<Vec<Event>, EventError> {
    let mut events = Vec::new();
    let mut prev = 0u64;
    for (idx, text) in lines {
        let text = text?;
        let line = idx + 1;
        let text = text.trim_end_matches('\r');
        if text.is_empty() {
            continue;
        }
        if text.starts_with('#') {
            return Err(malformed(line, "header or comment after first line"));
        }
        let (t, x, y, p) = parse_event_line(text, line)?;
        if !geometry.contains(x, y) {
            return Err(EventError::OutOfBounds {
                line,
                x,
                y,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if t < prev {
            return Err(EventError::NonMonotonicTime { line, t, prev });
        }
        prev = t;
        events.push(Event::new(t, x as u16, y as u16, p));
    }
    Ok(events)
}

/// Parses an event file against a known sensor geometry.
///
/// The header line is optional; when present it must agree with `geometry`.
/// Empty input yields an empty stream.
pub fn parse_events<R: BufRead>(
    source: R,
    geometry: SensorGeometry,
) -> Result<EventStream, EventError> {
    let mut lines = source.lines().enumerate().peekable();
    if let Some((_, Ok(first))) = lines.peek() {
        if first.starts_with('#') {
            let found = parse_header_geometry(first.trim_end_matches('\r'))
                .ok_or_else(|| malformed(1, "bad event file header"))?;
            if found != geometry {
                return Err(EventError::GeometryMismatch {
                    expected: geometry,
                    found,
                });
            }
            lines.next();
        }
    }
    let events = parse_body(lines, geometry)?;
    Ok(EventStream { geometry, events })
}

/// Parses an event file, taking the geometry from its header.
pub fn read_events<R: BufRead>(source: R) -> Result<EventStream, EventError> {
    let mut lines = source.lines().enumerate();
    let geometry = match lines.next() {
        Some((_, first)) => parse_header_geometry(first?.trim_end_matches('\r'))
            .ok_or_else(|| malformed(1, "missing or bad event file header"))?,
        None => return Err(malformed(1, "empty event file has no header")),
    };
    let events = parse_body(lines, geometry)?;
    Ok(EventStream { geometry, events })
}

pub fn write_events<W: Write>(stream: &EventStream, mut sink: W) -> io::Result<()> {
    let g = stream.geometry;
    writeln!(sink, "{EVENTS_MAGIC} width={} height={}", g.width, g.height)?;
    for e in &stream.events {
        writeln!(sink, "{},{},{},{}", e.t, e.x, e.y, e.p.as_i8())?;
    }
    sink.flush()
}

pub fn write_ground_truth<W: Write>(entries: &[GroundTruthEntry], mut sink: W) -> io::Result<()> {
    writeln!(sink, "{GT_HEADER}")?;
    for e in entries {
        let b = e.bbox;
        write!(sink, "{},{},{},{},{}", e.segment, b.x, b.y, b.w, b.h)?;
        if e.occluded {
            write!(sink, ",occluded")?;
        }
        writeln!(sink)?;
    }
    sink.flush()
}

/// Reads a ground-truth file. Segment indices must run 0, 1, 2, ...
/// When `geometry` is given, every box must lie inside it.
pub fn read_ground_truth<R: BufRead>(
    source: R,
    geometry: Option<SensorGeometry>,
) -> Result<Vec<GroundTruthEntry>, EventError> {
    let mut out = Vec::new();
    let mut lines = source.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).transpose()?;
    if first.as_deref().map(|l| l.trim_end_matches('\r')) != Some(GT_HEADER) {
        return Err(malformed(1, format!("expected header {GT_HEADER:?}")));
    }
    for (idx, text) in lines {
        let text = text?;
        let line = idx + 1;
        let text = text.trim_end_matches('\r');
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(malformed(
                line,
                format!("expected segment,x,y,w,h, found {} fields", fields.len()),
            ));
        }
        let segment: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| malformed(line, format!("segment {:?}: {e}", fields[0])))?;
        let mut nums = [0i64; 4];
        for (k, slot) in nums.iter_mut().enumerate() {
            *slot = fields[k + 1]
                .trim()
                .parse()
                .map_err(|e| malformed(line, format!("field {:?}: {e}", fields[k + 1])))?;
        }
        let occluded = match fields.get(5).map(|s| s.trim()) {
            None => false,
            Some("occluded") => true,
            Some(other) => return Err(malformed(line, format!("unknown flag {other:?}"))),
        };
        if segment != out.len() {
            return Err(malformed(
                line,
                format!("segment index {segment}, expected {}", out.len()),
            ));
        }
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3]);
        let check = match geometry {
            Some(g) => bbox.validate(g),
            None if bbox.w < 1 || bbox.h < 1 => Err("width and height must be at least 1"),
            None => Ok(()),
        };
        if let Err(reason) = check {
            return Err(EventError::InvalidBox { line, bbox, reason });
        }
        out.push(GroundTruthEntry {
            segment,
            bbox,
            occluded,
        });
    }
    Ok(out)
}
