//! Hard segmentation of an event stream into "frames".

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::event::{Event, EventStream};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("cannot split {events} events into {k} non-empty segments")]
    EmptyStream { events: usize, k: usize },
    #[error("invalid segmentation policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentationPolicy {
    /// Fixed number of events per segment; the short tail is dropped.
    ByCount(usize),
    /// Fixed time slice in microseconds, starting at the first event.
    ByTime(u64),
    /// Exactly `k` segments balanced by event count.
    IntoK(usize),
}

impl SegmentationPolicy {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let ok = match *self {
            SegmentationPolicy::ByCount(n) => n >= 1,
            SegmentationPolicy::ByTime(dt) => dt >= 1,
            SegmentationPolicy::IntoK(k) => k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(SegmentError::InvalidPolicy(format!(
                "{self} must have a positive parameter"
            )))
        }
    }
}

impl fmt::Display for SegmentationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentationPolicy::ByCount(n) => write!(f, "count:{n}"),
            SegmentationPolicy::ByTime(dt) => write!(f, "time:{dt}"),
            SegmentationPolicy::IntoK(k) => write!(f, "into_k:{k}"),
        }
    }
}

impl FromStr for SegmentationPolicy {
    type Err = SegmentError;

    /// Accepts `count:<n>`, `time:<µs>` or `into_k:<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || {
            SegmentError::InvalidPolicy(format!("{s:?} (expected count:N, time:US or into_k:K)"))
        };
        let (mode, value) = s.split_once(':').ok_or_else(bad)?;
        let policy = match mode {
            "count" | "by_count" => SegmentationPolicy::ByCount(value.parse().map_err(|_| bad())?),
            "time" | "by_time" => SegmentationPolicy::ByTime(value.parse().map_err(|_| bad())?),
            "into_k" | "k" => SegmentationPolicy::IntoK(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// A contiguous run of events. For count-based policies `t_end` is the
/// timestamp of the last event; for time slices it is the exclusive slice end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventSegment<'a> {
    pub index: usize,
    pub events: &'a [Event],
    pub t_start: u64,
    pub t_end: u64,
}

impl EventSegment<'_> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn mid_time(&self) -> f64 {
        (self.t_start as f64 + self.t_end as f64) / 2.0
    }
}

fn count_segment(index: usize, events: &[Event]) -> EventSegment<'_> {
    EventSegment {
        index,
        events,
        t_start: events.first().map_or(0, |e| e.t),
        t_end: events.last().map_or(0, |e| e.t),
    }
}

pub fn segment(
    stream: &EventStream,
    policy: SegmentationPolicy,
) -> Result<Vec<EventSegment<'_>>, SegmentError> {
    policy.validate()?;
    let events = stream.events();
    let n = events.len();
    let segments = match policy {
        SegmentationPolicy::ByCount(size) => events
            .chunks_exact(size)
            .enumerate()
            .map(|(i, chunk)| count_segment(i, chunk))
            .collect(),
        SegmentationPolicy::IntoK(k) => {
            if n < k {
                return Err(SegmentError::EmptyStream { events: n, k });
            }
            let base = n / k;
            let extra = n % k;
            let mut out = Vec::with_capacity(k);
            let mut start = 0;
            for i in 0..k {
                let len = base + usize::from(i < extra);
                out.push(count_segment(i, &events[start..start + len]));
                start += len;
            }
            out
        }
        SegmentationPolicy::ByTime(dt) => {
            let mut out = Vec::new();
            let Some(first) = events.first() else {
                return Ok(out);
            };
            let t0 = first.t;
            let mut start = 0;
            while start < n {
                let index = out.len();
                let t_start = t0 + index as u64 * dt;
                let t_end = t_start + dt;
                let len = events[start..].partition_point(|e| e.t < t_end);
                out.push(EventSegment {
                    index,
                    events: &events[start..start + len],
                    t_start,
                    t_end,
                });
                start += len;
            }
            out
        }
    };
    Ok(segments)
}
