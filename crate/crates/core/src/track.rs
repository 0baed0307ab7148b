//! Canonical planar track model: frame clock, per-frame agent states, and
//! tracks split into contiguous segments.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::wrap_angle;

/// Fixed frame clock; all datasets are treated as uniformly sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    rate_hz: f64,
}

impl FrameClock {
    pub fn new(rate_hz: f64) -> Result<Self> {
        if !rate_hz.is_finite() || rate_hz <= 0.0 {
            return Err(Error::Config(format!("frame rate must be positive, got {rate_hz}")));
        }
        Ok(Self { rate_hz })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

impl Default for FrameClock {
    fn default() -> Self {
        Self { rate_hz: 20.0 }
    }
}

/// Origin of a track's states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SourceTag {
    Estimated,
    Gt,
    GtEkf,
    Synthetic,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceTag::Estimated => "estimated",
            SourceTag::Gt => "gt",
            SourceTag::GtEkf => "gt_ekf",
            SourceTag::Synthetic => "synthetic",
        };
        write!(f, "{s}")
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(SourceTag::Estimated),
            "gt" => Ok(SourceTag::Gt),
            "gt_ekf" => Ok(SourceTag::GtEkf),
            "synthetic" => Ok(SourceTag::Synthetic),
            other => Err(Error::Config(format!(
                "unknown source tag '{other}' (expected estimated, gt, gt_ekf or synthetic)"
            ))),
        }
    }
}

/// Planar state of one agent at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState2 {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
    /// Meters per second, non-negative.
    pub speed: f64,
}

impl AgentState2 {
    pub fn new(frame: i64, x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            frame,
            x,
            y,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Maximal run of consecutive frames in which the object is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSegment {
    states: Vec<AgentState2>,
}

impl TrackSegment {
    /// Wrap a contiguous state run; frames must increase by exactly one.
    pub fn new(states: Vec<AgentState2>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Data("empty track segment".into()));
        }
        for w in states.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::Data(format!(
                    "segment frames not consecutive: {} then {}",
                    w[0].frame, w[1].frame
                )));
            }
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[AgentState2] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start_frame(&self) -> i64 {
        self.states[0].frame
    }

    pub fn end_frame(&self) -> i64 {
        self.states[self.states.len() - 1].frame
    }
}

/// Time-indexed observation sequence for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub object_id: i64,
    pub source_tag: SourceTag,
    segments: Vec<TrackSegment>,
}

impl Track {
    /// Build a track from states sorted by frame, splitting at frame gaps.
    ///
    /// Duplicate or decreasing frames are a data error; gaps start a new
    /// segment rather than being interpolated.
    pub fn from_states(
        object_id: i64,
        source_tag: SourceTag,
        states: Vec<AgentState2>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Data(format!("object {object_id} has no states")));
        }
        let mut segments = Vec::new();
        let mut current: Vec<AgentState2> = Vec::new();
        for s in states {
            match current.last() {
                None => current.push(s),
                Some(prev) if s.frame == prev.frame + 1 => current.push(s),
                Some(prev) if s.frame > prev.frame + 1 => {
                    segments.push(TrackSegment::new(std::mem::take(&mut current))?);
                    current.push(s);
                }
                Some(prev) => {
                    return Err(Error::Data(format!(
                        "object {object_id}: frame {} not after {}",
                        s.frame, prev.frame
                    )));
                }
            }
        }
        segments.push(TrackSegment::new(current)?);
        Ok(Self {
            object_id,
            source_tag,
            segments,
        })
    }

    pub fn from_segments(
        object_id: i64,
        source_tag: SourceTag,
        segments: Vec<TrackSegment>,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Data(format!("object {object_id} has no segments")));
        }
        for w in segments.windows(2) {
            if w[1].start_frame() <= w[0].end_frame() {
                return Err(Error::Data(format!(
                    "object {object_id}: segments overlap or are unordered"
                )));
            }
        }
        Ok(Self {
            object_id,
            source_tag,
            segments,
        })
    }

    pub fn segments(&self) -> &[TrackSegment] {
        &self.segments
    }

    pub fn states(&self) -> impl Iterator<Item = &AgentState2> {
        self.segments.iter().flat_map(|s| s.states().iter())
    }

    pub fn n_states(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    /// Retag and transform every state, keeping the segment structure.
    pub fn map_states<F>(&self, source_tag: SourceTag, mut f: F) -> Track
    where
        F: FnMut(&AgentState2) -> AgentState2,
    {
        let segments = self
            .segments
            .iter()
            .map(|seg| TrackSegment {
                states: seg.states().iter().map(&mut f).collect(),
            })
            .collect();
        Track {
            object_id: self.object_id,
            source_tag,
            segments,
        }
    }
}
