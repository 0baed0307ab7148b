//! Eligibility filtering and sliding-window generation of prediction
//! instances: a history of recent states, the anchor ("current") state, and
//! the future truth over the prediction horizon.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ingest::fmt9;
use crate::track::{AgentState2, SourceTag, Track};

/// History/horizon contract for instance generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    /// Fewest history frames an instance may carry.
    pub min_history: usize,
    /// History cap; extra available frames are dropped.
    pub max_history: usize,
    /// Number of future frames predicted and scored.
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            min_history: 1,
            max_history: 6,
            horizon: 30,
        }
    }
}

impl WindowSpec {
    pub fn new(min_history: usize, max_history: usize, horizon: usize) -> Result<Self> {
        if min_history < 1 || max_history < min_history || horizon < 1 {
            return Err(Error::Config(format!(
                "window spec needs 1 <= min_history <= max_history and horizon >= 1, \
                 got min_history={min_history} max_history={max_history} horizon={horizon}"
            )));
        }
        Ok(Self {
            min_history,
            max_history,
            horizon,
        })
    }

    /// Shortest segment that yields any instance: history + anchor + future.
    pub fn min_segment_len(&self) -> usize {
        self.min_history + 1 + self.horizon
    }
}

/// One prediction task: `history` holds the frames before the anchor
/// (between `min_history` and `max_history` of them), `anchor` is the
/// current state, and `future_truth` the next `horizon` observed states.
/// All frames are contiguous.
#[derive(Debug, Clone)]
pub struct PredictionInstance {
    pub object_id: i64,
    pub source_tag: SourceTag,
    pub anchor_frame: i64,
    pub history: Vec<AgentState2>,
    pub anchor: AgentState2,
    pub future_truth: Vec<AgentState2>,
}

impl PredictionInstance {
    /// History plus anchor, oldest first: everything observed so far.
    pub fn observed(&self) -> Vec<AgentState2> {
        let mut v = self.history.clone();
        v.push(self.anchor);
        v
    }

    /// Future truth as bare 2D points.
    pub fn truth_points(&self) -> Vec<[f64; 2]> {
        self.future_truth.iter().map(|s| [s.x, s.y]).collect()
    }
}

/// Per-segment eligibility: a segment yields instances iff it spans at least
/// `min_history + 1 + horizon` consecutive frames (32 at the defaults).
pub fn eligible(track: &Track, spec: &WindowSpec) -> Vec<bool> {
    track
        .segments()
        .iter()
        .map(|s| s.len() >= spec.min_segment_len())
        .collect()
}

/// Number of instances a segment of `segment_len` states yields.
pub fn instance_count(segment_len: usize, spec: &WindowSpec) -> usize {
    (segment_len + 1).saturating_sub(spec.min_segment_len())
}

/// Slide an anchor across every eligible segment and cut one instance per
/// position. The history is the `min(max_history, available)` most recent
/// frames before the anchor; the future truth is the next `horizon` frames.
pub fn make_instances(track: &Track, spec: &WindowSpec) -> Vec<PredictionInstance> {
    let mut instances = Vec::new();
    for segment in track.segments() {
        let states = segment.states();
        let n = states.len();
        if n < spec.min_segment_len() {
            continue;
        }
        for a in spec.min_history..=n - spec.horizon - 1 {
            let h = spec.max_history.min(a);
            instances.push(PredictionInstance {
                object_id: track.object_id,
                source_tag: track.source_tag,
                anchor_frame: states[a].frame,
                history: states[a - h..a].to_vec(),
                anchor: states[a],
                future_truth: states[a + 1..=a + spec.horizon].to_vec(),
            });
        }
    }
    instances
}

/// Index pairs (i, j) of instances with the same object and anchors one
/// frame apart — the pairs over which consistency error is measurable.
pub fn consecutive_pairs(instances: &[PredictionInstance]) -> Vec<(usize, usize)> {
    let by_key: BTreeMap<(i64, i64), usize> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| ((inst.object_id, inst.anchor_frame), i))
        .collect();
    let mut pairs = Vec::new();
    for (&(object_id, anchor), &i) in &by_key {
        if let Some(&j) = by_key.get(&(object_id, anchor + 1)) {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Instance export header. Roles: `history`, `anchor`, `truth`.
pub const INSTANCE_CSV_HEADER: &str = "object_id,anchor_frame,role,frame,x,y,heading,speed,source";

/// Serialize instances for the external-predictor exchange; rows per
/// instance run history (oldest first), anchor, then truth.
pub fn write_instance_csv(instances: &[PredictionInstance]) -> String {
    let mut out = String::from(INSTANCE_CSV_HEADER);
    out.push('\n');
    let mut row = |inst: &PredictionInstance, role: &str, s: &AgentState2| {
        out.push_str(&format!(
            "{},{},{role},{},{},{},{},{},{}\n",
            inst.object_id,
            inst.anchor_frame,
            s.frame,
            fmt9(s.x),
            fmt9(s.y),
            fmt9(s.heading),
            fmt9(s.speed),
            inst.source_tag,
        ));
    };
    for inst in instances {
        for s in &inst.history {
            row(inst, "history", s);
        }
        row(inst, "anchor", &inst.anchor);
        for s in &inst.future_truth {
            row(inst, "truth", s);
        }
    }
    out
}

pub fn write_instance_csv_file(instances: &[PredictionInstance], path: &std::path::Path) -> Result<()> {
    crate::ingest::write_file(path, &write_instance_csv(instances))
}

/// Parse an instance export file back into instances (sorted by object id,
/// then anchor frame). Structure is fully revalidated.
pub fn parse_instance_csv(content: &str, origin: &str) -> Result<Vec<PredictionInstance>> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == INSTANCE_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("expected header '{INSTANCE_CSV_HEADER}'"),
            })
        }
    }

    struct Builder {
        source_tag: SourceTag,
        history: Vec<AgentState2>,
        anchor: Option<AgentState2>,
        truth: Vec<AgentState2>,
    }
    let mut groups: BTreeMap<(i64, i64), Builder> = BTreeMap::new();

    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split(',').collect();
        if tokens.len() != 9 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("expected 9 columns, got {}", tokens.len()),
            });
        }
        let parse_num = |i: usize, name: &str| -> Result<f64> {
            tokens[i].parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("invalid {name} value '{}'", tokens[i]),
            })
        };
        let object_id: i64 = tokens[0].parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("invalid object id '{}'", tokens[0]),
        })?;
        let anchor_frame: i64 = tokens[1].parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("invalid anchor frame '{}'", tokens[1]),
        })?;
        let role = tokens[2];
        let frame: i64 = tokens[3].parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("invalid frame '{}'", tokens[3]),
        })?;
        let state = AgentState2::new(
            frame,
            parse_num(4, "x")?,
            parse_num(5, "y")?,
            parse_num(6, "heading")?,
            parse_num(7, "speed")?,
        );
        let source_tag: SourceTag = tokens[8].parse()?;

        let builder = groups.entry((object_id, anchor_frame)).or_insert(Builder {
            source_tag,
            history: Vec::new(),
            anchor: None,
            truth: Vec::new(),
        });
        match role {
            "history" => builder.history.push(state),
            "anchor" => {
                if builder.anchor.replace(state).is_some() {
                    return Err(Error::Data(format!(
                        "instance ({object_id}, {anchor_frame}) has two anchor rows ({origin}:{line})"
                    )));
                }
            }
            "truth" => builder.truth.push(state),
            other => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    message: format!("unknown role '{other}'"),
                })
            }
        }
    }

    let mut instances = Vec::with_capacity(groups.len());
    for ((object_id, anchor_frame), b) in groups {
        let anchor = b.anchor.ok_or_else(|| {
            Error::Data(format!("instance ({object_id}, {anchor_frame}) has no anchor row"))
        })?;
        if anchor.frame != anchor_frame {
            return Err(Error::Data(format!(
                "instance ({object_id}, {anchor_frame}): anchor row carries frame {}",
                anchor.frame
            )));
        }
        if b.history.is_empty() || b.truth.is_empty() {
            return Err(Error::Data(format!(
                "instance ({object_id}, {anchor_frame}) needs history and truth rows"
            )));
        }
        let mut expected = anchor_frame - b.history.len() as i64;
        for s in &b.history {
            if s.frame != expected {
                return Err(Error::Data(format!(
                    "instance ({object_id}, {anchor_frame}): history frames not contiguous up to the anchor"
                )));
            }
            expected += 1;
        }
        for (k, s) in b.truth.iter().enumerate() {
            if s.frame != anchor_frame + 1 + k as i64 {
                return Err(Error::Data(format!(
                    "instance ({object_id}, {anchor_frame}): truth frames not contiguous after the anchor"
                )));
            }
        }
        instances.push(PredictionInstance {
            object_id,
            source_tag: b.source_tag,
            anchor_frame,
            history: b.history,
            anchor,
            future_truth: b.truth,
        });
    }
    Ok(instances)
}

pub fn read_instance_csv_file(path: &std::path::Path) -> Result<Vec<PredictionInstance>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_instance_csv(&content, &path.display().to_string())
}
