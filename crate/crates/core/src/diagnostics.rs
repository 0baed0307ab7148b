//! Input-quality diagnostics: per-frame step-distance, speed, and heading
//! series plus scalar roughness summaries for comparing data sources.

use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::ingest::fmt9;
use crate::track::{SourceTag, Track};

/// Per-segment smoothness summary.
///
/// Series lengths for an N-state segment: step distance N−1, speed N,
/// heading N. Roughness is the mean absolute second difference of each
/// series (heading first differences are wrapped before differencing
/// again); a series shorter than 3 has no roughness value.
#[derive(Debug, Clone)]
pub struct SmoothnessReport {
    pub object_id: i64,
    pub source_tag: SourceTag,
    pub start_frame: i64,
    pub step_distance_series: Vec<f64>,
    pub speed_series: Vec<f64>,
    pub heading_series: Vec<f64>,
    pub roughness_step_distance: Option<f64>,
    pub roughness_speed: Option<f64>,
    pub roughness_heading: Option<f64>,
}

fn second_difference_mean(series: &[f64]) -> Option<f64> {
    if series.len() < 3 {
        return None;
    }
    let sum: f64 = series
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .sum();
    Some(sum / (series.len() - 2) as f64)
}

fn wrapped_second_difference_mean(series: &[f64]) -> Option<f64> {
    if series.len() < 3 {
        return None;
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| wrap_angle(w[1] - w[0])).collect();
    let sum: f64 = diffs.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Some(sum / (diffs.len() - 1) as f64)
}

/// Compute one [`SmoothnessReport`] per segment of the track.
pub fn smoothness(track: &Track) -> Vec<SmoothnessReport> {
    track
        .segments()
        .iter()
        .map(|segment| {
            let states = segment.states();
            let step_distance_series: Vec<f64> = states
                .windows(2)
                .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
                .collect();
            let speed_series: Vec<f64> = states.iter().map(|s| s.speed).collect();
            let heading_series: Vec<f64> = states.iter().map(|s| s.heading).collect();
            SmoothnessReport {
                object_id: track.object_id,
                source_tag: track.source_tag,
                start_frame: segment.start_frame(),
                roughness_step_distance: second_difference_mean(&step_distance_series),
                roughness_speed: second_difference_mean(&speed_series),
                roughness_heading: wrapped_second_difference_mean(&heading_series),
                step_distance_series,
                speed_series,
                heading_series,
            }
        })
        .collect()
}

/// One labeled column of a multi-source comparison, restricted to the
/// common frames.
#[derive(Debug, Clone)]
pub struct SourceSeries {
    pub label: String,
    /// Step distance for each consecutive frame pair; `None` where the
    /// common frames are not adjacent.
    pub step_distance: Vec<Option<f64>>,
    pub speed: Vec<f64>,
    pub heading: Vec<f64>,
    pub roughness_step_distance: Option<f64>,
    pub roughness_speed: Option<f64>,
    pub roughness_heading: Option<f64>,
}

/// Frame-aligned side-by-side series for two or more sources.
#[derive(Debug, Clone)]
pub struct SourceComparison {
    /// Sorted frames present in every input track.
    pub frames: Vec<i64>,
    pub sources: Vec<SourceSeries>,
}

/// Align tracks of the same object from different sources on their common
/// frames and summarize each source's smoothness over that overlap.
///
/// Roughness values pool second differences over the contiguous runs of the
/// overlap, so a gap in one source never manufactures a spurious jump.
pub fn compare_sources(labeled: &[(String, &Track)]) -> Result<SourceComparison> {
    if labeled.len() < 2 {
        return Err(Error::Data(
            "source comparison needs at least two tracks".into(),
        ));
    }
    let mut frames: Vec<i64> = labeled[0].1.states().map(|s| s.frame).collect();
    for (_, track) in &labeled[1..] {
        let have: std::collections::BTreeSet<i64> = track.states().map(|s| s.frame).collect();
        frames.retain(|f| have.contains(f));
    }
    if frames.is_empty() {
        return Err(Error::Data(
            "tracks share no common frames; nothing to compare".into(),
        ));
    }

    let sources = labeled
        .iter()
        .map(|(label, track)| {
            let by_frame: std::collections::BTreeMap<i64, _> =
                track.states().map(|s| (s.frame, s)).collect();
            let speed: Vec<f64> = frames.iter().map(|f| by_frame[f].speed).collect();
            let heading: Vec<f64> = frames.iter().map(|f| by_frame[f].heading).collect();
            let step_distance: Vec<Option<f64>> = frames
                .windows(2)
                .map(|w| {
                    if w[1] == w[0] + 1 {
                        let (a, b) = (by_frame[&w[0]], by_frame[&w[1]]);
                        Some(((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt())
                    } else {
                        None
                    }
                })
                .collect();

            // Contiguous runs of the overlap, as index ranges into `frames`.
            let mut runs: Vec<(usize, usize)> = Vec::new();
            let mut start = 0usize;
            for i in 1..frames.len() {
                if frames[i] != frames[i - 1] + 1 {
                    runs.push((start, i));
                    start = i;
                }
            }
            runs.push((start, frames.len()));

            let pool = |per_run: &dyn Fn(usize, usize) -> Vec<f64>| -> Option<f64> {
                let samples: Vec<f64> = runs.iter().flat_map(|&(a, b)| per_run(a, b)).collect();
                if samples.is_empty() {
                    None
                } else {
                    Some(samples.iter().sum::<f64>() / samples.len() as f64)
                }
            };
            let roughness_speed = pool(&|a, b| {
                speed[a..b]
                    .windows(3)
                    .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
                    .collect()
            });
            let roughness_heading = pool(&|a, b| {
                let d: Vec<f64> = heading[a..b]
                    .windows(2)
                    .map(|w| wrap_angle(w[1] - w[0]))
                    .collect();
                d.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
            });
            let roughness_step_distance = pool(&|a, b| {
                let steps: Vec<f64> = step_distance[a..b.saturating_sub(1)]
                    .iter()
                    .flatten()
                    .copied()
                    .collect();
                steps
                    .windows(3)
                    .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
                    .collect()
            });

            SourceSeries {
                label: label.clone(),
                step_distance,
                speed,
                heading,
                roughness_step_distance,
                roughness_speed,
                roughness_heading,
            }
        })
        .collect();

    Ok(SourceComparison { frames, sources })
}

/// Tidy series CSV (`frame,series,source,value`) from per-segment reports.
/// Step distances are attributed to the later frame of each pair.
pub fn report_series_csv(label: &str, reports: &[SmoothnessReport]) -> String {
    let mut out = String::from("frame,series,source,value\n");
    for r in reports {
        for (i, v) in r.step_distance_series.iter().enumerate() {
            out.push_str(&format!(
                "{},step_distance,{label},{}\n",
                r.start_frame + i as i64 + 1,
                fmt9(*v)
            ));
        }
        for (i, v) in r.speed_series.iter().enumerate() {
            out.push_str(&format!("{},speed,{label},{}\n", r.start_frame + i as i64, fmt9(*v)));
        }
        for (i, v) in r.heading_series.iter().enumerate() {
            out.push_str(&format!("{},heading,{label},{}\n", r.start_frame + i as i64, fmt9(*v)));
        }
    }
    out
}

/// Roughness table CSV (`source,series,roughness`) from per-segment reports,
/// one row block per segment in segment order.
pub fn report_roughness_csv(label: &str, reports: &[SmoothnessReport]) -> String {
    let mut out = String::from("source,series,roughness\n");
    for r in reports {
        for (series, v) in [
            ("step_distance", r.roughness_step_distance),
            ("speed", r.roughness_speed),
            ("heading", r.roughness_heading),
        ] {
            if let Some(v) = v {
                out.push_str(&format!("{label},{series},{}\n", fmt9(v)));
            }
        }
    }
    out
}

/// Tidy series CSV for a frame-aligned comparison.
pub fn comparison_series_csv(cmp: &SourceComparison) -> String {
    let mut out = String::from("frame,series,source,value\n");
    for src in &cmp.sources {
        for (i, v) in src.step_distance.iter().enumerate() {
            if let Some(v) = v {
                out.push_str(&format!(
                    "{},step_distance,{},{}\n",
                    cmp.frames[i + 1],
                    src.label,
                    fmt9(*v)
                ));
            }
        }
        for (i, v) in src.speed.iter().enumerate() {
            out.push_str(&format!("{},speed,{},{}\n", cmp.frames[i], src.label, fmt9(*v)));
        }
        for (i, v) in src.heading.iter().enumerate() {
            out.push_str(&format!("{},heading,{},{}\n", cmp.frames[i], src.label, fmt9(*v)));
        }
    }
    out
}

/// Roughness table CSV for a frame-aligned comparison. Rows are grouped by
/// series and carry a `rank` column ordering sources from smoothest (1)
/// upward, with the source label as a deterministic tie-break.
pub fn comparison_roughness_csv(cmp: &SourceComparison) -> String {
    let mut out = String::from("series,source,roughness,rank\n");
    for (series, pick) in [
        ("step_distance", 0usize),
        ("speed", 1),
        ("heading", 2),
    ] {
        let mut rows: Vec<(&str, f64)> = cmp
            .sources
            .iter()
            .filter_map(|src| {
                let v = match pick {
                    0 => src.roughness_step_distance,
                    1 => src.roughness_speed,
                    _ => src.roughness_heading,
                };
                v.map(|v| (src.label.as_str(), v))
            })
            .collect();
        rows.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        for (rank, (label, v)) in rows.iter().enumerate() {
            out.push_str(&format!("{series},{label},{},{}\n", fmt9(*v), rank + 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::AgentState2;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn straight_track(n: usize, speed: f64) -> Track {
        let dt = crate::track::FrameClock::default().dt();
        let states: Vec<AgentState2> = (0..n)
            .map(|i| AgentState2::new(i as i64, speed * dt * i as f64, 0.0, 0.0, speed))
            .collect();
        Track::from_states(1, SourceTag::Synthetic, states).unwrap()
    }

    #[test]
    fn uniform_straight_line_is_perfectly_smooth() {
        let reports = smoothness(&straight_track(20, 10.0));
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.step_distance_series.len(), 19);
        assert_eq!(r.speed_series.len(), 20);
        assert_eq!(r.heading_series.len(), 20);
        for v in &r.step_distance_series {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-12);
        }
        assert_relative_eq!(r.roughness_step_distance.unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.roughness_speed.unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.roughness_heading.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn position_outlier_spikes_step_series() {
        let mut states: Vec<AgentState2> = (0..10)
            .map(|i| AgentState2::new(i, 0.5 * i as f64, 0.0, 0.0, 10.0))
            .collect();
        let k = 5usize;
        states[k] = AgentState2::new(k as i64, 0.5 * k as f64, 1.0, 0.0, 10.0);
        let track = Track::from_states(1, SourceTag::Gt, states).unwrap();
        let r = &smoothness(&track)[0];
        assert!(r.step_distance_series[k - 1] > 1.0);
        assert!(r.step_distance_series[k] > 1.0);
        assert!(r.step_distance_series[k - 2] < 0.6);
        assert!(r.roughness_step_distance.unwrap() > 0.0);
    }

    #[test]
    fn affine_series_has_zero_roughness() {
        // Linearly ramping speed: second differences vanish.
        let states: Vec<AgentState2> = (0..15)
            .map(|i| AgentState2::new(i, i as f64, 0.0, 0.0, 1.0 + 0.3 * i as f64))
            .collect();
        let track = Track::from_states(1, SourceTag::Gt, states).unwrap();
        let r = &smoothness(&track)[0];
        assert_relative_eq!(r.roughness_speed.unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn heading_roughness_ignores_pi_crossing() {
        // Steady turn across the ±π seam: wrapped first differences are
        // constant, so roughness stays 0 despite the numeric jump.
        let states: Vec<AgentState2> = (0..12)
            .map(|i| AgentState2::new(i, 0.0, 0.0, PI - 0.1 + 0.05 * i as f64, 1.0))
            .collect();
        let track = Track::from_states(1, SourceTag::Gt, states).unwrap();
        let r = &smoothness(&track)[0];
        assert_relative_eq!(r.roughness_heading.unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn short_segments_yield_series_only() {
        let states = vec![
            AgentState2::new(0, 0.0, 0.0, 0.0, 1.0),
            AgentState2::new(1, 0.5, 0.0, 0.0, 1.0),
        ];
        let track = Track::from_states(1, SourceTag::Gt, states).unwrap();
        let r = &smoothness(&track)[0];
        assert_eq!(r.step_distance_series.len(), 1);
        assert!(r.roughness_speed.is_none());
        assert!(r.roughness_heading.is_none());
        assert!(r.roughness_step_distance.is_none());
    }

    #[test]
    fn rigid_motion_leaves_step_and_speed_series_unchanged() {
        let track = straight_track(20, 8.0);
        let (c, s) = (0.77f64.cos(), 0.77f64.sin());
        let moved = track.map_states(track.source_tag, |st| {
            AgentState2::new(
                st.frame,
                c * st.x - s * st.y + 4.0,
                s * st.x + c * st.y - 2.0,
                st.heading + 0.77,
                st.speed,
            )
        });
        let (a, b) = (&smoothness(&track)[0], &smoothness(&moved)[0]);
        for (u, v) in a.step_distance_series.iter().zip(&b.step_distance_series) {
            assert!((u - v).abs() < 1e-9);
        }
        for (u, v) in a.heading_series.iter().zip(&b.heading_series) {
            assert!(wrap_angle(v - u - 0.77).abs() < 1e-9);
        }
        assert!((a.roughness_heading.unwrap() - b.roughness_heading.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn compare_track_with_itself() {
        let track = straight_track(30, 5.0);
        let cmp = compare_sources(&[
            ("raw".to_string(), &track),
            ("copy".to_string(), &track),
        ])
        .unwrap();
        assert_eq!(cmp.frames.len(), 30);
        let (a, b) = (&cmp.sources[0], &cmp.sources[1]);
        assert_eq!(a.speed, b.speed);
        assert_eq!(a.roughness_speed, b.roughness_speed);
        assert_eq!(a.roughness_heading, b.roughness_heading);
    }

    #[test]
    fn jittered_copy_is_rougher_everywhere() {
        let clean = straight_track(60, 5.0);
        let noisy = clean.map_states(SourceTag::Gt, |s| {
            let bump = if s.frame % 2 == 0 { 0.05 } else { -0.05 };
            AgentState2::new(s.frame, s.x + bump, s.y - bump, s.heading + bump, s.speed + bump)
        });
        let cmp = compare_sources(&[
            ("clean".to_string(), &clean),
            ("noisy".to_string(), &noisy),
        ])
        .unwrap();
        let (a, b) = (&cmp.sources[0], &cmp.sources[1]);
        assert!(b.roughness_step_distance.unwrap() > a.roughness_step_distance.unwrap());
        assert!(b.roughness_speed.unwrap() > a.roughness_speed.unwrap());
        assert!(b.roughness_heading.unwrap() > a.roughness_heading.unwrap());
    }

    #[test]
    fn disjoint_tracks_cannot_be_compared() {
        let a = straight_track(10, 5.0);
        let b = a.map_states(SourceTag::Gt, |s| {
            AgentState2::new(s.frame + 100, s.x, s.y, s.heading, s.speed)
        });
        assert!(matches!(
            compare_sources(&[("a".to_string(), &a), ("b".to_string(), &b)]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn comparison_restricted_to_overlap() {
        let long = straight_track(40, 5.0);
        let short = Track::from_states(
            1,
            SourceTag::Estimated,
            (10..25)
                .map(|i| AgentState2::new(i, i as f64, 0.0, 0.0, 5.0))
                .collect(),
        )
        .unwrap();
        let cmp = compare_sources(&[
            ("long".to_string(), &long),
            ("short".to_string(), &short),
        ])
        .unwrap();
        assert_eq!(cmp.frames.first(), Some(&10));
        assert_eq!(cmp.frames.last(), Some(&24));
        assert_eq!(cmp.sources[0].speed.len(), 15);
    }

    #[test]
    fn csv_emitters_are_well_formed() {
        let track = straight_track(10, 5.0);
        let reports = smoothness(&track);
        let series = report_series_csv("synthetic", &reports);
        assert!(series.starts_with("frame,series,source,value\n"));
        // 9 step rows + 10 speed rows + 10 heading rows + header.
        assert_eq!(series.lines().count(), 1 + 9 + 10 + 10);
        let rough = report_roughness_csv("synthetic", &reports);
        assert_eq!(rough.lines().count(), 1 + 3);

        let cmp = compare_sources(&[
            ("a".to_string(), &track),
            ("b".to_string(), &track),
        ])
        .unwrap();
        let cseries = comparison_series_csv(&cmp);
        assert!(cseries.lines().all(|l| l.split(',').count() == 4));
        let crough = comparison_roughness_csv(&cmp);
        assert!(crough.starts_with("series,source,roughness,rank\n"));
        // Identical tracks tie on roughness; the label breaks the tie.
        assert!(crough.contains("heading,a,"));
        assert!(crough.contains(",1\n"));
        assert!(crough.contains("step_distance,b,"));
        assert!(crough.contains(",2\n"));
    }
}
