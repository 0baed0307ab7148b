//! Displacement metrics (ADE, FDE, ACE), relative pose error, batch
//! scoring, and count-weighted aggregation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::Pose3;
use crate::ingest::fmt9;
use crate::predictors::PredictedTrajectory;
use crate::windowing::PredictionInstance;

/// Displacement metrics for one prediction instance. `ace` is absent for
/// the last anchor of a segment, which has no successor prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    pub object_id: i64,
    pub anchor_frame: i64,
    pub ade: f64,
    pub fde: f64,
    pub ace: Option<f64>,
}

/// Relative pose error between an estimated and a reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeScore {
    /// RMSE of per-interval translation error norms, meters.
    pub rpe_t_rmse: f64,
    /// RMSE of per-interval rotation error angles, degrees.
    pub rpe_r_rmse: f64,
    /// Frame interval the errors were measured over.
    pub delta: i64,
    /// Number of (k, k+delta) pairs the RMSE averages.
    pub n_pairs: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 || a != b {
        return Err(Error::Contract(format!(
            "trajectory length mismatch: {a} predicted vs {b} truth points"
        )));
    }
    Ok(())
}

/// Mean Euclidean displacement between paired 2D points.
pub fn ade_points(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Euclidean displacement between the final paired 2D points.
pub fn fde_points(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let (p, t) = (pred[pred.len() - 1], truth[truth.len() - 1]);
    Ok(((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
}

/// Average displacement error of a prediction against truth points.
pub fn ade(pred: &PredictedTrajectory, truth: &[[f64; 2]]) -> Result<f64> {
    ade_points(&pred.points, truth)
}

/// Final displacement error of a prediction against truth points.
pub fn fde(pred: &PredictedTrajectory, truth: &[[f64; 2]]) -> Result<f64> {
    fde_points(&pred.points, truth)
}

/// Absolute consistency error between predictions anchored at s and s+1:
/// the distance between the first prediction's final point and the second's
/// second-to-last point, which target the same absolute frame.
pub fn ace(pred_at_s: &PredictedTrajectory, pred_at_s_plus_1: &PredictedTrajectory) -> Result<f64> {
    if pred_at_s.object_id != pred_at_s_plus_1.object_id {
        return Err(Error::Contract(format!(
            "consistency error needs one object, got {} and {}",
            pred_at_s.object_id, pred_at_s_plus_1.object_id
        )));
    }
    if pred_at_s_plus_1.anchor_frame != pred_at_s.anchor_frame + 1 {
        return Err(Error::Contract(format!(
            "consistency error needs consecutive anchors, got {} and {}",
            pred_at_s.anchor_frame, pred_at_s_plus_1.anchor_frame
        )));
    }
    let t = pred_at_s.points.len();
    if t < 2 || pred_at_s_plus_1.points.len() != t {
        return Err(Error::Contract(format!(
            "consistency error needs equal horizons of at least 2, got {} and {}",
            t,
            pred_at_s_plus_1.points.len()
        )));
    }
    let p = pred_at_s.points[t - 1];
    let q = pred_at_s_plus_1.points[t - 2];
    Ok(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
}

/// Relative pose error per Sturm's definition: for each frame k with both
/// trajectories defined at k and k+delta, the error transform is
/// E = (Q_k⁻¹ Q_{k+δ})⁻¹ (P_k⁻¹ P_{k+δ}) with Q the reference chain and P
/// the estimate; translation norms and rotation angles are aggregated as
/// RMSE (rotation in degrees).
pub fn rpe(
    reference: &BTreeMap<i64, Pose3>,
    estimate: &BTreeMap<i64, Pose3>,
    delta: i64,
) -> Result<RpeScore> {
    if delta < 1 {
        return Err(Error::Config(format!("rpe delta must be >= 1, got {delta}")));
    }
    let common: Vec<i64> = reference
        .keys()
        .filter(|k| estimate.contains_key(k))
        .copied()
        .collect();
    if common.len() < (delta + 1) as usize {
        return Err(Error::Data(format!(
            "rpe needs at least {} common frames, found {}",
            delta + 1,
            common.len()
        )));
    }
    let have: std::collections::BTreeSet<i64> = common.iter().copied().collect();
    let mut t_sq = 0.0;
    let mut r_sq = 0.0;
    let mut n = 0usize;
    for &k in &common {
        if !have.contains(&(k + delta)) {
            continue;
        }
        let q_rel = reference[&k].inverse().compose(&reference[&(k + delta)]);
        let p_rel = estimate[&k].inverse().compose(&estimate[&(k + delta)]);
        let e = q_rel.inverse().compose(&p_rel);
        t_sq += e.translation().norm_squared();
        r_sq += e.rotation_angle().powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data(format!(
            "no frame pairs at interval {delta} among the common frames"
        )));
    }
    Ok(RpeScore {
        rpe_t_rmse: (t_sq / n as f64).sqrt(),
        rpe_r_rmse: (r_sq / n as f64).sqrt().to_degrees(),
        delta,
        n_pairs: n,
    })
}

/// Score every instance against its prediction: ADE and FDE per instance
/// plus ACE wherever the next-anchor prediction exists.
///
/// `predictions` must cover the instances exactly (same keys, same horizon).
pub fn score_batch(
    instances: &[PredictionInstance],
    predictions: &[PredictedTrajectory],
) -> Result<Vec<InstanceScore>> {
    let mut by_key: BTreeMap<(i64, i64), &PredictedTrajectory> = BTreeMap::new();
    for p in predictions {
        if by_key.insert((p.object_id, p.anchor_frame), p).is_some() {
            return Err(Error::Contract(format!(
                "duplicate prediction for ({}, {})",
                p.object_id, p.anchor_frame
            )));
        }
    }
    let mut scores = Vec::with_capacity(instances.len());
    for inst in instances {
        let key = (inst.object_id, inst.anchor_frame);
        let pred = by_key.get(&key).ok_or_else(|| {
            Error::Contract(format!("no prediction for instance ({}, {})", key.0, key.1))
        })?;
        let truth = inst.truth_points();
        let next = by_key.get(&(inst.object_id, inst.anchor_frame + 1));
        let ace_value = match next {
            Some(next_pred) => Some(ace(pred, next_pred)?),
            None => None,
        };
        scores.push(InstanceScore {
            object_id: inst.object_id,
            anchor_frame: inst.anchor_frame,
            ade: ade(pred, &truth)?,
            fde: fde(pred, &truth)?,
            ace: ace_value,
        });
    }
    Ok(scores)
}

/// Instance scores grouped under one sequence label.
#[derive(Debug, Clone)]
pub struct SequenceScores {
    pub sequence: String,
    pub scores: Vec<InstanceScore>,
}

/// One aggregated report row: per-sequence means, or the overall row
/// (sequence `avg`) weighted by instance counts. ACE averages over its own,
/// smaller count.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub sequence: String,
    pub instances: usize,
    pub ace_pairs: usize,
    pub mean_ade: f64,
    pub mean_fde: f64,
    pub mean_ace: Option<f64>,
}

/// Overall row label emitted by [`aggregate`].
pub const OVERALL_LABEL: &str = "avg";

/// Reduce grouped scores to per-sequence mean rows plus the count-weighted
/// overall row.
pub fn aggregate(groups: &[SequenceScores]) -> Result<Vec<AggregateRow>> {
    if groups.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    let mut rows = Vec::with_capacity(groups.len() + 1);
    let mut all_n = 0usize;
    let mut all_ace_n = 0usize;
    let (mut all_ade, mut all_fde, mut all_ace) = (0.0, 0.0, 0.0);
    for g in groups {
        if g.scores.is_empty() {
            return Err(Error::Data(format!("sequence '{}' has no scores", g.sequence)));
        }
        let n = g.scores.len();
        let sum_ade: f64 = g.scores.iter().map(|s| s.ade).sum();
        let sum_fde: f64 = g.scores.iter().map(|s| s.fde).sum();
        let aces: Vec<f64> = g.scores.iter().filter_map(|s| s.ace).collect();
        rows.push(AggregateRow {
            sequence: g.sequence.clone(),
            instances: n,
            ace_pairs: aces.len(),
            mean_ade: sum_ade / n as f64,
            mean_fde: sum_fde / n as f64,
            mean_ace: if aces.is_empty() {
                None
            } else {
                Some(aces.iter().sum::<f64>() / aces.len() as f64)
            },
        });
        all_n += n;
        all_ade += sum_ade;
        all_fde += sum_fde;
        all_ace_n += aces.len();
        all_ace += aces.iter().sum::<f64>();
    }
    rows.push(AggregateRow {
        sequence: OVERALL_LABEL.to_string(),
        instances: all_n,
        ace_pairs: all_ace_n,
        mean_ade: all_ade / all_n as f64,
        mean_fde: all_fde / all_n as f64,
        mean_ace: if all_ace_n == 0 {
            None
        } else {
            Some(all_ace / all_ace_n as f64)
        },
    });
    Ok(rows)
}

/// Per-instance report CSV; the ACE column is empty for the last anchor of
/// each segment.
pub fn instance_scores_csv(scores: &[InstanceScore]) -> String {
    let mut out = String::from("object_id,anchor_frame,ade,fde,ace\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.object_id,
            s.anchor_frame,
            fmt9(s.ade),
            fmt9(s.fde),
            s.ace.map(fmt9).unwrap_or_default(),
        ));
    }
    out
}

/// Aggregated report CSV, one row per sequence plus the overall row.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("sequence,instances,ace_pairs,mean_ade,mean_fde,mean_ace\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sequence,
            r.instances,
            r.ace_pairs,
            fmt9(r.mean_ade),
            fmt9(r.mean_fde),
            r.mean_ace.map(fmt9).unwrap_or_default(),
        ));
    }
    out
}

/// RPE report CSV.
pub fn rpe_csv(scores: &[(String, RpeScore)]) -> String {
    let mut out = String::from("label,delta,pairs,rpe_t_rmse_m,rpe_r_rmse_deg\n");
    for (label, s) in scores {
        out.push_str(&format!(
            "{label},{},{},{},{}\n",
            s.delta,
            s.n_pairs,
            fmt9(s.rpe_t_rmse),
            fmt9(s.rpe_r_rmse),
        ));
    }
    out
}
