//! Built-in kinematic predictors — single-integrator constant velocity and
//! the dynamically-extended unicycle — plus a batch file-exchange adapter
//! for external predictors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::ingest::fmt9;
use crate::track::FrameClock;
use crate::windowing::PredictionInstance;

/// Physical plausibility limits applied to unicycle controls per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    /// Turn-rate bound, rad/s; controls are clamped to ±this.
    pub max_turn_rate: f64,
    /// Acceleration bound, m/s²; controls are clamped to ±this.
    pub max_accel: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            max_turn_rate: 0.7,
            max_accel: 4.0,
        }
    }
}

impl ControlLimits {
    pub fn new(max_turn_rate: f64, max_accel: f64) -> Result<Self> {
        if !(max_turn_rate > 0.0 && max_turn_rate.is_finite())
            || !(max_accel > 0.0 && max_accel.is_finite())
        {
            return Err(Error::Config(format!(
                "control limits must be positive, got turn rate {max_turn_rate}, accel {max_accel}"
            )));
        }
        Ok(Self {
            max_turn_rate,
            max_accel,
        })
    }
}

/// A horizon-long sequence of predicted planar positions for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectory {
    pub object_id: i64,
    pub anchor_frame: i64,
    pub predictor_tag: String,
    pub points: Vec<[f64; 2]>,
}

/// Unicycle rollout state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl UnicycleState {
    pub fn from_agent(s: &crate::track::AgentState2) -> Self {
        Self {
            x: s.x,
            y: s.y,
            heading: s.heading,
            speed: s.speed,
        }
    }
}

/// One explicit-Euler unicycle step without control clamping: heading and
/// speed update first (speed floored at 0), then the position moves along
/// the new heading at the new speed.
pub fn unicycle_step_raw(state: UnicycleState, accel: f64, turn_rate: f64, dt: f64) -> UnicycleState {
    let heading = wrap_angle(state.heading + turn_rate * dt);
    let speed = (state.speed + accel * dt).max(0.0);
    UnicycleState {
        x: state.x + speed * heading.cos() * dt,
        y: state.y + speed * heading.sin() * dt,
        heading,
        speed,
    }
}

/// [`unicycle_step_raw`] with the controls clamped to `limits` first.
pub fn unicycle_step(
    state: UnicycleState,
    accel: f64,
    turn_rate: f64,
    limits: &ControlLimits,
    dt: f64,
) -> UnicycleState {
    unicycle_step_raw(
        state,
        accel.clamp(-limits.max_accel, limits.max_accel),
        turn_rate.clamp(-limits.max_turn_rate, limits.max_turn_rate),
        dt,
    )
}

/// Control source for the unicycle predictor.
#[derive(Debug, Clone, Copy)]
pub enum UnicycleControls<'a> {
    /// One (accel, turn-rate) pair held for the whole horizon.
    Constant { accel: f64, turn_rate: f64 },
    /// Explicit per-step (accel, turn-rate) pairs, one per horizon step.
    PerStep(&'a [(f64, f64)]),
    /// Least-squares constant fit to the observed speed and wrapped-heading
    /// differences, clamped once and held.
    FittedConstant,
}

/// Single-integrator baseline: hold the most recent observed velocity.
///
/// The velocity vector is the displacement between the last two observed
/// states (history plus anchor) divided by dt; a single observed state
/// predicts standstill.
pub fn predict_constant_velocity(
    instance: &PredictionInstance,
    clock: FrameClock,
) -> PredictedTrajectory {
    let dt = clock.dt();
    let observed = instance.observed();
    let (vx, vy) = if observed.len() >= 2 {
        let a = &observed[observed.len() - 2];
        let b = &observed[observed.len() - 1];
        ((b.x - a.x) / dt, (b.y - a.y) / dt)
    } else {
        (0.0, 0.0)
    };
    let horizon = instance.future_truth.len();
    let points = (1..=horizon)
        .map(|t| {
            [
                instance.anchor.x + vx * dt * t as f64,
                instance.anchor.y + vy * dt * t as f64,
            ]
        })
        .collect();
    PredictedTrajectory {
        object_id: instance.object_id,
        anchor_frame: instance.anchor_frame,
        predictor_tag: "cv".into(),
        points,
    }
}

/// Fit one constant (accel, turn-rate) pair to the observed window: the
/// least-squares constant for a difference series is its mean.
fn fit_constant_controls(instance: &PredictionInstance, dt: f64) -> (f64, f64) {
    let observed = instance.observed();
    if observed.len() < 2 {
        return (0.0, 0.0);
    }
    let n = (observed.len() - 1) as f64;
    let mut dv = 0.0;
    let mut dh = 0.0;
    for w in observed.windows(2) {
        dv += w[1].speed - w[0].speed;
        dh += wrap_angle(w[1].heading - w[0].heading);
    }
    (dv / n / dt, dh / n / dt)
}

/// Roll the unicycle forward from the anchor, returning every intermediate
/// state (anchor first, then one state per horizon step).
pub fn unicycle_rollout(
    instance: &PredictionInstance,
    controls: UnicycleControls,
    limits: &ControlLimits,
    clock: FrameClock,
) -> Result<Vec<UnicycleState>> {
    let dt = clock.dt();
    let horizon = instance.future_truth.len();
    if let UnicycleControls::PerStep(seq) = controls {
        if seq.len() != horizon {
            return Err(Error::Contract(format!(
                "per-step control sequence has {} entries for a {horizon}-step horizon",
                seq.len()
            )));
        }
    }
    let fitted = match controls {
        UnicycleControls::FittedConstant => {
            let (a, w) = fit_constant_controls(instance, dt);
            Some((
                a.clamp(-limits.max_accel, limits.max_accel),
                w.clamp(-limits.max_turn_rate, limits.max_turn_rate),
            ))
        }
        _ => None,
    };

    let mut state = UnicycleState::from_agent(&instance.anchor);
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(state);
    for t in 0..horizon {
        let (accel, turn_rate) = match controls {
            UnicycleControls::Constant { accel, turn_rate } => (accel, turn_rate),
            UnicycleControls::PerStep(seq) => seq[t],
            UnicycleControls::FittedConstant => fitted.unwrap(),
        };
        state = unicycle_step(state, accel, turn_rate, limits, dt);
        states.push(state);
    }
    Ok(states)
}

/// Dynamically-extended-unicycle predictor: explicit-Euler rollout of the
/// anchor state under per-step-clamped controls.
pub fn predict_unicycle(
    instance: &PredictionInstance,
    controls: UnicycleControls,
    limits: &ControlLimits,
    clock: FrameClock,
) -> Result<PredictedTrajectory> {
    let states = unicycle_rollout(instance, controls, limits, clock)?;
    Ok(PredictedTrajectory {
        object_id: instance.object_id,
        anchor_frame: instance.anchor_frame,
        predictor_tag: "unicycle".into(),
        points: states[1..].iter().map(|s| [s.x, s.y]).collect(),
    })
}

/// Prediction exchange header; steps run 1..=horizon.
pub const PREDICTION_CSV_HEADER: &str = "object_id,anchor_frame,step,x,y";

/// Serialize predictions into the exchange format.
pub fn write_prediction_csv(predictions: &[PredictedTrajectory]) -> String {
    let mut out = String::from(PREDICTION_CSV_HEADER);
    out.push('\n');
    for p in predictions {
        for (i, point) in p.points.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.object_id,
                p.anchor_frame,
                i + 1,
                fmt9(point[0]),
                fmt9(point[1]),
            ));
        }
    }
    out
}

pub fn write_prediction_csv_file(predictions: &[PredictedTrajectory], path: &Path) -> Result<()> {
    crate::ingest::write_file(path, &write_prediction_csv(predictions))
}

/// Parse an exchange file. Steps must run 1..=T contiguously per
/// (object_id, anchor_frame) key; trajectories come back keyed and sorted.
pub fn parse_prediction_csv(
    content: &str,
    origin: &str,
    predictor_tag: &str,
) -> Result<Vec<PredictedTrajectory>> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == PREDICTION_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("expected header '{PREDICTION_CSV_HEADER}'"),
            })
        }
    }
    let mut rows: BTreeMap<(i64, i64), Vec<(i64, f64, f64)>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split(',').collect();
        if tokens.len() != 5 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("expected 5 columns, got {}", tokens.len()),
            });
        }
        let mut ints = [0i64; 3];
        for (k, v) in ints.iter_mut().enumerate() {
            *v = tokens[k].parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("invalid integer '{}'", tokens[k]),
            })?;
        }
        let x: f64 = tokens[3].parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("invalid x value '{}'", tokens[3]),
        })?;
        let y: f64 = tokens[4].parse().map_err(|_| Error::Parse {
            path: origin.to_string(),
            line,
            message: format!("invalid y value '{}'", tokens[4]),
        })?;
        rows.entry((ints[0], ints[1])).or_default().push((ints[2], x, y));
    }
    let mut out = Vec::with_capacity(rows.len());
    for ((object_id, anchor_frame), mut steps) in rows {
        steps.sort_by_key(|r| r.0);
        for (i, (step, _, _)) in steps.iter().enumerate() {
            if *step != i as i64 + 1 {
                return Err(Error::Contract(format!(
                    "format error: prediction ({object_id}, {anchor_frame}) steps are not 1..={} ({origin})",
                    steps.len()
                )));
            }
        }
        out.push(PredictedTrajectory {
            object_id,
            anchor_frame,
            predictor_tag: predictor_tag.to_string(),
            points: steps.into_iter().map(|(_, x, y)| [x, y]).collect(),
        });
    }
    Ok(out)
}

/// Align predictions to instances one-to-one by (object_id, anchor_frame).
///
/// Every instance must be covered with exactly the instance's horizon of
/// points, and no prediction may target an unknown instance.
/// First few offending keys, with a count for the rest.
fn abbreviate_keys(keys: &[String]) -> String {
    const SHOWN: usize = 8;
    if keys.len() <= SHOWN {
        keys.join(", ")
    } else {
        format!(
            "{}, ... and {} more",
            keys[..SHOWN].join(", "),
            keys.len() - SHOWN
        )
    }
}

pub fn match_predictions(
    instances: &[PredictionInstance],
    predictions: &[PredictedTrajectory],
) -> Result<Vec<PredictedTrajectory>> {
    let mut by_key: BTreeMap<(i64, i64), &PredictedTrajectory> = BTreeMap::new();
    for p in predictions {
        if by_key.insert((p.object_id, p.anchor_frame), p).is_some() {
            return Err(Error::Contract(format!(
                "format error: duplicate prediction for ({}, {})",
                p.object_id, p.anchor_frame
            )));
        }
    }
    let wanted: std::collections::BTreeSet<(i64, i64)> = instances
        .iter()
        .map(|i| (i.object_id, i.anchor_frame))
        .collect();
    let missing: Vec<String> = wanted
        .iter()
        .filter(|k| !by_key.contains_key(k))
        .map(|(o, a)| format!("({o}, {a})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Contract(format!(
            "coverage error: no prediction for {} instance(s): {}",
            missing.len(),
            abbreviate_keys(&missing)
        )));
    }
    let unmatched: Vec<String> = by_key
        .keys()
        .filter(|k| !wanted.contains(k))
        .map(|(o, a)| format!("({o}, {a})"))
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Contract(format!(
            "coverage error: predictions for {} unknown instance(s): {}",
            unmatched.len(),
            abbreviate_keys(&unmatched)
        )));
    }
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let p = by_key[&(inst.object_id, inst.anchor_frame)];
        if p.points.len() != inst.future_truth.len() {
            return Err(Error::Contract(format!(
                "format error: prediction ({}, {}) has {} points, expected {}",
                inst.object_id,
                inst.anchor_frame,
                p.points.len(),
                inst.future_truth.len()
            )));
        }
        out.push(p.clone());
    }
    Ok(out)
}

/// Run an external predictor through one batch file exchange.
///
/// Instances are written to `<workdir>/instances.csv`; the command string
/// has `{instances}` and `{predictions}` placeholders substituted and runs
/// under `sh -c` in `workdir`. The predictor must write the exchange format
/// to the predictions path, covering every instance.
pub fn run_external_predictor(
    instances: &[PredictionInstance],
    command: &str,
    workdir: &Path,
    predictor_tag: &str,
) -> Result<Vec<PredictedTrajectory>> {
    // The command runs with `workdir` as its working directory, so the
    // substituted paths must be absolute or they would resolve against the
    // wrong base whenever `workdir` itself is relative.
    let workdir = workdir.canonicalize().map_err(|e| Error::io(workdir, e))?;
    let instances_path = workdir.join("instances.csv");
    let predictions_path = workdir.join("predictions.csv");
    crate::windowing::write_instance_csv_file(instances, &instances_path)?;

    let resolved = command
        .replace("{instances}", &instances_path.display().to_string())
        .replace("{predictions}", &predictions_path.display().to_string());
    let status = std::process::Command::new("sh")
        .arg("-c")
        .arg(&resolved)
        .current_dir(&workdir)
        .status()
        .map_err(|e| Error::io(&workdir, e))?;
    if !status.success() {
        return Err(Error::Contract(format!(
            "external predictor exited with {status}: {resolved}"
        )));
    }
    let content =
        std::fs::read_to_string(&predictions_path).map_err(|e| Error::io(&predictions_path, e))?;
    let predictions = parse_prediction_csv(
        &content,
        &predictions_path.display().to_string(),
        predictor_tag,
    )?;
    match_predictions(instances, &predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{AgentState2, SourceTag};
    use crate::windowing::{make_instances, WindowSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn clock() -> FrameClock {
        FrameClock::default()
    }

    /// Hand-built instance: `observed` states become history+anchor, truth
    /// is synthesized with the right length (contents ignored by rollouts).
    fn instance_from(observed: &[AgentState2], horizon: usize) -> PredictionInstance {
        let anchor = *observed.last().unwrap();
        let future_truth = (1..=horizon)
            .map(|t| AgentState2::new(anchor.frame + t as i64, 0.0, 0.0, 0.0, 0.0))
            .collect();
        PredictionInstance {
            object_id: 1,
            source_tag: SourceTag::Synthetic,
            anchor_frame: anchor.frame,
            history: observed[..observed.len() - 1].to_vec(),
            anchor,
            future_truth,
        }
    }

    fn cruising_instance(speed: f64, heading: f64, horizon: usize) -> PredictionInstance {
        let dt = clock().dt();
        let observed: Vec<AgentState2> = (0..3)
            .map(|i| {
                AgentState2::new(
                    i,
                    speed * heading.cos() * dt * i as f64,
                    speed * heading.sin() * dt * i as f64,
                    heading,
                    speed,
                )
            })
            .collect();
        instance_from(&observed, horizon)
    }

    #[test]
    fn cv_stationary_history_stays_put() {
        let observed = vec![
            AgentState2::new(0, 3.0, -1.0, 0.2, 0.0),
            AgentState2::new(1, 3.0, -1.0, 0.2, 0.0),
        ];
        let pred = predict_constant_velocity(&instance_from(&observed, 30), clock());
        for p in &pred.points {
            assert_relative_eq!(p[0], 3.0, epsilon = 1e-12);
            assert_relative_eq!(p[1], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cv_two_meters_per_second_reaches_three_meters() {
        let pred = predict_constant_velocity(&cruising_instance(2.0, 0.0, 30), clock());
        assert_eq!(pred.points.len(), 30);
        let last = pred.points.last().unwrap();
        let anchor_x = 2.0 * clock().dt() * 2.0;
        assert_relative_eq!(last[0] - anchor_x, 3.0, epsilon = 1e-9);
        assert_relative_eq!(last[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cv_extrapolates_last_displacement_of_curved_history() {
        // Observed states on a circle; the prediction is the straight line
        // through the last chord, verified against the closed form.
        let dt = clock().dt();
        let observed: Vec<AgentState2> = (0..4)
            .map(|i| {
                let phi = 0.3 * i as f64;
                AgentState2::new(i, 5.0 * phi.cos(), 5.0 * phi.sin(), 0.0, 1.0)
            })
            .collect();
        let inst = instance_from(&observed, 10);
        let pred = predict_constant_velocity(&inst, clock());
        let a = &observed[2];
        let b = &observed[3];
        for (t, p) in pred.points.iter().enumerate() {
            let scale = (t + 1) as f64;
            let ex = b.x + (b.x - a.x) / dt * dt * scale;
            let ey = b.y + (b.y - a.y) / dt * dt * scale;
            assert_relative_eq!(p[0], ex, epsilon = 1e-9);
            assert_relative_eq!(p[1], ey, epsilon = 1e-9);
        }
    }

    #[test]
    fn unicycle_zero_controls_cruises_straight() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let pred = predict_unicycle(
            &inst,
            UnicycleControls::Constant { accel: 0.0, turn_rate: 0.0 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        let last = pred.points.last().unwrap();
        assert_relative_eq!(last[0] - inst.anchor.x, 3.0, epsilon = 1e-9);
        assert_relative_eq!(last[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn turn_rate_request_clamps_to_limit() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::Constant { accel: 0.0, turn_rate: 1.0 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        // 10 steps at the clamped 0.7 rad/s, 20 Hz.
        assert_relative_eq!(states[10].heading, 0.35, epsilon = 1e-12);
        // Independent re-integration with the clamp applied by hand.
        let dt = clock().dt();
        let mut theta = inst.anchor.heading;
        for _ in 0..10 {
            theta += 0.7 * dt;
        }
        assert_relative_eq!(states[10].heading, theta, epsilon = 1e-12);
    }

    #[test]
    fn accel_request_clamps_to_limit() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::Constant { accel: 10.0, turn_rate: 0.0 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        let dt = clock().dt();
        for (k, s) in states.iter().enumerate() {
            assert_relative_eq!(s.speed, 2.0 + 4.0 * dt * k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn speed_floors_at_zero_under_braking() {
        let inst = cruising_instance(0.5, 0.0, 30);
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::Constant { accel: -4.0, turn_rate: 0.0 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        assert!(states.iter().all(|s| s.speed >= 0.0));
        assert_relative_eq!(states.last().unwrap().speed, 0.0);
        // Position freezes once stopped.
        assert_relative_eq!(states[20].x, states[29].x, epsilon = 1e-12);
    }

    #[test]
    fn per_step_controls_length_checked() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let controls = vec![(0.0, 0.0); 29];
        assert!(matches!(
            predict_unicycle(
                &inst,
                UnicycleControls::PerStep(&controls),
                &ControlLimits::default(),
                clock(),
            ),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn fitted_constant_recovers_steady_controls() {
        // Observed window generated with constant a=1.0, w=0.3.
        let dt = clock().dt();
        let mut state = UnicycleState { x: 0.0, y: 0.0, heading: 0.1, speed: 3.0 };
        let mut observed = vec![AgentState2::new(0, state.x, state.y, state.heading, state.speed)];
        for i in 1..7 {
            state = unicycle_step_raw(state, 1.0, 0.3, dt);
            observed.push(AgentState2::new(i, state.x, state.y, state.heading, state.speed));
        }
        let inst = instance_from(&observed, 30);
        let rollout = unicycle_rollout(
            &inst,
            UnicycleControls::FittedConstant,
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        // The fitted pair continues the same motion exactly.
        let mut expect = UnicycleState::from_agent(&inst.anchor);
        for s in &rollout[1..] {
            expect = unicycle_step_raw(expect, 1.0, 0.3, dt);
            assert_relative_eq!(s.x, expect.x, epsilon = 1e-9);
            assert_relative_eq!(s.y, expect.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn fitted_constant_clamps_aggressive_windows() {
        let dt = clock().dt();
        // Speed jumps 1.0 per frame => 20 m/s² requested.
        let observed: Vec<AgentState2> = (0..4)
            .map(|i| AgentState2::new(i, i as f64 * 0.5, 0.0, 0.0, 1.0 + i as f64))
            .collect();
        let inst = instance_from(&observed, 10);
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::FittedConstant,
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        for w in states.windows(2) {
            assert!((w[1].speed - w[0].speed) / dt <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn zero_control_unicycle_matches_cv_when_aligned() {
        let inst = cruising_instance(3.0, 0.8, 30);
        let uni = predict_unicycle(
            &inst,
            UnicycleControls::Constant { accel: 0.0, turn_rate: 0.0 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        let cv = predict_constant_velocity(&inst, clock());
        for (a, b) in uni.points.iter().zip(&cv.points) {
            assert_relative_eq!(a[0], b[0], epsilon = 1e-9);
            assert_relative_eq!(a[1], b[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn predictions_are_bit_identical_across_runs() {
        let inst = cruising_instance(2.0, 0.3, 30);
        let a = predict_unicycle(
            &inst,
            UnicycleControls::FittedConstant,
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        let b = predict_unicycle(
            &inst,
            UnicycleControls::FittedConstant,
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
            assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
    }

    #[test]
    fn rigid_motion_equivariance() {
        let inst = cruising_instance(2.5, 0.4, 20);
        let (phi, tx, ty) = (1.1f64, -4.0, 7.5);
        let (c, s) = (phi.cos(), phi.sin());
        let xf = |st: &AgentState2| {
            AgentState2::new(
                st.frame,
                c * st.x - s * st.y + tx,
                s * st.x + c * st.y + ty,
                st.heading + phi,
                st.speed,
            )
        };
        let moved = PredictionInstance {
            object_id: inst.object_id,
            source_tag: inst.source_tag,
            anchor_frame: inst.anchor_frame,
            history: inst.history.iter().map(xf).collect(),
            anchor: xf(&inst.anchor),
            future_truth: inst.future_truth.iter().map(xf).collect(),
        };
        for (a, b) in [
            (
                predict_constant_velocity(&inst, clock()).points,
                predict_constant_velocity(&moved, clock()).points,
            ),
            (
                predict_unicycle(
                    &inst,
                    UnicycleControls::FittedConstant,
                    &ControlLimits::default(),
                    clock(),
                )
                .unwrap()
                .points,
                predict_unicycle(
                    &moved,
                    UnicycleControls::FittedConstant,
                    &ControlLimits::default(),
                    clock(),
                )
                .unwrap()
                .points,
            ),
        ] {
            for (p, q) in a.iter().zip(&b) {
                assert_relative_eq!(c * p[0] - s * p[1] + tx, q[0], epsilon = 1e-9);
                assert_relative_eq!(s * p[0] + c * p[1] + ty, q[1], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn clamp_invariant_on_random_controls() {
        let dt = clock().dt();
        let limits = ControlLimits::default();
        let inst = cruising_instance(2.0, -0.5, 30);
        let controls: Vec<(f64, f64)> = (0..30)
            .map(|i| (((i * 37) % 17) as f64 - 8.0, ((i * 23) % 11) as f64 * 0.3 - 1.5))
            .collect();
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::PerStep(&controls),
            &limits,
            clock(),
        )
        .unwrap();
        for w in states.windows(2) {
            assert!(wrap_angle(w[1].heading - w[0].heading).abs() / dt <= limits.max_turn_rate + 1e-9);
            assert!((w[1].speed - w[0].speed).abs() / dt <= limits.max_accel + 1e-9);
        }
    }

    #[test]
    fn heading_wraps_during_long_turns() {
        let inst = cruising_instance(2.0, PI - 0.05, 60);
        let states = unicycle_rollout(
            &inst,
            UnicycleControls::Constant { accel: 0.0, turn_rate: 0.7 },
            &ControlLimits::default(),
            clock(),
        )
        .unwrap();
        for s in &states {
            assert!(s.heading > -PI && s.heading <= PI);
        }
    }

    #[test]
    fn prediction_csv_roundtrip() {
        let inst = cruising_instance(2.0, 0.3, 30);
        let preds = vec![
            predict_constant_velocity(&inst, clock()),
        ];
        let csv = write_prediction_csv(&preds);
        assert!(csv.starts_with("object_id,anchor_frame,step,x,y\n"));
        let back = parse_prediction_csv(&csv, "mem", "cv").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].points.len(), 30);
        for (a, b) in preds[0].points.iter().zip(&back[0].points) {
            assert!((a[0] - b[0]).abs() < 1e-9);
            assert!((a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_prediction_is_coverage_error() {
        let spec = WindowSpec::default();
        let dt = clock().dt();
        let states: Vec<AgentState2> = (0..40)
            .map(|i| AgentState2::new(i, 2.0 * dt * i as f64, 0.0, 0.0, 2.0))
            .collect();
        let track = crate::track::Track::from_states(1, SourceTag::Synthetic, states).unwrap();
        let instances = make_instances(&track, &spec);
        let mut preds: Vec<PredictedTrajectory> = instances
            .iter()
            .map(|i| predict_constant_velocity(i, clock()))
            .collect();
        let dropped = preds.remove(3);
        let err = match_predictions(&instances, &preds).unwrap_err();
        match err {
            Error::Contract(msg) => {
                assert!(msg.contains("coverage"));
                assert!(msg.contains(&format!("({}, {})", dropped.object_id, dropped.anchor_frame)));
            }
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn short_prediction_is_format_error() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let mut pred = predict_constant_velocity(&inst, clock());
        pred.points.pop();
        let err = match_predictions(std::slice::from_ref(&inst), &[pred]).unwrap_err();
        match err {
            Error::Contract(msg) => assert!(msg.contains("29 points")),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn external_echo_predictor_matches_builtin() {
        let spec = WindowSpec::default();
        let dt = clock().dt();
        let states: Vec<AgentState2> = (0..40)
            .map(|i| AgentState2::new(i, 2.0 * dt * i as f64, 1.0, 0.0, 2.0))
            .collect();
        let track = crate::track::Track::from_states(4, SourceTag::Synthetic, states).unwrap();
        let instances = make_instances(&track, &spec);
        let builtin: Vec<PredictedTrajectory> = instances
            .iter()
            .map(|i| predict_constant_velocity(i, clock()))
            .collect();

        let dir = tempfile::tempdir().unwrap();
        let canned = dir.path().join("canned.csv");
        write_prediction_csv_file(&builtin, &canned).unwrap();
        let external = run_external_predictor(
            &instances,
            &format!("cp {} {{predictions}}", canned.display()),
            dir.path(),
            "external",
        )
        .unwrap();
        assert_eq!(external.len(), builtin.len());
        for (a, b) in external.iter().zip(&builtin) {
            assert_eq!(a.anchor_frame, b.anchor_frame);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p[0] - q[0]).abs() < 1e-9);
                assert!((p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn failing_external_command_reported() {
        let inst = cruising_instance(2.0, 0.0, 30);
        let dir = tempfile::tempdir().unwrap();
        let err = run_external_predictor(std::slice::from_ref(&inst), "false", dir.path(), "x")
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn invalid_limits_rejected() {
        assert!(ControlLimits::new(0.0, 4.0).is_err());
        assert!(ControlLimits::new(0.7, -1.0).is_err());
        assert!(ControlLimits::new(0.7, 4.0).is_ok());
    }
}
