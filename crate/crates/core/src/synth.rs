//! Synthetic track generation from piecewise-constant unicycle control
//! schedules, plus seeded Gaussian corruption for input-quality studies.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::ingest::derive_kinematics;
use crate::predictors::{unicycle_step_raw, UnicycleState};
use crate::track::{AgentState2, FrameClock, SourceTag, Track, TrackSegment};

/// One schedule entry: hold (accel, turn-rate) for a duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSegment {
    pub duration_s: f64,
    pub accel: f64,
    pub turn_rate: f64,
}

/// Declarative description of a synthetic trajectory: an initial planar
/// state and a piecewise-constant control schedule integrated at the clock
/// rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    pub object_id: i64,
    pub start: UnicycleState,
    pub schedule: Vec<ScheduleSegment>,
    pub clock: FrameClock,
}

impl MotionProfile {
    fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("motion profile schedule is empty".into()));
        }
        for (i, seg) in self.schedule.iter().enumerate() {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(Error::Config(format!(
                    "schedule segment {} duration must be positive, got {}",
                    i + 1,
                    seg.duration_s
                )));
            }
        }
        Ok(())
    }

    /// Parse the flat profile format: top-level `key=value` lines for the
    /// initial state (`object_id`, `x`, `y`, `heading`, `speed`, `rate_hz`),
    /// then one `[segment]` section per schedule entry with `duration`
    /// (seconds, required), `accel`, and `turn_rate` (both default 0).
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut profile = MotionProfile {
            object_id: 1,
            start: UnicycleState { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 },
            schedule: Vec::new(),
            clock: FrameClock::default(),
        };
        let mut current: Option<ScheduleSegment> = None;
        let mut rate_hz = profile.clock.rate_hz();

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[segment]" {
                if let Some(seg) = current.take() {
                    profile.schedule.push(seg);
                }
                current = Some(ScheduleSegment { duration_s: 0.0, accel: 0.0, turn_rate: 0.0 });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("profile line {}: expected key=value", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid {key} value '{value}'")))
            };
            match (&mut current, key) {
                (None, "object_id") => {
                    profile.object_id = value.parse().map_err(|_| {
                        Error::Config(format!("invalid object_id value '{value}'"))
                    })?
                }
                (None, "x") => profile.start.x = num()?,
                (None, "y") => profile.start.y = num()?,
                (None, "heading") => profile.start.heading = wrap_angle(num()?),
                (None, "speed") => profile.start.speed = num()?.max(0.0),
                (None, "rate_hz") => rate_hz = num()?,
                (Some(seg), "duration") => seg.duration_s = num()?,
                (Some(seg), "accel") => seg.accel = num()?,
                (Some(seg), "turn_rate") => seg.turn_rate = num()?,
                (scope, other) => {
                    let place = if scope.is_some() { "segment" } else { "profile" };
                    return Err(Error::Config(format!("unknown {place} key '{other}'")));
                }
            }
        }
        if let Some(seg) = current.take() {
            profile.schedule.push(seg);
        }
        profile.clock = FrameClock::new(rate_hz)?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Integrate a profile into an exact, noise-free track tagged
/// [`SourceTag::Synthetic`], starting at frame 0.
pub fn generate(profile: &MotionProfile) -> Result<Track> {
    profile.validate()?;
    let dt = profile.clock.dt();
    let mut state = profile.start;
    let mut states = vec![AgentState2::new(0, state.x, state.y, state.heading, state.speed)];
    let mut frame = 1i64;
    for seg in &profile.schedule {
        let steps = (seg.duration_s * profile.clock.rate_hz()).round() as i64;
        if steps < 1 {
            return Err(Error::Config(format!(
                "schedule segment of {} s yields no full frame at {} Hz",
                seg.duration_s,
                profile.clock.rate_hz()
            )));
        }
        for _ in 0..steps {
            state = unicycle_step_raw(state, seg.accel, seg.turn_rate, dt);
            states.push(AgentState2::new(frame, state.x, state.y, state.heading, state.speed));
            frame += 1;
        }
    }
    Track::from_states(profile.object_id, SourceTag::Synthetic, states)
}

/// Gaussian corruption parameters. Standard deviations may be zero; the
/// all-zero spec makes [`corrupt`] the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-axis position noise, meters.
    pub sigma_pos: f64,
    /// Heading noise, radians.
    pub sigma_heading: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_pos: f64, sigma_heading: f64, seed: u64) -> Result<Self> {
        if !(sigma_pos >= 0.0) || !(sigma_heading >= 0.0) {
            return Err(Error::Config(format!(
                "noise stds must be >= 0, got position {sigma_pos}, heading {sigma_heading}"
            )));
        }
        Ok(Self { sigma_pos, sigma_heading, seed })
    }
}

/// Seeded standard-normal sampler with a fixed, documented algorithm so the
/// exact noise stream can be reproduced outside this crate.
///
/// Uniforms come from ChaCha20 (seeded via `seed_from_u64`): each draw takes
/// the next 64-bit output's top 53 bits as `u = (bits >> 11) / 2^53`.
/// Normals use the Box–Muller cosine branch, one normal per two uniforms:
/// `z = sqrt(-2 ln(u1')) * cos(2π u2)` with `u1' = ((bits >> 11) + 1) / 2^53`
/// shifted into (0, 1] so the logarithm is always defined. The sine branch
/// is discarded.
pub struct GaussianSampler {
    rng: ChaCha20Rng,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Uniform draw on [0, 1) from the top 53 bits of the next output.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal draw; consumes exactly two generator outputs.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Add seeded i.i.d. Gaussian noise to a track.
///
/// With `sigma_pos > 0` the positions are jittered first (one x draw then
/// one y draw per state, in track order) and the speed/heading channels are
/// re-derived from the noisy positions, mimicking how jitter contaminates
/// recorded kinematics; a separate pass then adds heading noise (one draw
/// per state) when `sigma_heading > 0`. With both stds zero the input is
/// returned unchanged.
pub fn corrupt(track: &Track, noise: &NoiseSpec, clock: FrameClock) -> Result<Track> {
    if noise.sigma_pos == 0.0 && noise.sigma_heading == 0.0 {
        return Ok(track.clone());
    }
    let mut sampler = GaussianSampler::new(noise.seed);

    let mut segments: Vec<Vec<AgentState2>> = track
        .segments()
        .iter()
        .map(|seg| seg.states().to_vec())
        .collect();

    if noise.sigma_pos > 0.0 {
        for states in &mut segments {
            let noisy: Vec<[f64; 2]> = states
                .iter()
                .map(|s| {
                    [
                        s.x + noise.sigma_pos * sampler.next_gaussian(),
                        s.y + noise.sigma_pos * sampler.next_gaussian(),
                    ]
                })
                .collect();
            *states = derive_kinematics(states[0].frame, &noisy, clock, None);
        }
    }
    if noise.sigma_heading > 0.0 {
        for states in &mut segments {
            for s in states.iter_mut() {
                *s = AgentState2::new(
                    s.frame,
                    s.x,
                    s.y,
                    s.heading + noise.sigma_heading * sampler.next_gaussian(),
                    s.speed,
                );
            }
        }
    }

    let segments = segments
        .into_iter()
        .map(TrackSegment::new)
        .collect::<Result<Vec<_>>>()?;
    Track::from_segments(track.object_id, track.source_tag, segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::smoothness;
    use approx::assert_relative_eq;

    fn straight_profile(speed: f64, duration_s: f64) -> MotionProfile {
        MotionProfile {
            object_id: 1,
            start: UnicycleState { x: 0.0, y: 0.0, heading: 0.0, speed },
            schedule: vec![ScheduleSegment { duration_s, accel: 0.0, turn_rate: 0.0 }],
            clock: FrameClock::default(),
        }
    }

    #[test]
    fn straight_cruise_endpoint() {
        let track = generate(&straight_profile(2.0, 3.0)).unwrap();
        assert_eq!(track.n_states(), 61);
        let states: Vec<_> = track.states().collect();
        for w in states.windows(2) {
            let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            assert_relative_eq!(d, 0.1, epsilon = 1e-12);
        }
        let last = states.last().unwrap();
        assert_relative_eq!(last.x, 6.0, epsilon = 1e-9);
        assert_relative_eq!(last.y, 0.0, epsilon = 1e-12);
        assert_eq!(track.source_tag, SourceTag::Synthetic);
    }

    #[test]
    fn constant_turn_traces_a_circle() {
        // v=2, ω=0.7: the discrete vertices all lie on one circle whose
        // radius is within discretization error of v/ω.
        let profile = MotionProfile {
            object_id: 1,
            start: UnicycleState { x: 3.0, y: -1.0, heading: 0.4, speed: 2.0 },
            schedule: vec![ScheduleSegment { duration_s: 8.0, accel: 0.0, turn_rate: 0.7 }],
            clock: FrameClock::default(),
        };
        let track = generate(&profile).unwrap();
        let pts: Vec<[f64; 2]> = track.states().map(|s| [s.x, s.y]).collect();
        // Center from the analytic rollout of the stepping scheme: the
        // vertices are partial sums of a rotating unit vector, which lie on
        // a circle of radius v·dt / (2 sin(ω·dt/2)).
        let dt = FrameClock::default().dt();
        let alpha = 0.7 * dt;
        let r_disc = 2.0 * dt / (2.0 * (alpha / 2.0).sin());
        // Recover the center from the first two chords: it is the
        // intersection of the perpendicular bisectors of (p0,p1) and
        // (p1,p2).
        let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let m01 = mid(pts[0], pts[1]);
        let m12 = mid(pts[1], pts[2]);
        let d01 = [pts[1][0] - pts[0][0], pts[1][1] - pts[0][1]];
        let d12 = [pts[2][0] - pts[1][0], pts[2][1] - pts[1][1]];
        // Solve m01 + t*perp(d01) = m12 + s*perp(d12).
        let (px1, py1) = (-d01[1], d01[0]);
        let (px2, py2) = (-d12[1], d12[0]);
        let det = px1 * (-py2) - (-px2) * py1;
        let (bx, by) = (m12[0] - m01[0], m12[1] - m01[1]);
        let t = (bx * (-py2) - (-px2) * by) / det;
        let center = [m01[0] + t * px1, m01[1] + t * py1];

        for p in &pts {
            let r = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
            assert_relative_eq!(r, r_disc, epsilon = 1e-9);
        }
        assert_relative_eq!(r_disc, 2.0 / 0.7, epsilon = 2e-3);
    }

    #[test]
    fn generation_is_deterministic() {
        let profile = MotionProfile {
            object_id: 2,
            start: UnicycleState { x: 0.0, y: 0.0, heading: 0.2, speed: 5.0 },
            schedule: vec![
                ScheduleSegment { duration_s: 2.0, accel: 1.0, turn_rate: 0.2 },
                ScheduleSegment { duration_s: 2.0, accel: -1.0, turn_rate: -0.2 },
            ],
            clock: FrameClock::default(),
        };
        let a = generate(&profile).unwrap();
        let b = generate(&profile).unwrap();
        for (x, y) in a.states().zip(b.states()) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.y.to_bits(), y.y.to_bits());
            assert_eq!(x.heading.to_bits(), y.heading.to_bits());
            assert_eq!(x.speed.to_bits(), y.speed.to_bits());
        }
    }

    #[test]
    fn preclamped_schedule_respects_limits() {
        let dt = FrameClock::default().dt();
        let profile = MotionProfile {
            object_id: 1,
            start: UnicycleState { x: 0.0, y: 0.0, heading: 0.0, speed: 3.0 },
            schedule: vec![ScheduleSegment { duration_s: 4.0, accel: 4.0, turn_rate: 0.7 }],
            clock: FrameClock::default(),
        };
        let track = generate(&profile).unwrap();
        let states: Vec<_> = track.states().collect();
        for w in states.windows(2) {
            assert!(wrap_angle(w[1].heading - w[0].heading).abs() / dt <= 0.7 + 1e-9);
            assert!((w[1].speed - w[0].speed).abs() / dt <= 4.0 + 1e-9);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let track = generate(&straight_profile(3.0, 2.0)).unwrap();
        let noise = NoiseSpec::new(0.0, 0.0, 7).unwrap();
        let out = corrupt(&track, &noise, FrameClock::default()).unwrap();
        for (a, b) in track.states().zip(out.states()) {
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y - b.y).abs() < 1e-12);
            assert!((a.heading - b.heading).abs() < 1e-12);
            assert!((a.speed - b.speed).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_reproduces_noise() {
        let track = generate(&straight_profile(3.0, 5.0)).unwrap();
        let noise = NoiseSpec::new(0.2, 0.1, 42).unwrap();
        let a = corrupt(&track, &noise, FrameClock::default()).unwrap();
        let b = corrupt(&track, &noise, FrameClock::default()).unwrap();
        for (x, y) in a.states().zip(b.states()) {
            assert_eq!(x.x.to_bits(), y.x.to_bits());
            assert_eq!(x.heading.to_bits(), y.heading.to_bits());
        }
        let c = corrupt(&track, &NoiseSpec::new(0.2, 0.1, 43).unwrap(), FrameClock::default())
            .unwrap();
        assert!(a.states().zip(c.states()).any(|(x, y)| x.x != y.x));
    }

    #[test]
    fn position_residual_std_near_sigma() {
        let track = generate(&straight_profile(5.0, 50.0)).unwrap();
        assert!(track.n_states() > 1000);
        let noise = NoiseSpec::new(0.2, 0.0, 11).unwrap();
        let noisy = corrupt(&track, &noise, FrameClock::default()).unwrap();
        let mut residuals = Vec::new();
        for (a, b) in track.states().zip(noisy.states()) {
            residuals.push(b.x - a.x);
            residuals.push(b.y - a.y);
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 0.2).abs() < 0.02, "sample std {std} not within 10% of 0.2");
    }

    #[test]
    fn corrupt_rederives_kinematics_from_noisy_positions() {
        let track = generate(&straight_profile(5.0, 3.0)).unwrap();
        let noise = NoiseSpec::new(0.1, 0.0, 3).unwrap();
        let noisy = corrupt(&track, &noise, FrameClock::default()).unwrap();
        // Clean speeds are exactly 5; noisy differenced speeds must scatter.
        let speeds: Vec<f64> = noisy.states().map(|s| s.speed).collect();
        assert!(speeds.iter().any(|v| (v - 5.0).abs() > 0.5));
        // Headings are contaminated through the positions alone.
        let headings: Vec<f64> = noisy.states().map(|s| s.heading).collect();
        assert!(headings.iter().any(|h| h.abs() > 0.05));
    }

    #[test]
    fn roughness_grows_with_noise() {
        let track = generate(&straight_profile(5.0, 10.0)).unwrap();
        let clock = FrameClock::default();
        let mut step = Vec::new();
        let mut heading = Vec::new();
        for sigma in [0.0, 0.05, 0.2] {
            let noisy =
                corrupt(&track, &NoiseSpec::new(sigma, 0.0, 19).unwrap(), clock).unwrap();
            let r = &smoothness(&noisy)[0];
            step.push(r.roughness_step_distance.unwrap());
            heading.push(r.roughness_heading.unwrap());
        }
        assert!(step[0] < step[1] && step[1] < step[2], "step roughness {step:?}");
        assert!(heading[0] < heading[1] && heading[1] < heading[2], "heading roughness {heading:?}");
    }

    #[test]
    fn sampler_moments_are_standard() {
        let mut sampler = GaussianSampler::new(123);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sampler.next_gaussian()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn profile_parsing() {
        let text = "# demo\nobject_id=7\nx=1.0\ny=-2.0\nheading=0.3\nspeed=4.0\nrate_hz=10\n\n\
                    [segment]\nduration=1.5\naccel=0.5\n\n[segment]\nduration=2.0\nturn_rate=-0.2\n";
        let p = MotionProfile::parse(text).unwrap();
        assert_eq!(p.object_id, 7);
        assert_relative_eq!(p.start.speed, 4.0);
        assert_relative_eq!(p.clock.rate_hz(), 10.0);
        assert_eq!(p.schedule.len(), 2);
        assert_relative_eq!(p.schedule[0].accel, 0.5);
        assert_relative_eq!(p.schedule[0].turn_rate, 0.0);
        assert_relative_eq!(p.schedule[1].duration_s, 2.0);

        assert!(MotionProfile::parse("x=1.0\n").is_err()); // no segments
        assert!(MotionProfile::parse("[segment]\nduration=0\n").is_err());
        assert!(MotionProfile::parse("[segment]\nbogus=1\n").is_err());
        assert!(MotionProfile::parse("duration=1\n").is_err()); // segment key at top level
    }

    #[test]
    fn generated_track_windows_cleanly() {
        use crate::windowing::{instance_count, make_instances, WindowSpec};
        let track = generate(&straight_profile(2.0, 2.0)).unwrap(); // 41 states
        let spec = WindowSpec::default();
        let instances = make_instances(&track, &spec);
        assert_eq!(instances.len(), instance_count(41, &spec));
        assert_eq!(instances.len(), 10);
    }
}
