//! Extended Kalman filtering of planar tracks under a unicycle process
//! model, used to clean up position-differenced kinematics before windowing.

use nalgebra::{Cholesky, Matrix2, Matrix4, SMatrix, SVector, Vector4};

use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::track::{AgentState2, FrameClock, SourceTag, Track};

/// Filter noise configuration. The process model drives the unicycle with
/// white acceleration and turn-rate noise; measurements are planar position
/// and, unless disabled, heading.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfConfig {
    /// Process acceleration noise, m/s^2.
    pub accel_std: f64,
    /// Process turn-rate noise, rad/s.
    pub turn_rate_std: f64,
    /// Position measurement noise, m.
    pub pos_std: f64,
    /// Heading measurement noise, rad; `None` drops the heading measurement.
    pub heading_std: Option<f64>,
    /// Initial variance of each position component, m^2.
    pub init_pos_var: f64,
    /// Initial heading variance, rad^2.
    pub init_heading_var: f64,
    /// Initial speed variance, (m/s)^2.
    pub init_speed_var: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            accel_std: 2.0,
            turn_rate_std: 0.5,
            pos_std: 0.3,
            heading_std: Some(0.2),
            init_pos_var: 1.0,
            init_heading_var: 0.5,
            init_speed_var: 4.0,
        }
    }
}

impl EkfConfig {
    /// Parse `key=value` overrides (one per line, `#` comments) on top of
    /// the defaults. `heading_std=off` disables the heading measurement.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("filter config line {}: expected key=value", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_pos = |name: &str| -> Result<f64> {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid {name} value '{value}'")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {value}")));
                }
                Ok(v)
            };
            match key {
                "accel_std" => cfg.accel_std = parse_pos(key)?,
                "turn_rate_std" => cfg.turn_rate_std = parse_pos(key)?,
                "pos_std" => cfg.pos_std = parse_pos(key)?,
                "heading_std" => {
                    cfg.heading_std = if value == "off" { None } else { Some(parse_pos(key)?) }
                }
                "init_pos_var" => cfg.init_pos_var = parse_pos(key)?,
                "init_heading_var" => cfg.init_heading_var = parse_pos(key)?,
                "init_speed_var" => cfg.init_speed_var = parse_pos(key)?,
                other => {
                    return Err(Error::Config(format!("unknown filter config key '{other}'")))
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("accel_std", self.accel_std),
            ("turn_rate_std", self.turn_rate_std),
            ("pos_std", self.pos_std),
            ("init_pos_var", self.init_pos_var),
            ("init_heading_var", self.init_heading_var),
            ("init_speed_var", self.init_speed_var),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(h) = self.heading_std {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("heading_std must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Filter state: mean over (x, y, heading, speed) plus covariance.
#[derive(Debug, Clone)]
pub struct EkfState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl EkfState {
    fn from_measurement(s: &AgentState2, cfg: &EkfConfig) -> Self {
        Self {
            mean: Vector4::new(s.x, s.y, s.heading, s.speed),
            covariance: Matrix4::from_diagonal(&Vector4::new(
                cfg.init_pos_var,
                cfg.init_pos_var,
                cfg.init_heading_var,
                cfg.init_speed_var,
            )),
        }
    }

    fn predict(&mut self, dt: f64, cfg: &EkfConfig) {
        let (theta, v) = (self.mean[2], self.mean[3]);
        let (sin_t, cos_t) = theta.sin_cos();
        self.mean[0] += v * cos_t * dt;
        self.mean[1] += v * sin_t * dt;
        self.mean[2] = wrap_angle(theta);

        let mut f = Matrix4::identity();
        f[(0, 2)] = -v * sin_t * dt;
        f[(0, 3)] = cos_t * dt;
        f[(1, 2)] = v * cos_t * dt;
        f[(1, 3)] = sin_t * dt;

        let half_dt2 = 0.5 * dt * dt;
        let mut g = SMatrix::<f64, 4, 2>::zeros();
        g[(0, 0)] = half_dt2 * cos_t;
        g[(1, 0)] = half_dt2 * sin_t;
        g[(2, 1)] = dt;
        g[(3, 0)] = dt;
        let q_diag = Matrix2::from_diagonal(&nalgebra::Vector2::new(
            cfg.accel_std * cfg.accel_std,
            cfg.turn_rate_std * cfg.turn_rate_std,
        ));
        let q = g * q_diag * g.transpose();

        self.covariance = f * self.covariance * f.transpose() + q;
        self.symmetrize();
    }

    fn update<const M: usize>(
        &mut self,
        h: SMatrix<f64, M, 4>,
        r: SMatrix<f64, M, M>,
        innovation: SVector<f64, M>,
    ) -> Result<()> {
        let s = h * self.covariance * h.transpose() + r;
        let chol = Cholesky::new(s).ok_or_else(|| {
            Error::Numerical("innovation covariance lost positive definiteness".into())
        })?;
        let gain = self.covariance * h.transpose() * chol.inverse();
        self.mean += gain * innovation;
        self.mean[2] = wrap_angle(self.mean[2]);
        self.covariance = (Matrix4::identity() - gain * h) * self.covariance;
        self.symmetrize();
        Ok(())
    }

    fn symmetrize(&mut self) {
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
    }

    fn ingest(&mut self, s: &AgentState2, cfg: &EkfConfig) -> Result<()> {
        match cfg.heading_std {
            Some(heading_std) => {
                let mut h = SMatrix::<f64, 3, 4>::zeros();
                h[(0, 0)] = 1.0;
                h[(1, 1)] = 1.0;
                h[(2, 2)] = 1.0;
                let r = SMatrix::<f64, 3, 3>::from_diagonal(&nalgebra::Vector3::new(
                    cfg.pos_std * cfg.pos_std,
                    cfg.pos_std * cfg.pos_std,
                    heading_std * heading_std,
                ));
                let innovation = nalgebra::Vector3::new(
                    s.x - self.mean[0],
                    s.y - self.mean[1],
                    wrap_angle(s.heading - self.mean[2]),
                );
                self.update(h, r, innovation)
            }
            None => {
                let mut h = SMatrix::<f64, 2, 4>::zeros();
                h[(0, 0)] = 1.0;
                h[(1, 1)] = 1.0;
                let r = Matrix2::from_diagonal(&nalgebra::Vector2::new(
                    cfg.pos_std * cfg.pos_std,
                    cfg.pos_std * cfg.pos_std,
                ));
                let innovation =
                    nalgebra::Vector2::new(s.x - self.mean[0], s.y - self.mean[1]);
                self.update(h, r, innovation)
            }
        }
    }

    fn emit(&self, frame: i64) -> AgentState2 {
        AgentState2::new(
            frame,
            self.mean[0],
            self.mean[1],
            self.mean[2],
            self.mean[3].max(0.0),
        )
    }
}

/// Forward-filter every segment of a track and return the filtered copy
/// tagged [`SourceTag::GtEkf`].
///
/// The filter initializes from each segment's first state and emits the
/// posterior estimate at every frame. Single-state segments pass through.
pub fn ekf_smooth(track: &Track, clock: FrameClock, cfg: &EkfConfig) -> Result<Track> {
    cfg.validate()?;
    let dt = clock.dt();
    let mut segments = Vec::with_capacity(track.segments().len());
    for segment in track.segments() {
        let states = segment.states();
        let mut ekf = EkfState::from_measurement(&states[0], cfg);
        let mut out = Vec::with_capacity(states.len());
        out.push(states[0]);
        for s in &states[1..] {
            ekf.predict(dt, cfg);
            ekf.ingest(s, cfg)?;
            out.push(ekf.emit(s.frame));
        }
        segments.push(crate::track::TrackSegment::new(out)?);
    }
    Track::from_segments(track.object_id, SourceTag::GtEkf, segments)
}
