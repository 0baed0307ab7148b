//! SE(3) poses and motions, pose recovery from world-centric motion, and
//! projection onto the 2D prediction plane.
//!
//! Rotations are stored as orthonormal matrices and re-orthonormalized on
//! construction; quaternions are accepted at the parse boundary only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when re-orthonormalizing and checking rotations.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Normalize an angle to the half-open interval (-pi, pi].
///
/// Idempotent and total; the boundary maps to +pi so ties break
/// deterministically.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = theta % two_pi;
    if a <= -PI {
        a += two_pi;
    } else if a > PI {
        a -= two_pi;
    }
    a
}

/// World-frame rigid transform: orthonormal rotation plus translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose3 {
    /// Build a pose, projecting `rotation` onto the nearest proper rotation.
    ///
    /// Fails on non-finite input, a singular matrix, or a reflection
    /// (negative determinant).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().any(|v| !v.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("pose contains non-finite values".into()));
        }
        let rotation = orthonormalize(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Parse-boundary constructor from an (x, y, z, w) quaternion.
    ///
    /// The quaternion is normalized; a near-zero norm is rejected.
    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64, translation: Vector3<f64>) -> Result<Self> {
        let q = Quaternion::new(qw, qx, qy, qz);
        if q.norm() < 1e-12 || !q.norm().is_finite() {
            return Err(Error::Data("quaternion has degenerate norm".into()));
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion (x, y, z, w) with non-negative w, for serialization.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.i, q.j, q.k, q.w]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Composition `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle of this pose's rotation, in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

fn orthonormalize(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Data("rotation matrix decomposition failed".into())),
    };
    if svd.singular_values.iter().any(|&s| s < 1e-12) {
        return Err(Error::Data("rotation matrix is singular".into()));
    }
    let r = u * v_t;
    if r.determinant() < 0.0 {
        return Err(Error::Data(
            "matrix is a reflection, not a proper rotation".into(),
        ));
    }
    if (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::Data("matrix is not close to a proper rotation".into()));
    }
    Ok(r)
}

/// World-centric frame-to-frame SE(3) motion of one object.
///
/// Left-composes with the object pose at the previous frame to produce the
/// pose at the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion3 {
    transform: Pose3,
}

impl Motion3 {
    pub fn new(transform: Pose3) -> Self {
        Self { transform }
    }

    pub fn identity() -> Self {
        Self {
            transform: Pose3::identity(),
        }
    }

    pub fn transform(&self) -> &Pose3 {
        &self.transform
    }

    pub fn inverse(&self) -> Self {
        Self {
            transform: self.transform.inverse(),
        }
    }
}

/// Apply a world-centric motion to the previous pose: `motion * prev`.
pub fn recover_pose(motion: &Motion3, prev_pose: &Pose3) -> Pose3 {
    motion.transform.compose(prev_pose)
}

/// Fold a motion chain from an initial pose.
///
/// Output has one more element than `motions`; element `i + 1` is
/// `recover_pose(motions[i], output[i])`.
pub fn recover_track(motions: &[Motion3], initial_pose: &Pose3) -> Result<Vec<Pose3>> {
    if motions.is_empty() {
        return Err(Error::Data("empty motion sequence".into()));
    }
    let mut out = Vec::with_capacity(motions.len() + 1);
    out.push(initial_pose.clone());
    for m in motions {
        let next = recover_pose(m, out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(out)
}

/// World-centric motion between two poses: `next * prev^-1`.
pub fn derive_motion(prev: &Pose3, next: &Pose3) -> Motion3 {
    Motion3::new(next.compose(&prev.inverse()))
}

/// Planar pose: position in meters, heading in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }
}

/// Axis mapping used when flattening a 3D pose onto the prediction plane.
///
/// `WorldXy` keeps the x/y translation and reads heading as yaw about +z.
/// `CameraXz` is the camera-style frame (x right, y down, z forward): the
/// plane is x/z and heading is the body x-axis direction within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisConvention {
    WorldXy,
    CameraXz,
}

impl FromStr for AxisConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "world-xy" => Ok(AxisConvention::WorldXy),
            "camera-xz" => Ok(AxisConvention::CameraXz),
            other => Err(Error::Config(format!(
                "unknown axis convention '{other}' (expected world-xy or camera-xz)"
            ))),
        }
    }
}

impl fmt::Display for AxisConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisConvention::WorldXy => write!(f, "world-xy"),
            AxisConvention::CameraXz => write!(f, "camera-xz"),
        }
    }
}

/// Flatten a 3D pose onto the prediction plane under the named convention.
///
/// The planar heading is the direction of the body x-axis projected onto the
/// plane, normalized to (-pi, pi].
pub fn project_to_plane(pose: &Pose3, convention: AxisConvention) -> Pose2 {
    let r = pose.rotation();
    let t = pose.translation();
    // First column of R is the body x-axis expressed in the outer frame.
    match convention {
        AxisConvention::WorldXy => Pose2::new(t.x, t.y, f64::atan2(r[(1, 0)], r[(0, 0)])),
        AxisConvention::CameraXz => Pose2::new(t.x, t.z, f64::atan2(r[(2, 0)], r[(0, 0)])),
    }
}

/// Rotation by `yaw` about the +z axis.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `angle` about the +y axis (KITTI `rotation_y`).
pub fn pitch_rotation(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Random valid pose for in-crate tests.
#[cfg(test)]
pub(crate) fn random_pose(rng: &mut rand_chacha::ChaCha20Rng) -> Pose3 {
    use rand_chacha::rand_core::RngCore;
    let mut uniform = |lo: f64, hi: f64| {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    };
    let axis = Vector3::new(uniform(-1.0, 1.0), uniform(-1.0, 1.0), uniform(-1.0, 1.0));
    let angle = uniform(-PI, PI);
    let t = Vector3::new(uniform(-10.0, 10.0), uniform(-10.0, 10.0), uniform(-10.0, 10.0));
    let rot = Rotation3::from_axis_angle(
        &nalgebra::Unit::new_normalize(axis + Vector3::new(0.0, 0.0, 1e-6)),
        angle,
    );
    Pose3::new(rot.into_inner(), t).unwrap()
}
