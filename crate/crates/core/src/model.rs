//! Sensor model, beams, scans, and the LiDAR occupancy measurement.
//!
//! Space along a beam is split into three states by an exponential
//! confidence model: free up to the reported range, occupied while the
//! confidence stays at or above `λ_occ`, unknown beyond that.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("point {index} coincides with the sensor origin (range {range} m)")]
    ZeroRange { index: usize, range: f64 },
    #[error("reported range must be positive, got {0}")]
    NonPositiveReportedRange(f64),
    #[error("point index {index} out of bounds for scan of {len} points")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("invalid sensor config: {0}")]
    InvalidConfig(String),
}

/// Physical LiDAR parameters used by the occupancy measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Full beam divergence angle in radians.
    pub divergence_angle_rad: f64,
    /// Minimum confidence for the occupied state.
    pub occupied_confidence_threshold: f64,
    /// Exponential confidence decay per meter beyond the reported range.
    pub decay_rate_per_meter: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            divergence_angle_rad: 0.003,
            occupied_confidence_threshold: 0.9,
            decay_rate_per_meter: 1.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.divergence_angle_rad;
        if !(d > 0.0 && d < 0.1) {
            return Err(ModelError::InvalidConfig(format!(
                "divergence angle {d} outside (0, 0.1)"
            )));
        }
        let l = self.occupied_confidence_threshold;
        if !(l > 0.0 && l < 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "occupied confidence threshold {l} outside (0, 1)"
            )));
        }
        let r = self.decay_rate_per_meter;
        if !(r > 0.0 && r.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("decay rate {r} must be > 0")));
        }
        Ok(())
    }

    /// Length of the occupied interval behind a reported point,
    /// `-ln(λ_occ) / rate`.
    pub fn occupied_band(&self) -> f64 {
        -self.occupied_confidence_threshold.ln() / self.decay_rate_per_meter
    }

    pub fn half_divergence_tan(&self) -> f64 {
        (self.divergence_angle_rad / 2.0).tan()
    }
}

/// Occupancy label of a location observed along a beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyState {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

impl OccupancyState {
    pub const ALL: [OccupancyState; 3] = [Self::Free, Self::Occupied, Self::Unknown];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Free),
            1 => Some(Self::Occupied),
            2 => Some(Self::Unknown),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// One LiDAR ray: `hit = origin + range * direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub origin: Vec3,
    pub direction: Vec3,
    pub range: f64,
    /// Seconds relative to the current scan.
    pub time: f64,
}

impl Beam {
    pub fn hit_point(&self) -> Vec3 {
        self.origin + self.direction * self.range
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Matrix3::identity(), t)
    }

    /// Rotation about +z by `yaw` followed by a translation.
    pub fn from_yaw_translation(yaw: f64, t: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Pose::new(r, t)
    }

    /// Builds a pose from a row-major 3x4 matrix `[R | t]`.
    pub fn from_row_major(m: &[f64; 12]) -> Self {
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Pose::new(r, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Transform taking frame `other` to frame `self`, given both map to a
    /// common world frame: `self⁻¹ ∘ other`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Matrix3::identity()).amax() <= tol && self.translation.amax() <= tol
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Pose::new(r, self.translation)
    }

    /// Heading of the rotated x-axis in the xy-plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// A timestamped point set with the sensor origin it was captured from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<Vec3>,
    /// Per-point intensity, carried through I/O but unused by geometry.
    pub intensity: Option<Vec<f32>>,
    pub sensor_origin: Vec3,
    /// Seconds; relative to the current scan once placed in its frame.
    pub time: f64,
    /// Transform from this scan's frame into the working frame. Identity once
    /// it has been applied with [`Scan::into_working_frame`].
    pub pose: Pose,
}

impl Scan {
    /// A scan in its own sensor frame (origin at zero).
    pub fn in_sensor_frame(points: Vec<Vec3>, time: f64, pose: Pose) -> Self {
        Scan {
            points,
            intensity: None,
            sensor_origin: Vector3::zeros(),
            time,
            pose,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `pose` to points and origin and resets it to identity.
    pub fn into_working_frame(mut self) -> Scan {
        if !self.pose.is_identity(0.0) {
            let pose = self.pose;
            for p in &mut self.points {
                *p = pose.transform_point(p);
            }
            self.sensor_origin = pose.transform_point(&self.sensor_origin);
            self.pose = Pose::identity();
        }
        self
    }

    pub fn beam(&self, index: usize) -> Result<Beam, ModelError> {
        beam_from_point(self, index)
    }
}

/// Recovers the beam that produced point `index` of `scan`.
pub fn beam_from_point(scan: &Scan, index: usize) -> Result<Beam, ModelError> {
    let p = scan.points.get(index).ok_or(ModelError::IndexOutOfBounds {
        index,
        len: scan.points.len(),
    })?;
    let delta = p - scan.sensor_origin;
    let range = delta.norm();
    if range < 1e-6 {
        return Err(ModelError::ZeroRange { index, range });
    }
    Ok(Beam {
        origin: scan.sensor_origin,
        direction: delta / range,
        range,
        time: scan.time,
    })
}

/// Radius of the diverging beam at `range`.
pub fn beam_radius_at(cfg: &SensorConfig, range: f64) -> f64 {
    range * cfg.half_divergence_tan()
}

/// Relative tolerance within which a projected range is taken to be the
/// reported range, absorbing rounding of `|v|² / |v|`.
pub const RANGE_SNAP_REL: f64 = 1e-12;

/// Signed distance of the projection of `point` along `beam`. Projections of
/// the hit point itself return exactly `beam.range`.
pub fn range_along_beam(beam: &Beam, point: &Vec3) -> f64 {
    let r = (point - beam.origin).dot(&beam.direction);
    if (r - beam.range).abs() <= RANGE_SNAP_REL * beam.range {
        beam.range
    } else {
        r
    }
}

/// Confidence of a location at `range_at_point` on a beam that reported
/// `reported_range`.
pub fn confidence(
    cfg: &SensorConfig,
    range_at_point: f64,
    reported_range: f64,
) -> Result<f64, ModelError> {
    if !(reported_range > 0.0) {
        return Err(ModelError::NonPositiveReportedRange(reported_range));
    }
    Ok(confidence_unchecked(cfg, range_at_point, reported_range))
}

#[inline]
pub(crate) fn confidence_unchecked(cfg: &SensorConfig, range: f64, reported: f64) -> f64 {
    if range <= reported {
        1.0
    } else {
        (-cfg.decay_rate_per_meter * (range - reported)).exp()
    }
}

#[inline]
pub(crate) fn state_from_confidence(
    cfg: &SensorConfig,
    range: f64,
    reported: f64,
    conf: f64,
) -> OccupancyState {
    if range < reported {
        OccupancyState::Free
    } else if conf >= cfg.occupied_confidence_threshold {
        OccupancyState::Occupied
    } else {
        OccupancyState::Unknown
    }
}

pub fn occupancy_state(
    cfg: &SensorConfig,
    range_at_point: f64,
    reported_range: f64,
) -> Result<OccupancyState, ModelError> {
    let conf = confidence(cfg, range_at_point, reported_range)?;
    Ok(state_from_confidence(cfg, range_at_point, reported_range, conf))
}

/// Confidence and state together, as stored on overlap points.
pub fn measure(
    cfg: &SensorConfig,
    range_at_point: f64,
    reported_range: f64,
) -> Result<(f64, OccupancyState), ModelError> {
    let conf = confidence(cfg, range_at_point, reported_range)?;
    Ok((
        conf,
        state_from_confidence(cfg, range_at_point, reported_range, conf),
    ))
}
