//! Beam-pair geometry: coplanarity, centerline intersection, scenario
//! split, and the intersection segment of nearly parallel beams.
//!
//! Every function works in the current-scan sensor frame, so the current
//! beam always starts at the origin and only the adjacent sensor origin is
//! passed explicitly.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::model::{Beam, SensorConfig};
use crate::Vec3;

/// Adjacent origins closer than this to the current origin are treated as
/// coincident.
pub const ORIGIN_EPS: f64 = 1e-3;
/// Cross products shorter than this are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("reference plane is degenerate")]
    DegeneratePlane,
    #[error("beams are parallel")]
    NearParallel,
    #[error("intersection behind a sensor (current {param_current} m, adjacent {param_adjacent} m)")]
    BehindSensor {
        param_current: f64,
        param_adjacent: f64,
    },
    #[error("intersection segment start {0} m is not positive")]
    NonPositiveStart(f64),
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Unit normal of the plane through the current origin spanned by the current
/// beam direction and the adjacent sensor origin.
pub fn plane_normal(d_current: &Vec3, adjacent_origin: &Vec3) -> Result<Vec3, GeometryError> {
    let a_norm = adjacent_origin.norm();
    if a_norm <= ORIGIN_EPS {
        return Err(GeometryError::DegeneratePlane);
    }
    let c = d_current.cross(&(adjacent_origin / a_norm));
    let len = c.norm();
    if len < PARALLEL_EPS {
        return Err(GeometryError::DegeneratePlane);
    }
    Ok(c / len)
}

/// Signed angle between `d_adjacent` and the reference plane with unit
/// `normal`, in `[-π/2, π/2]`.
pub fn coplanarity_angle(normal: &Vec3, d_adjacent: &Vec3) -> f64 {
    clamp_unit(normal.dot(d_adjacent)).acos() - FRAC_PI_2
}

/// Whether a coplanarity angle falls within half the divergence angle.
#[inline]
pub fn is_coplanar(angle: f64, cfg: &SensorConfig) -> bool {
    angle.abs() <= cfg.divergence_angle_rad / 2.0
}

/// Angle between two beam directions, in `[0, π]`.
pub fn spatial_angle(d_current: &Vec3, d_adjacent: &Vec3) -> f64 {
    clamp_unit(d_current.dot(d_adjacent)).acos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineIntersection {
    /// Point on the current centerline closest to the adjacent centerline.
    pub point: Vec3,
    pub param_current: f64,
    pub param_adjacent: f64,
}

/// Intersects the current centerline (through the origin) with the adjacent
/// centerline `adjacent_origin + s * d_adjacent`.
pub fn centerline_intersection(
    d_current: &Vec3,
    adjacent_origin: &Vec3,
    d_adjacent: &Vec3,
) -> Result<CenterlineIntersection, GeometryError> {
    let m = d_current.cross(d_adjacent);
    let mm = m.norm_squared();
    if mm.sqrt() < PARALLEL_EPS {
        return Err(GeometryError::NearParallel);
    }
    let s = adjacent_origin.cross(d_adjacent).dot(&m) / mm;
    let point = d_current * s;
    let param_current = point.dot(d_current);
    let param_adjacent = (point - adjacent_origin).dot(d_adjacent);
    if param_current <= 0.0 || param_adjacent <= 0.0 {
        return Err(GeometryError::BehindSensor {
            param_current,
            param_adjacent,
        });
    }
    Ok(CenterlineIntersection {
        point,
        param_current,
        param_adjacent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scenario {
    /// Directions differ by more than the divergence angle: point overlap.
    One,
    /// Nearly parallel beams: the overlap is a segment.
    Two,
}

pub fn classify_scenario(spatial_angle: f64, cfg: &SensorConfig) -> Scenario {
    if spatial_angle > cfg.divergence_angle_rad {
        Scenario::One
    } else {
        Scenario::Two
    }
}

/// Range along the current beam at which the intersection segment of two
/// nearly parallel beams starts.
///
/// Solves the two small-angle conditions: both intersection segments have
/// equal length, and the gap between the segment starts equals the sum of
/// the beam radii there.
pub fn segment_start_range(
    q_range_current: f64,
    q_to_adjacent_origin: f64,
    spatial_angle: f64,
    cfg: &SensorConfig,
) -> Result<f64, GeometryError> {
    let s = (spatial_angle / 2.0).sin();
    let t = cfg.half_divergence_tan();
    let start = (q_range_current * (s + t) - q_to_adjacent_origin * t) / (s + 2.0 * t);
    if !(start > 0.0) {
        return Err(GeometryError::NonPositiveStart(start));
    }
    Ok(start)
}

/// The five sample locations of a segment overlap: the current hit, the
/// adjacent hit projected onto the current centerline, and three midpoints.
pub fn sample_scenario2_points(
    current_hit: &Vec3,
    adjacent_hit: &Vec3,
    q: &Vec3,
    d_current: &Vec3,
) -> [Vec3; 5] {
    let o1 = *current_hit;
    let o2 = d_current * adjacent_hit.dot(d_current);
    [o1, o2, (o1 + o2) / 2.0, (o1 + q) / 2.0, (o2 + q) / 2.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPairGeometry {
    pub current_beam_index: u32,
    pub adjacent_beam_index: u32,
    /// Zero when the reference plane is degenerate (every pair is coplanar).
    pub coplanarity_angle: f64,
    pub spatial_angle: f64,
    pub scenario: Scenario,
    pub intersection_point: Vec3,
    pub param_current: f64,
    pub param_adjacent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionSegment {
    pub start_range_current: f64,
    pub end_range_current: f64,
    pub sampled_points: [Vec3; 5],
}

/// Geometric overlap of an admitted coplanar pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairOverlap {
    Point(BeamPairGeometry),
    Segment(BeamPairGeometry, IntersectionSegment),
}

impl PairOverlap {
    pub fn geometry(&self) -> &BeamPairGeometry {
        match self {
            PairOverlap::Point(g) | PairOverlap::Segment(g, _) => g,
        }
    }

    /// Candidate overlap locations in sample order.
    pub fn locations(&self) -> impl Iterator<Item = Vec3> + '_ {
        let (one, five) = match self {
            PairOverlap::Point(g) => (Some(g.intersection_point), None),
            PairOverlap::Segment(_, s) => (None, Some(s.sampled_points)),
        };
        one.into_iter().chain(five.into_iter().flatten())
    }
}

/// Coplanarity of the pair: `Some(angle)` if admitted.
///
/// `normal` is the precomputed reference plane normal of the current beam,
/// or `None` when that plane is degenerate; then the adjacent origin lies on
/// the current centerline (or coincides with the current origin) and every
/// adjacent beam shares a plane with the current beam.
#[inline]
pub fn coplanar_angle(normal: Option<&Vec3>, d_adjacent: &Vec3, cfg: &SensorConfig) -> Option<f64> {
    match normal {
        Some(n) => {
            let angle = coplanarity_angle(n, d_adjacent);
            is_coplanar(angle, cfg).then_some(angle)
        }
        None => Some(0.0),
    }
}

/// Full geometric evaluation of one beam pair.
///
/// Returns `Ok(None)` when the pair is not coplanar and `Err` when it is
/// coplanar but rejected (parallel, behind a sensor, degenerate segment).
pub fn evaluate_pair(
    current_index: u32,
    current: &Beam,
    adjacent_index: u32,
    adjacent: &Beam,
    normal: Option<&Vec3>,
    cfg: &SensorConfig,
) -> Result<Option<PairOverlap>, GeometryError> {
    let d_i = &current.direction;
    let d_j = &adjacent.direction;
    let a = &adjacent.origin;
    let Some(theta) = coplanar_angle(normal, d_j, cfg) else {
        return Ok(None);
    };
    let alpha = spatial_angle(d_i, d_j);
    let scenario = classify_scenario(alpha, cfg);
    let current_hit = current.hit_point();
    let adjacent_hit = adjacent.hit_point();

    if a.norm() <= ORIGIN_EPS {
        // Shared apex: cones overlap along their whole length when the
        // directions are within the divergence angle, otherwise only at the
        // sensor itself.
        if scenario == Scenario::One {
            return Err(GeometryError::BehindSensor {
                param_current: 0.0,
                param_adjacent: 0.0,
            });
        }
        let end = current.range.max(adjacent_hit.dot(d_i));
        let q = d_i * end;
        let param_adjacent = (q - a).dot(d_j);
        if param_adjacent <= 0.0 {
            return Err(GeometryError::BehindSensor {
                param_current: end,
                param_adjacent,
            });
        }
        let samples = sample_scenario2_points(&current_hit, &adjacent_hit, &q, d_i);
        let start = samples
            .iter()
            .map(|p| p.dot(d_i))
            .fold(f64::INFINITY, f64::min);
        if !(start > 0.0) {
            return Err(GeometryError::NonPositiveStart(start));
        }
        let geometry = BeamPairGeometry {
            current_beam_index: current_index,
            adjacent_beam_index: adjacent_index,
            coplanarity_angle: theta,
            spatial_angle: alpha,
            scenario,
            intersection_point: q,
            param_current: end,
            param_adjacent,
        };
        return Ok(Some(PairOverlap::Segment(
            geometry,
            IntersectionSegment {
                start_range_current: start,
                end_range_current: end,
                sampled_points: samples,
            },
        )));
    }

    let x = centerline_intersection(d_i, a, d_j)?;
    let geometry = BeamPairGeometry {
        current_beam_index: current_index,
        adjacent_beam_index: adjacent_index,
        coplanarity_angle: theta,
        spatial_angle: alpha,
        scenario,
        intersection_point: x.point,
        param_current: x.param_current,
        param_adjacent: x.param_adjacent,
    };
    match scenario {
        Scenario::One => Ok(Some(PairOverlap::Point(geometry))),
        Scenario::Two => {
            let q_to_a = (x.point - a).norm();
            let start = segment_start_range(x.param_current, q_to_a, alpha, cfg)?;
            let samples = sample_scenario2_points(&current_hit, &adjacent_hit, &x.point, d_i);
            Ok(Some(PairOverlap::Segment(
                geometry,
                IntersectionSegment {
                    start_range_current: start,
                    end_range_current: x.param_current,
                    sampled_points: samples,
                },
            )))
        }
    }
}
