//! Motion labels from tracked boxes and per-category speed thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Pose, Scan};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MosError {
    #[error("box {0} has a single keyframe; speed is undefined")]
    SingleKeyframe(String),
    #[error("keyframe {keyframe} out of range for box {id} with {len} keyframes")]
    KeyframeOutOfRange { id: String, keyframe: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Human,
    Cycle,
    Vehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Static = 0,
    Moving = 1,
    UnknownMotion = 2,
}

impl MotionClass {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Static),
            1 => Some(Self::Moving),
            2 => Some(Self::UnknownMotion),
            _ => None,
        }
    }

    /// Overlap priority: moving beats unknown beats static.
    fn priority(self) -> u8 {
        match self {
            Self::Static => 0,
            Self::UnknownMotion => 1,
            Self::Moving => 2,
        }
    }
}

/// Oriented box pose and extent at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    /// Length, width, height along the box's x, y, z axes.
    pub size: Vec3,
    /// Rotation about +z.
    pub yaw: f64,
}

impl OrientedBox {
    /// Point in box coordinates (box center at origin, box x-axis along +x).
    #[inline]
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    #[inline]
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.size.x / 2.0 + margin
            && l.y.abs() <= self.size.y / 2.0 + margin
            && l.z.abs() <= self.size.z / 2.0 + margin
    }

    /// The same box expressed through `pose`. Yaw stays exact for rotations
    /// about z.
    pub fn transformed(&self, pose: &Pose) -> OrientedBox {
        OrientedBox {
            center: pose.transform_point(&self.center),
            size: self.size,
            yaw: self.yaw + pose.yaw(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub bbox: OrientedBox,
    pub timestamp: f64,
    /// Scan index this keyframe is annotated on, when known.
    pub frame: Option<u32>,
}

/// One object instance tracked over keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub instance_id: String,
    pub category: Category,
    /// Strictly increasing timestamps.
    pub keyframes: Vec<Keyframe>,
}

impl TrackedBox {
    pub fn keyframe_for_frame(&self, frame: u32) -> Option<usize> {
        self.keyframes.iter().position(|k| k.frame == Some(frame))
    }
}

/// Static-below / moving-above speed thresholds in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedThresholds {
    pub static_max: f64,
    pub moving_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdTable {
    pub human: SpeedThresholds,
    pub cycle: SpeedThresholds,
    pub vehicle: SpeedThresholds,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        ThresholdTable {
            human: SpeedThresholds {
                static_max: 0.375,
                moving_min: 0.6,
            },
            cycle: SpeedThresholds {
                static_max: 0.375,
                moving_min: 1.0,
            },
            vehicle: SpeedThresholds {
                static_max: 0.5,
                moving_min: 1.0,
            },
        }
    }
}

impl ThresholdTable {
    pub fn get(&self, c: Category) -> &SpeedThresholds {
        match c {
            Category::Human => &self.human,
            Category::Cycle => &self.cycle,
            Category::Vehicle => &self.vehicle,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, t) in [
            ("human", &self.human),
            ("cycle", &self.cycle),
            ("vehicle", &self.vehicle),
        ] {
            if !(0.0 < t.static_max && t.static_max < t.moving_min) {
                return Err(format!(
                    "{name}: need 0 < static_max < moving_min, got {} / {}",
                    t.static_max, t.moving_min
                ));
            }
        }
        Ok(())
    }
}

/// Center speed at `keyframe`: central difference inside the track,
/// one-sided at its ends.
pub fn object_speed(tracked: &TrackedBox, keyframe: usize) -> Result<f64, MosError> {
    let k = &tracked.keyframes;
    if k.len() < 2 {
        return Err(MosError::SingleKeyframe(tracked.instance_id.clone()));
    }
    if keyframe >= k.len() {
        return Err(MosError::KeyframeOutOfRange {
            id: tracked.instance_id.clone(),
            keyframe,
            len: k.len(),
        });
    }
    let lo = keyframe.saturating_sub(1);
    let hi = (keyframe + 1).min(k.len() - 1);
    let dist = (k[hi].bbox.center - k[lo].bbox.center).norm();
    Ok(dist / (k[hi].timestamp - k[lo].timestamp))
}

pub fn classify_motion(speed: f64, category: Category, table: &ThresholdTable) -> MotionClass {
    let t = table.get(category);
    if speed < t.static_max {
        MotionClass::Static
    } else if speed > t.moving_min {
        MotionClass::Moving
    } else {
        MotionClass::UnknownMotion
    }
}

/// Motion class at a keyframe; tracks too short for a speed are unknown.
pub fn motion_at(tracked: &TrackedBox, keyframe: usize, table: &ThresholdTable) -> MotionClass {
    match object_speed(tracked, keyframe) {
        Ok(v) => classify_motion(v, tracked.category, table),
        Err(_) => MotionClass::UnknownMotion,
    }
}

/// A box at scan time with its motion class, in the scan frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub bbox: OrientedBox,
    pub motion: MotionClass,
}

/// Per-point motion labels: points take the highest-priority class among the
/// boxes containing them and are static outside every box.
pub fn label_points(scan: &Scan, boxes: &[LabeledBox], margin: f64) -> Vec<MotionClass> {
    scan.points
        .iter()
        .map(|p| {
            boxes
                .iter()
                .filter(|b| b.bbox.contains(p, margin))
                .map(|b| b.motion)
                .max_by_key(|m| m.priority())
                .unwrap_or(MotionClass::Static)
        })
        .collect()
}

/// Boxes annotated on scan `frame`, moved into that scan's sensor frame
/// (`world_from_scan` maps sensor to world coordinates).
pub fn boxes_for_frame(
    tracks: &[TrackedBox],
    frame: u32,
    world_from_scan: &Pose,
    table: &ThresholdTable,
) -> Vec<(usize, LabeledBox)> {
    let scan_from_world = world_from_scan.inverse();
    tracks
        .iter()
        .enumerate()
        .filter_map(|(t, track)| {
            let k = track.keyframe_for_frame(frame)?;
            Some((
                t,
                LabeledBox {
                    bbox: track.keyframes[k].bbox.transformed(&scan_from_world),
                    motion: motion_at(track, k, table),
                },
            ))
        })
        .collect()
}
