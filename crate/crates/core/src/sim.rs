//! Synthetic spinning LiDAR over scenes of static and constant-velocity boxes,
//! plus a geometric ground-truth occupancy oracle.
//!
//! Returns are ray-cast along beam centerlines only. Boxes are advected to the
//! query time; motion within a scan is not modeled.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, OccupancyState, Pose, Scan, SensorConfig};
use crate::mos::{Category, MotionClass, OrientedBox};
use crate::overlap::{Aabb, AdjacentScan, OverlapSet};
use crate::par::{self, Execution};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid lidar: {0}")]
    InvalidLidar(String),
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("overlap set does not match the supplied scans: {0}")]
    SceneMismatch(String),
}

fn zero() -> Vec3 {
    Vec3::zeros()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub center: Vec3,
    pub size: Vec3,
    #[serde(default)]
    pub yaw: f64,
    /// m/s; zero for static boxes.
    #[serde(default = "zero")]
    pub velocity: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

impl SceneBox {
    pub fn at(&self, time: f64) -> OrientedBox {
        OrientedBox {
            center: self.center + self.velocity * time,
            size: self.size,
            yaw: self.yaw,
        }
    }

    pub fn is_moving(&self) -> bool {
        self.velocity.norm() > 0.0
    }
}

/// World of boxes, optionally over a horizontal ground plane.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Height of the ground plane, if any.
    #[serde(default)]
    pub ground_z: Option<f64>,
    /// Box centers at time zero must lie inside these bounds.
    #[serde(default = "Aabb::unbounded")]
    pub bounds: Aabb,
    #[serde(default)]
    pub static_boxes: Vec<SceneBox>,
    #[serde(default)]
    pub moving_boxes: Vec<SceneBox>,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<SceneSpec, SimError> {
        let scene: SceneSpec = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = self
            .static_boxes
            .iter()
            .map(|b| ("static", b))
            .chain(self.moving_boxes.iter().map(|b| ("moving", b)));
        for (k, (kind, b)) in all.enumerate() {
            let finite = b.center.iter().chain(b.size.iter()).chain(b.velocity.iter()).all(|x| x.is_finite())
                && b.yaw.is_finite();
            if !finite {
                return Err(SimError::InvalidScene(format!("{kind} box {k}: non-finite field")));
            }
            if b.size.iter().any(|&s| s <= 0.0) {
                return Err(SimError::InvalidScene(format!("{kind} box {k}: size must be positive")));
            }
            if kind == "static" && b.is_moving() {
                return Err(SimError::InvalidScene(format!("static box {k} has a velocity")));
            }
            if !self.bounds.contains(&b.center) {
                return Err(SimError::InvalidScene(format!("{kind} box {k} lies outside the world bounds")));
            }
        }
        if let Some(g) = self.ground_z {
            if !g.is_finite() {
                return Err(SimError::InvalidScene("ground_z is not finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinningLidarSpec {
    /// One elevation per channel, radians.
    pub elevations_rad: Vec<f64>,
    pub azimuth_step_rad: f64,
    pub max_range: f64,
    pub divergence_rad: f64,
    /// Standard deviation of Gaussian range noise; zero disables it.
    #[serde(default)]
    pub range_noise_std: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl Default for SpinningLidarSpec {
    fn default() -> Self {
        SpinningLidarSpec::hdl32_like(1024)
    }
}

impl SpinningLidarSpec {
    /// 32 channels spread evenly over [-30.67°, +10.67°].
    pub fn hdl32_like(azimuth_count: usize) -> Self {
        let (lo, hi) = (-30.67f64.to_radians(), 10.67f64.to_radians());
        SpinningLidarSpec {
            elevations_rad: (0..32).map(|k| lo + (hi - lo) * k as f64 / 31.0).collect(),
            azimuth_step_rad: std::f64::consts::TAU / azimuth_count as f64,
            max_range: 100.0,
            divergence_rad: 0.003,
            range_noise_std: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.elevations_rad.is_empty() {
            return Err(SimError::InvalidLidar("at least one channel required".into()));
        }
        if !(self.azimuth_step_rad > 0.0 && self.azimuth_step_rad.is_finite()) {
            return Err(SimError::InvalidLidar("azimuth step must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(SimError::InvalidLidar("max range must be positive".into()));
        }
        if !(self.range_noise_std >= 0.0 && self.range_noise_std.is_finite()) {
            return Err(SimError::InvalidLidar("range noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn azimuth_count(&self) -> usize {
        (std::f64::consts::TAU / self.azimuth_step_rad - 1e-9).ceil() as usize
    }

    pub fn beam_count(&self) -> usize {
        self.elevations_rad.len() * self.azimuth_count()
    }

    /// Unit direction of beam (channel, azimuth index) in the sensor frame.
    pub fn direction(&self, channel: usize, azimuth: usize) -> Vec3 {
        let el = self.elevations_rad[channel];
        let az = azimuth as f64 * self.azimuth_step_rad;
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HitTarget {
    Ground,
    Static(u32),
    Moving(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    /// Points in the sensor frame; `pose` maps them into the world.
    pub scan: Scan,
    pub hits: Vec<HitTarget>,
    /// (channel, azimuth index) of each point.
    pub beams: Vec<(u16, u32)>,
}

impl SimulatedScan {
    /// Points on boxes with non-zero velocity are moving; all others static.
    pub fn motion_labels(&self, scene: &SceneSpec) -> Vec<MotionClass> {
        self.hits
            .iter()
            .map(|h| match h {
                HitTarget::Moving(k) if scene.moving_boxes[*k as usize].is_moving() => MotionClass::Moving,
                _ => MotionClass::Static,
            })
            .collect()
    }
}

const MIN_HIT: f64 = 1e-9;

/// Entry distance of a ray into a box, if the ray starts outside it and
/// enters at a positive distance.
pub fn ray_box_entry(origin: &Vec3, dir: &Vec3, b: &OrientedBox) -> Option<f64> {
    let o = b.to_local(origin);
    let (s, c) = b.yaw.sin_cos();
    let d = Vec3::new(c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z);
    let half = b.size / 2.0;
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((-half[a] - o[a]) * inv, (half[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > MIN_HIT).then_some(t0)
}

/// Nearest surface along a world-frame ray at `time`, within `max_range`.
pub fn nearest_hit(
    scene: &SceneSpec,
    origin: &Vec3,
    dir: &Vec3,
    time: f64,
    max_range: f64,
) -> Option<(f64, HitTarget)> {
    let mut best: Option<(f64, HitTarget)> = None;
    let mut consider = |t: f64, target| {
        if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, target));
        }
    };
    if let Some(g) = scene.ground_z {
        if dir.z < 0.0 && origin.z > g {
            consider((g - origin.z) / dir.z, HitTarget::Ground);
        }
    }
    for (k, b) in scene.static_boxes.iter().enumerate() {
        if let Some(t) = ray_box_entry(origin, dir, &b.at(time)) {
            consider(t, HitTarget::Static(k as u32));
        }
    }
    for (k, b) in scene.moving_boxes.iter().enumerate() {
        if let Some(t) = ray_box_entry(origin, dir, &b.at(time)) {
            consider(t, HitTarget::Moving(k as u32));
        }
    }
    best
}

/// One sweep from `sensor_pose` (sensor to world) at `time`. Points are
/// ordered by (channel, azimuth); misses are omitted.
pub fn simulate_scan(
    scene: &SceneSpec,
    lidar: &SpinningLidarSpec,
    sensor_pose: &Pose,
    time: f64,
) -> SimulatedScan {
    simulate_scan_with(scene, lidar, sensor_pose, time, Execution::default())
}

pub fn simulate_scan_with(
    scene: &SceneSpec,
    lidar: &SpinningLidarSpec,
    sensor_pose: &Pose,
    time: f64,
    exec: Execution,
) -> SimulatedScan {
    let n_az = lidar.azimuth_count();
    let origin = sensor_pose.translation;
    let noise = (lidar.range_noise_std > 0.0)
        .then(|| Normal::new(0.0, lidar.range_noise_std).expect("validated std"));
    let rays = par::map_indices(lidar.beam_count(), exec, |k| {
        let (ch, az) = (k / n_az, k % n_az);
        let d = lidar.direction(ch, az);
        let dw = sensor_pose.transform_vector(&d);
        let (mut t, target) = nearest_hit(scene, &origin, &dw, time, lidar.max_range)?;
        if let Some(n) = &noise {
            let mut rng = ChaCha8Rng::seed_from_u64(lidar.noise_seed);
            rng.set_stream(k as u64);
            t = (t + n.sample(&mut rng)).max(MIN_HIT);
        }
        Some((d * t, target, (ch as u16, az as u32)))
    });
    let mut points = Vec::new();
    let mut hits = Vec::new();
    let mut beams = Vec::new();
    for (p, h, b) in rays.into_iter().flatten() {
        points.push(p);
        hits.push(h);
        beams.push(b);
    }
    SimulatedScan {
        scan: Scan::in_sensor_frame(points, time, *sensor_pose),
        hits,
        beams,
    }
}

/// Geometric occupancy of a world point seen from `sensor_origin` at `time`.
///
/// The ray toward the point is cast through the scene: the point is free in
/// front of the first surface, occupied within the occupied band behind it,
/// and unknown deeper than that. Points deep inside a box are therefore
/// unknown rather than occupied, mirroring what a beam can observe.
pub fn ground_truth_state(
    point: &Vec3,
    time: f64,
    sensor_origin: &Vec3,
    scene: &SceneSpec,
    sensor: &SensorConfig,
) -> OccupancyState {
    let delta = point - sensor_origin;
    let dist = delta.norm();
    if dist == 0.0 {
        return OccupancyState::Free;
    }
    let dir = delta / dist;
    match nearest_hit(scene, sensor_origin, &dir, time, f64::INFINITY) {
        None => OccupancyState::Free,
        Some((h, _)) if dist < h => OccupancyState::Free,
        Some((h, _)) if dist - h <= sensor.occupied_band() => OccupancyState::Occupied,
        Some(_) => OccupancyState::Unknown,
    }
}

/// How overlap coordinates and times relate to the simulated world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFrame {
    /// Current sensor frame to world.
    pub world_from_current: Pose,
    /// Added to overlap and scan times to obtain scene time.
    pub time_origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// `confusion[truth][label]`, indexed by occupancy state.
    pub confusion: [[u64; 3]; 3],
    pub compared: u64,
    pub near_boundary: u64,
    /// `None` when nothing was compared.
    pub agreement: Option<f64>,
}

/// Compares overlap labels with [`ground_truth_state`], skipping points whose
/// adjacent-beam range lies within `epsilon` of the hit or of the far edge of
/// the occupied band.
pub fn oracle_compare(
    overlaps: &OverlapSet,
    adjacents: &[AdjacentScan],
    scene: &SceneSpec,
    frame: &OracleFrame,
    sensor: &SensorConfig,
    epsilon: f64,
) -> Result<OracleReport, SimError> {
    let by_offset: HashMap<i8, &Scan> = adjacents.iter().map(|a| (a.offset, &a.scan)).collect();
    let band = sensor.occupied_band();
    let mut confusion = [[0u64; 3]; 3];
    let mut near_boundary = 0;
    for p in &overlaps.points {
        let scan = by_offset.get(&p.adjacent_scan_offset).ok_or_else(|| {
            SimError::SceneMismatch(format!("no adjacent scan with offset {}", p.adjacent_scan_offset))
        })?;
        let beam = model::beam_from_point(scan, p.adjacent_point_index as usize)
            .map_err(|e| SimError::SceneMismatch(e.to_string()))?;
        let rho = model::range_along_beam(&beam, &p.position);
        let d = (rho - beam.range).abs().min((rho - beam.range - band).abs());
        if !(d >= epsilon) {
            near_boundary += 1;
            continue;
        }
        let world = frame.world_from_current.transform_point(&p.position);
        let origin = frame.world_from_current.transform_point(&beam.origin);
        let truth = ground_truth_state(&world, frame.time_origin + p.time, &origin, scene, sensor);
        confusion[truth.index()][p.state.index()] += 1;
    }
    let compared: u64 = confusion.iter().flatten().sum();
    let agree: u64 = (0..3).map(|k| confusion[k][k]).sum();
    Ok(OracleReport {
        confusion,
        compared,
        near_boundary,
        agreement: (compared > 0).then(|| agree as f64 / compared as f64),
    })
}

/// Pairs of overlap points within `radius` of each other, observed at
/// different times, one labeled free and the other occupied.
pub fn temporal_inconsistencies(set: &OverlapSet, radius: f64, limit: usize) -> Vec<(usize, usize)> {
    let key = |p: &Vec3| {
        [
            (p.x / radius).floor() as i64,
            (p.y / radius).floor() as i64,
            (p.z / radius).floor() as i64,
        ]
    };
    let mut occupied: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (k, p) in set.points.iter().enumerate() {
        if p.state == OccupancyState::Occupied {
            occupied.entry(key(&p.position)).or_default().push(k);
        }
    }
    let mut out = Vec::new();
    for (a, p) in set.points.iter().enumerate() {
        if p.state != OccupancyState::Free {
            continue;
        }
        let c = key(&p.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cands) = occupied.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &b in cands {
                        let q = &set.points[b];
                        if q.time != p.time && (q.position - p.position).norm() <= radius {
                            out.push((a, b));
                            if out.len() >= limit {
                                return out;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Constant-velocity, constant-yaw-rate sensor motion sampled once per scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTrajectory {
    pub start: Vec3,
    #[serde(default = "zero")]
    pub velocity: Vec3,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub scan_period_s: f64,
    pub count: usize,
    #[serde(default)]
    pub start_time: f64,
}

impl LinearTrajectory {
    /// `(time, sensor-to-world pose)` per scan.
    pub fn samples(&self) -> Vec<(f64, Pose)> {
        (0..self.count)
            .map(|k| {
                let dt = k as f64 * self.scan_period_s;
                (
                    self.start_time + dt,
                    Pose::from_yaw_translation(self.yaw + self.yaw_rate * dt, self.start + self.velocity * dt),
                )
            })
            .collect()
    }
}
