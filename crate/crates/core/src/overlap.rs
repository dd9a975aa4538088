//! Temporal overlapping point extraction.
//!
//! For every current beam the adjacent beams that can share a plane with it
//! are pulled from a [`DirectionIndex`], evaluated with
//! [`geometry::evaluate_pair`], and labeled by projecting each overlap
//! location onto the adjacent beam and applying the occupancy measurement.
//!
//! Output order is canonical: `(current_point_index, adjacent_scan_offset,
//! adjacent_point_index, sample_rank)`. Work is split over contiguous chunks
//! of current beams and concatenated in chunk order, so the result does not
//! depend on the number of worker threads.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry;
use crate::model::{self, Beam, ModelError, OccupancyState, Scan, SensorConfig};
use crate::par::{self, Execution};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("scan has no usable points")]
    EmptyScan,
    #[error("scan is not in the current frame: {0}")]
    FrameMismatch(String),
    #[error("no scan for adjacent offset {offset}")]
    MissingPose { offset: i32 },
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    /// Parses `x0,x1,y0,y1,z0,z1`.
    pub fn from_flat(v: &[f64; 6]) -> Self {
        Aabb::new([v[0], v[2], v[4]], [v[1], v[3], v[5]])
    }

    pub fn unbounded() -> Self {
        Aabb::new([f64::NEG_INFINITY; 3], [f64::INFINITY; 3])
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| !(self.min[k] < self.max[k]))
    }

    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

impl Default for Aabb {
    fn default() -> Self {
        Aabb::new([-70.0, -70.0, -4.5], [70.0, 70.0, 4.5])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Adjacent scans on each side of the current scan.
    pub n_adjacent: u32,
    pub scan_period_s: f64,
    /// Crop region in the current frame.
    pub bounds: Aabb,
    /// How far past the current hit overlap points are kept. `None` means the
    /// occupied band length of the sensor.
    pub max_tail_beyond_hit_m: Option<f64>,
    pub max_overlaps_per_beam: Option<u32>,
    pub rng_seed: u64,
    /// Cell size of the direction index. `None` picks a size from the
    /// divergence angle.
    pub index_cell_rad: Option<f64>,
    /// Drop segment samples that lie before the segment start, where the
    /// adjacent beam does not yet cover the current centerline.
    pub clip_to_segment: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            n_adjacent: 6,
            scan_period_s: 0.5,
            bounds: Aabb::default(),
            max_tail_beyond_hit_m: None,
            max_overlaps_per_beam: None,
            rng_seed: 0,
            index_cell_rad: None,
            clip_to_segment: true,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self, sensor: &SensorConfig) -> Result<(), ExtractError> {
        if self.n_adjacent < 1 || self.n_adjacent > 127 {
            return Err(ExtractError::InvalidConfig(format!(
                "n_adjacent must be in 1..=127, got {}",
                self.n_adjacent
            )));
        }
        if self.bounds.is_empty() {
            return Err(ExtractError::InvalidConfig("crop bounds are empty".into()));
        }
        if let Some(t) = self.max_tail_beyond_hit_m {
            if !(t >= 0.0) {
                return Err(ExtractError::InvalidConfig(format!("negative tail {t}")));
            }
        }
        if let Some(c) = self.index_cell_rad {
            if !(c >= sensor.divergence_angle_rad) {
                return Err(ExtractError::InvalidConfig(format!(
                    "index cell {c} rad is smaller than the divergence angle"
                )));
            }
        }
        Ok(())
    }

    pub fn tail(&self, sensor: &SensorConfig) -> f64 {
        self.max_tail_beyond_hit_m
            .unwrap_or_else(|| sensor.occupied_band())
    }

    pub fn cell_size(&self, sensor: &SensorConfig) -> f64 {
        self.index_cell_rad
            .unwrap_or(2.0 * sensor.divergence_angle_rad)
            .max(sensor.divergence_angle_rad)
    }
}

/// A location on a current beam observed by an adjacent beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapPoint {
    /// Current frame, meters.
    pub position: Vec3,
    /// Time of the observing adjacent scan relative to the current scan.
    pub time: f64,
    pub state: OccupancyState,
    pub confidence: f64,
    pub current_point_index: u32,
    pub adjacent_scan_offset: i8,
    pub adjacent_point_index: u32,
    /// 0 for point overlaps, 0..5 for the samples of a segment overlap.
    pub sample_rank: u8,
}

impl OverlapPoint {
    #[inline]
    pub fn sort_key(&self) -> (u32, i8, u32, u8) {
        (
            self.current_point_index,
            self.adjacent_scan_offset,
            self.adjacent_point_index,
            self.sample_rank,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapSet {
    pub points: Vec<OverlapPoint>,
}

impl OverlapSet {
    pub fn new(mut points: Vec<OverlapPoint>) -> Self {
        points.sort_unstable_by_key(OverlapPoint::sort_key);
        OverlapSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point counts indexed by [`OccupancyState::index`].
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in &self.points {
            c[p.state.index()] += 1;
        }
        c
    }

    pub fn is_canonical(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[0].sort_key() < w[1].sort_key())
    }
}

#[derive(Debug, Clone)]
struct IndexCell {
    az: u32,
    start: u32,
    end: u32,
}

#[derive(Debug, Clone)]
struct IndexRow {
    el: u32,
    sin_center: f64,
    cos_center: f64,
    cells: Vec<IndexCell>,
}

/// Beams of one adjacent scan bucketed on an azimuth/elevation grid over the
/// direction sphere.
#[derive(Debug, Clone)]
pub struct DirectionIndex {
    n_el: u32,
    n_az: u32,
    d_el: f64,
    d_az: f64,
    rows: Vec<IndexRow>,
    order: Vec<u32>,
    beams: Vec<Option<Beam>>,
    origin: Vec3,
}

impl DirectionIndex {
    pub fn origin(&self) -> &Vec3 {
        &self.origin
    }

    /// Beam of adjacent point `j`, `None` for zero-range points.
    pub fn beam(&self, j: u32) -> Option<&Beam> {
        self.beams.get(j as usize).and_then(Option::as_ref)
    }

    pub fn indexed_len(&self) -> usize {
        self.order.len()
    }

    pub fn occupied_cells(&self) -> usize {
        self.rows.iter().map(|r| r.cells.len()).sum()
    }

    /// Cell-angular diagonal, an upper bound on the angular distance between
    /// any two directions in one cell.
    pub fn cell_diagonal(&self) -> f64 {
        self.d_el.max(self.d_az) * std::f64::consts::SQRT_2
    }

    fn cell_of(&self, d: &Vec3) -> (u32, u32) {
        let el = d.z.clamp(-1.0, 1.0).asin();
        let az = d.y.atan2(d.x);
        let ei = (((el + FRAC_PI_2) / self.d_el) as u32).min(self.n_el - 1);
        let ai = (((az + PI) / self.d_az) as u32) % self.n_az;
        (ei, ai)
    }

    /// Appends every indexed beam whose cell center lies within
    /// `half_width` of the great circle with unit `normal`.
    pub fn band_query(&self, normal: &Vec3, half_width: f64, out: &mut Vec<u32>) {
        if half_width >= FRAC_PI_2 {
            out.extend_from_slice(&self.order);
            return;
        }
        let s = half_width.sin();
        let rho = normal.x.hypot(normal.y);
        let psi = normal.y.atan2(normal.x);
        let mut ranges: Vec<(u32, u32)> = Vec::with_capacity(4);
        for row in &self.rows {
            ranges.clear();
            let a = rho * row.cos_center;
            let b = normal.z * row.sin_center;
            if a < 1e-12 {
                if b.abs() <= s {
                    ranges.push((0, self.n_az));
                }
            } else {
                let lo = (-s - b) / a;
                let hi = (s - b) / a;
                if lo > 1.0 || hi < -1.0 {
                    continue;
                }
                let d1 = hi.min(1.0).acos();
                let d2 = lo.max(-1.0).acos();
                self.push_az_interval(psi + d1, psi + d2, &mut ranges);
                self.push_az_interval(psi - d2, psi - d1, &mut ranges);
            }
            if ranges.is_empty() {
                continue;
            }
            ranges.sort_unstable();
            let mut merged: Vec<(u32, u32)> = Vec::with_capacity(ranges.len());
            for &(s0, e0) in ranges.iter() {
                match merged.last_mut() {
                    Some(last) if s0 <= last.1 => last.1 = last.1.max(e0),
                    _ => merged.push((s0, e0)),
                }
            }
            for (s0, e0) in merged {
                let first = row.cells.partition_point(|c| c.az < s0);
                for cell in row.cells[first..].iter().take_while(|c| c.az < e0) {
                    out.extend_from_slice(&self.order[cell.start as usize..cell.end as usize]);
                }
            }
        }
    }

    /// Appends every indexed beam within `half_angle` of unit direction `d`
    /// (plus beams in neighboring cells).
    pub fn cone_query(&self, d: &Vec3, half_angle: f64, out: &mut Vec<u32>) {
        let e0 = d.z.clamp(-1.0, 1.0).asin();
        let az0 = d.y.atan2(d.x);
        let reach = half_angle + self.d_el;
        // Azimuth half-width of the cone's tangent meridians, or a full row
        // when the cone contains a pole.
        let full = half_angle >= FRAC_PI_2 - e0.abs();
        let w = if full {
            PI
        } else {
            (half_angle.sin() / e0.cos()).min(1.0).asin()
        };
        let mut ranges: Vec<(u32, u32)> = Vec::with_capacity(2);
        for row in &self.rows {
            let center = -FRAC_PI_2 + (row.el as f64 + 0.5) * self.d_el;
            if (center - e0).abs() > reach {
                continue;
            }
            ranges.clear();
            if full {
                ranges.push((0, self.n_az));
            } else {
                self.push_az_interval(az0 - w, az0 + w, &mut ranges);
            }
            for &(a0, a1) in &ranges {
                let first = row.cells.partition_point(|c| c.az < a0);
                for cell in row.cells[first..].iter().take_while(|c| c.az < a1) {
                    out.extend_from_slice(&self.order[cell.start as usize..cell.end as usize]);
                }
            }
        }
    }

    /// Adds the half-open azimuth cell ranges whose centers cover the angular
    /// interval `[from, to]`, widened by one cell on each side.
    fn push_az_interval(&self, from: f64, to: f64, out: &mut Vec<(u32, u32)>) {
        let n = self.n_az as i64;
        let first = ((from + PI) / self.d_az - 0.5).ceil() as i64 - 1;
        let last = ((to + PI) / self.d_az - 0.5).floor() as i64 + 1;
        if last < first {
            return;
        }
        if last - first + 1 >= n {
            out.push((0, self.n_az));
            return;
        }
        let start = first.rem_euclid(n);
        let end = start + (last - first + 1);
        if end <= n {
            out.push((start as u32, end as u32));
        } else {
            out.push((start as u32, n as u32));
            out.push((0, (end - n) as u32));
        }
    }
}

/// Indexes the beam directions of `adjacent` (already in the current frame).
pub fn build_direction_index(
    adjacent: &Scan,
    cell_size_rad: f64,
) -> Result<DirectionIndex, ExtractError> {
    if !(cell_size_rad > 0.0) {
        return Err(ExtractError::InvalidConfig(format!(
            "cell size {cell_size_rad} must be positive"
        )));
    }
    let beams: Vec<Option<Beam>> = (0..adjacent.len())
        .map(|j| model::beam_from_point(adjacent, j).ok())
        .collect();
    if beams.iter().all(Option::is_none) {
        return Err(ExtractError::EmptyScan);
    }
    let n_el = ((PI / cell_size_rad).floor() as u32).max(1);
    let n_az = ((TAU / cell_size_rad).floor() as u32).max(1);
    let mut index = DirectionIndex {
        n_el,
        n_az,
        d_el: PI / n_el as f64,
        d_az: TAU / n_az as f64,
        rows: Vec::new(),
        order: Vec::new(),
        beams,
        origin: adjacent.sensor_origin,
    };
    let mut keyed: Vec<(u32, u32, u32)> = index
        .beams
        .iter()
        .enumerate()
        .filter_map(|(j, b)| {
            b.as_ref().map(|b| {
                let (e, a) = index.cell_of(&b.direction);
                (e, a, j as u32)
            })
        })
        .collect();
    keyed.sort_unstable();
    index.order = keyed.iter().map(|k| k.2).collect();
    let mut k = 0;
    while k < keyed.len() {
        let el = keyed[k].0;
        let center = -FRAC_PI_2 + (el as f64 + 0.5) * index.d_el;
        let mut row = IndexRow {
            el,
            sin_center: center.sin(),
            cos_center: center.cos(),
            cells: Vec::new(),
        };
        while k < keyed.len() && keyed[k].0 == el {
            let az = keyed[k].1;
            let start = k;
            while k < keyed.len() && keyed[k].0 == el && keyed[k].1 == az {
                k += 1;
            }
            row.cells.push(IndexCell {
                az,
                start: start as u32,
                end: k as u32,
            });
        }
        index.rows.push(row);
    }
    debug_assert!(index.rows.windows(2).all(|w| w[0].el < w[1].el));
    Ok(index)
}

/// Reference-plane normal of a current beam, `None` when degenerate.
#[inline]
fn current_normal(current: &Beam, adjacent_origin: &Vec3) -> Option<Vec3> {
    geometry::plane_normal(&current.direction, adjacent_origin).ok()
}

fn coplanar_candidates_into(
    normal: Option<&Vec3>,
    index: &DirectionIndex,
    sensor: &SensorConfig,
    out: &mut Vec<u32>,
) {
    match normal {
        Some(n) => {
            let w = sensor.divergence_angle_rad / 2.0 + index.cell_diagonal();
            index.band_query(n, w, out);
        }
        None => out.extend_from_slice(&index.order),
    }
}

fn candidates_into(
    current: &Beam,
    normal: Option<&Vec3>,
    index: &DirectionIndex,
    sensor: &SensorConfig,
    out: &mut Vec<u32>,
) {
    if normal.is_none() && index.origin().norm() <= geometry::ORIGIN_EPS {
        // Shared apex: only beams within the divergence angle can overlap.
        let h = sensor.divergence_angle_rad * (1.0 + 1e-9) + 1e-12;
        index.cone_query(&current.direction, h, out);
    } else {
        coplanar_candidates_into(normal, index, sensor, out);
    }
}

/// Adjacent beams that may overlap `current_beam`: a superset of the
/// coplanar beams, or of the beams within the divergence angle when both
/// scans share a sensor origin. All beams when the adjacent origin lies on
/// the current centerline.
pub fn candidate_pairs(
    current_beam: &Beam,
    index: &DirectionIndex,
    sensor: &SensorConfig,
) -> Vec<u32> {
    let mut out = Vec::new();
    let n = current_normal(current_beam, index.origin());
    candidates_into(current_beam, n.as_ref(), index, sensor, &mut out);
    out
}

fn current_beams(current: &Scan) -> Vec<Option<Beam>> {
    (0..current.len())
        .map(|i| model::beam_from_point(current, i).ok())
        .collect()
}

fn check_frames(current: &Scan, adjacent: &Scan) -> Result<(), ExtractError> {
    if !current.pose.is_identity(1e-12) || !adjacent.pose.is_identity(1e-12) {
        return Err(ExtractError::FrameMismatch(
            "pose has not been applied".into(),
        ));
    }
    if current.sensor_origin.norm() > 1e-9 {
        return Err(ExtractError::FrameMismatch(format!(
            "current sensor origin {:?} is not at the frame origin",
            current.sensor_origin.as_slice()
        )));
    }
    Ok(())
}

/// Coplanar pairs `(i, j)` found through the direction index, in sorted order.
pub fn coplanar_pairs(
    current: &Scan,
    adjacent: &Scan,
    sensor: &SensorConfig,
    cell_size_rad: f64,
) -> Result<Vec<(u32, u32)>, ExtractError> {
    check_frames(current, adjacent)?;
    if current.is_empty() || adjacent.is_empty() {
        return Ok(Vec::new());
    }
    let index = build_direction_index(adjacent, cell_size_rad)?;
    let mut pairs = Vec::new();
    let mut cands = Vec::new();
    for (i, b) in current_beams(current).iter().enumerate() {
        let Some(b) = b else { continue };
        let n = current_normal(b, index.origin());
        cands.clear();
        coplanar_candidates_into(n.as_ref(), &index, sensor, &mut cands);
        for &j in &cands {
            let d_j = &index.beam(j).expect("indexed beam").direction;
            if geometry::coplanar_angle(n.as_ref(), d_j, sensor).is_some() {
                pairs.push((i as u32, j));
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

struct Adjacent<'a> {
    offset: i8,
    time: f64,
    index: &'a DirectionIndex,
}

struct BeamContext<'a> {
    cfg: &'a ExtractionConfig,
    sensor: &'a SensorConfig,
    tail: f64,
}

impl BeamContext<'_> {
    fn extract_beam(
        &self,
        i: u32,
        current: &Beam,
        adjacents: &[Adjacent<'_>],
        cands: &mut Vec<u32>,
        out: &mut Vec<OverlapPoint>,
    ) {
        let first = out.len();
        let max_current_range = current.range + self.tail;
        for adj in adjacents {
            let n = current_normal(current, adj.index.origin());
            cands.clear();
            candidates_into(current, n.as_ref(), adj.index, self.sensor, cands);
            for &j in cands.iter() {
                let b_j = adj.index.beam(j).expect("indexed beam");
                let overlap =
                    match geometry::evaluate_pair(i, current, j, b_j, n.as_ref(), self.sensor) {
                        Ok(Some(o)) => o,
                        _ => continue,
                    };
                let min_range = match &overlap {
                    geometry::PairOverlap::Segment(_, s) if self.cfg.clip_to_segment => s.start_range_current,
                    _ => 0.0,
                };
                for (rank, o) in overlap.locations().enumerate() {
                    let cur_range = o.dot(&current.direction);
                    if !(cur_range > 0.0 && cur_range >= min_range && cur_range <= max_current_range) {
                        continue;
                    }
                    if !self.cfg.bounds.contains(&o) {
                        continue;
                    }
                    let adj_range = model::range_along_beam(b_j, &o);
                    if !(adj_range > 0.0) {
                        continue;
                    }
                    let conf = model::confidence_unchecked(self.sensor, adj_range, b_j.range);
                    let state =
                        model::state_from_confidence(self.sensor, adj_range, b_j.range, conf);
                    out.push(OverlapPoint {
                        position: o,
                        time: adj.time,
                        state,
                        confidence: conf,
                        current_point_index: i,
                        adjacent_scan_offset: adj.offset,
                        adjacent_point_index: j,
                        sample_rank: rank as u8,
                    });
                }
            }
        }
        let mine = &mut out[first..];
        mine.sort_unstable_by_key(OverlapPoint::sort_key);
        if let Some(cap) = self.cfg.max_overlaps_per_beam {
            let cap = cap as usize;
            if mine.len() > cap {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
                rng.set_stream(i as u64);
                let mut keep = index::sample(&mut rng, mine.len(), cap).into_vec();
                keep.sort_unstable();
                let kept: Vec<OverlapPoint> = keep.iter().map(|&k| mine[k]).collect();
                out.truncate(first);
                out.extend(kept);
            }
        }
    }
}

const BEAM_CHUNK: usize = 256;

fn extract_with_indices(
    current: &Scan,
    adjacents: &[Adjacent<'_>],
    cfg: &ExtractionConfig,
    sensor: &SensorConfig,
    exec: Execution,
) -> Vec<OverlapPoint> {
    let beams = current_beams(current);
    let ctx = BeamContext {
        cfg,
        sensor,
        tail: cfg.tail(sensor),
    };
    par::flat_map_chunks(beams.len(), BEAM_CHUNK, exec, |range| {
        let mut out = Vec::new();
        let mut cands = Vec::new();
        for i in range {
            if let Some(b) = &beams[i] {
                ctx.extract_beam(i as u32, b, adjacents, &mut cands, &mut out);
            }
        }
        out
    })
}

/// Overlap points between the current scan and one adjacent scan, both
/// already in the current frame.
pub fn extract_scan_pair(
    current: &Scan,
    adjacent: &Scan,
    adjacent_offset: i8,
    cfg: &ExtractionConfig,
    sensor: &SensorConfig,
) -> Result<Vec<OverlapPoint>, ExtractError> {
    extract_scan_pair_with(current, adjacent, adjacent_offset, cfg, sensor, Execution::default())
}

pub fn extract_scan_pair_with(
    current: &Scan,
    adjacent: &Scan,
    adjacent_offset: i8,
    cfg: &ExtractionConfig,
    sensor: &SensorConfig,
    exec: Execution,
) -> Result<Vec<OverlapPoint>, ExtractError> {
    sensor.validate()?;
    cfg.validate(sensor)?;
    check_frames(current, adjacent)?;
    if current.is_empty() || adjacent.is_empty() {
        return Ok(Vec::new());
    }
    let index = match build_direction_index(adjacent, cfg.cell_size(sensor)) {
        Ok(ix) => ix,
        Err(ExtractError::EmptyScan) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let adj = [Adjacent {
        offset: adjacent_offset,
        time: adjacent.time,
        index: &index,
    }];
    Ok(extract_with_indices(current, &adj, cfg, sensor, exec))
}

/// An adjacent scan placed in the current frame, tagged with its signed
/// offset from the current scan.
#[derive(Debug, Clone)]
pub struct AdjacentScan {
    pub offset: i8,
    pub scan: Scan,
}

/// Overlap points of the current scan against all adjacent scans.
pub fn extract_sequence(
    current: &Scan,
    adjacents: &[AdjacentScan],
    cfg: &ExtractionConfig,
    sensor: &SensorConfig,
) -> Result<OverlapSet, ExtractError> {
    extract_sequence_with(current, adjacents, cfg, sensor, Execution::default())
}

pub fn extract_sequence_with(
    current: &Scan,
    adjacents: &[AdjacentScan],
    cfg: &ExtractionConfig,
    sensor: &SensorConfig,
    exec: Execution,
) -> Result<OverlapSet, ExtractError> {
    sensor.validate()?;
    cfg.validate(sensor)?;
    let n = cfg.n_adjacent as i32;
    for adj in adjacents {
        let o = adj.offset as i32;
        if o == 0 || o.abs() > n {
            return Err(ExtractError::InvalidConfig(format!(
                "adjacent offset {o} outside [-{n}, {n}] \\ {{0}}"
            )));
        }
        check_frames(current, &adj.scan)?;
    }
    for o in (-n..=n).filter(|&o| o != 0) {
        if !adjacents.iter().any(|a| a.offset as i32 == o) {
            return Err(ExtractError::MissingPose { offset: o });
        }
    }
    let mut sorted: Vec<&AdjacentScan> = adjacents.iter().collect();
    sorted.sort_by_key(|a| a.offset);
    if sorted.windows(2).any(|w| w[0].offset == w[1].offset) {
        return Err(ExtractError::InvalidConfig("duplicate adjacent offset".into()));
    }
    if current.is_empty() {
        return Ok(OverlapSet::default());
    }
    let cell = cfg.cell_size(sensor);
    let built = par::map_slice(&sorted, exec, |a| {
        if a.scan.is_empty() {
            return Ok(None);
        }
        match build_direction_index(&a.scan, cell) {
            Ok(ix) => Ok(Some(ix)),
            Err(ExtractError::EmptyScan) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut indices = Vec::with_capacity(built.len());
    for b in built {
        indices.push(b?);
    }
    let adj: Vec<Adjacent<'_>> = sorted
        .iter()
        .zip(&indices)
        .filter_map(|(a, ix)| {
            ix.as_ref().map(|index| Adjacent {
                offset: a.offset,
                time: a.scan.time,
                index,
            })
        })
        .collect();
    let points = extract_with_indices(current, &adj, cfg, sensor, exec);
    let set = OverlapSet { points };
    debug_assert!(set.is_canonical());
    Ok(set)
}

/// Keeps every occupied point plus up to five times as many free points and
/// as many unknown points, drawn without replacement.
pub fn balance_classes(set: &OverlapSet, seed: u64) -> OverlapSet {
    let mut by_state: [Vec<usize>; 3] = Default::default();
    for (k, p) in set.points.iter().enumerate() {
        by_state[p.state.index()].push(k);
    }
    let occupied = by_state[OccupancyState::Occupied.index()].len();
    let mut keep = vec![false; set.points.len()];
    for &k in &by_state[OccupancyState::Occupied.index()] {
        keep[k] = true;
    }
    let quotas = [
        (OccupancyState::Free, 5 * occupied, 1u64),
        (OccupancyState::Unknown, occupied, 2u64),
    ];
    for (state, quota, stream) in quotas {
        let pool = &by_state[state.index()];
        let take = quota.min(pool.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        for pick in index::sample(&mut rng, pool.len(), take) {
            keep[pool[pick]] = true;
        }
    }
    OverlapSet {
        points: set
            .points
            .iter()
            .zip(&keep)
            .filter_map(|(p, &k)| k.then_some(*p))
            .collect(),
    }
}
