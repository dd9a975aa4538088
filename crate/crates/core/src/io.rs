//! File formats: KITTI-style scans, pose and time lists, overlap and
//! reconstruction sample files, per-point u8 files, box annotations as JSON
//! lines, probability tables, and JSON reports.
//!
//! All binary layouts are little-endian with fixed record sizes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{OccupancyState, Pose, Scan, SensorConfig};
use crate::mos::{Category, Keyframe, MotionClass, OrientedBox, TrackedBox};
use crate::overlap::{OverlapPoint, OverlapSet};
use crate::recon::ReconSample;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scan file length {0} is not a multiple of 16")]
    BadLength(usize),
    #[error("file is truncated: {0}")]
    TruncatedFile(String),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: rotation is not rigid (orthonormality error {error:.3e})")]
    NonRigid { line: usize, error: f64 },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("header declares {header} records but the file holds {actual}")]
    CountMismatch { header: u64, actual: u64 },
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("expected {expected} entries, found {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("line {line}: field `{field}`: {reason}")]
    SchemaViolation {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---- scans ----

/// Parses `(x, y, z, intensity)` f32 quadruples into a sensor-frame scan.
pub fn parse_scan_bin(bytes: &[u8]) -> Result<Scan> {
    if !bytes.len().is_multiple_of(16) {
        return Err(IoError::BadLength(bytes.len()));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        points.push(Vec3::new(f(0) as f64, f(1) as f64, f(2) as f64));
        intensity.push(f(3));
    }
    let mut scan = Scan::in_sensor_frame(points, 0.0, Pose::identity());
    scan.intensity = Some(intensity);
    Ok(scan)
}

/// Points are written as f32; missing intensity is written as zero.
pub fn encode_scan_bin(scan: &Scan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.len() * 16);
    for (k, p) in scan.points.iter().enumerate() {
        let i = scan.intensity.as_ref().and_then(|v| v.get(k)).copied().unwrap_or(0.0);
        for x in [p.x as f32, p.y as f32, p.z as f32, i] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_scan_bin(path: &Path) -> Result<Scan> {
    parse_scan_bin(&read_bytes(path)?)
}

pub fn write_scan_bin(path: &Path, scan: &Scan) -> Result<()> {
    write_bytes(path, &encode_scan_bin(scan))
}

// ---- poses and times ----

const REORTHO_TOL: f64 = 1e-6;
const WARN_TOL: f64 = 1e-4;
const RIGID_TOL: f64 = 1e-2;

/// One pose per non-blank line: 12 numbers, row-major 3×4.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| IoError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        let m: [f64; 12] = nums.as_slice().try_into().map_err(|_| IoError::MalformedLine {
            line: line_no,
            reason: format!("expected 12 numbers, found {}", nums.len()),
        })?;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(IoError::MalformedLine {
                line: line_no,
                reason: "non-finite value".into(),
            });
        }
        let pose = Pose::from_row_major(&m);
        let err = pose.orthonormality_error();
        if err > RIGID_TOL {
            return Err(IoError::NonRigid { line: line_no, error: err });
        }
        if err > WARN_TOL {
            log::warn!("pose line {line_no}: orthonormality error {err:.3e}, re-orthonormalizing");
        }
        out.push(if err > REORTHO_TOL { pose.orthonormalized() } else { pose });
    }
    Ok(out)
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    parse_poses(&read_text(path)?)
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    write_bytes(path, format_poses(poses).as_bytes())
}

/// One timestamp in seconds per non-blank line.
pub fn parse_times(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|e: std::num::ParseFloatError| IoError::MalformedLine {
            line: k + 1,
            reason: e.to_string(),
        })?;
        if !v.is_finite() {
            return Err(IoError::MalformedLine {
                line: k + 1,
                reason: "non-finite time".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn format_times(times: &[f64]) -> String {
    times.iter().map(|t| format!("{t:e}\n")).collect()
}

// ---- overlap and recon files ----

pub const OVERLAP_MAGIC: [u8; 4] = *b"TOVP";
pub const RECON_MAGIC: [u8; 4] = *b"TREC";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8 + 3 * 8 + 8;
pub const OVERLAP_RECORD_LEN: usize = 33;
pub const RECON_RECORD_LEN: usize = 21;

/// Header shared by overlap and recon files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FileHeader {
    pub version: u16,
    pub count: u64,
    pub sensor: SensorConfig,
    /// First eight bytes (little-endian) of the SHA-256 of the resolved
    /// configuration JSON.
    pub config_hash: u64,
}

pub fn config_hash(resolved_config_json: &str) -> u64 {
    let digest = Sha256::digest(resolved_config_json.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn encode_header(out: &mut Vec<u8>, magic: [u8; 4], count: u64, sensor: &SensorConfig, hash: u64) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for x in [
        sensor.divergence_angle_rad,
        sensor.occupied_confidence_threshold,
        sensor.decay_rate_per_meter,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&hash.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let v: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        v
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

fn decode_header<'a>(bytes: &'a [u8], magic: [u8; 4], record_len: usize) -> Result<(FileHeader, Cursor<'a>)> {
    if bytes.len() < 4 {
        return Err(IoError::TruncatedFile(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let mut c = Cursor { bytes, pos: 0 };
    let found = c.take::<4>();
    if found != magic {
        return Err(IoError::MagicMismatch { expected: magic, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::TruncatedFile(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let version = c.u16();
    if version != FORMAT_VERSION {
        return Err(IoError::VersionUnsupported(version));
    }
    let count = c.u64();
    let sensor = SensorConfig {
        divergence_angle_rad: c.f64(),
        occupied_confidence_threshold: c.f64(),
        decay_rate_per_meter: c.f64(),
    };
    let config_hash = c.u64();
    let body = bytes.len() - HEADER_LEN;
    if !body.is_multiple_of(record_len) {
        return Err(IoError::TruncatedFile(format!(
            "{body} body bytes is not a whole number of {record_len}-byte records"
        )));
    }
    let actual = (body / record_len) as u64;
    if actual != count {
        return Err(IoError::CountMismatch { header: count, actual });
    }
    Ok((
        FileHeader {
            version,
            count,
            sensor,
            config_hash,
        },
        c,
    ))
}

/// Encodes a canonically sorted overlap set. Positions, times, and
/// confidences are narrowed to f32; two reserved zero bytes close each
/// record.
pub fn encode_overlap_set(set: &OverlapSet, sensor: &SensorConfig, hash: u64) -> Result<Vec<u8>> {
    if !set.is_canonical() {
        return Err(IoError::InvalidRecord {
            index: 0,
            reason: "overlap set is not in canonical order".into(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * OVERLAP_RECORD_LEN);
    encode_header(&mut out, OVERLAP_MAGIC, set.len() as u64, sensor, hash);
    for p in &set.points {
        out.extend_from_slice(&p.current_point_index.to_le_bytes());
        out.extend_from_slice(&p.adjacent_scan_offset.to_le_bytes());
        out.extend_from_slice(&p.adjacent_point_index.to_le_bytes());
        for x in [p.position.x, p.position.y, p.position.z, p.time] {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.push(p.state.code());
        out.extend_from_slice(&(p.confidence as f32).to_le_bytes());
        out.push(p.sample_rank);
        out.extend_from_slice(&[0, 0]);
    }
    Ok(out)
}

pub fn decode_overlap_set(bytes: &[u8]) -> Result<(FileHeader, OverlapSet)> {
    let (header, mut c) = decode_header(bytes, OVERLAP_MAGIC, OVERLAP_RECORD_LEN)?;
    let mut points = Vec::with_capacity(header.count as usize);
    for index in 0..header.count as usize {
        let current_point_index = c.u32();
        let adjacent_scan_offset = c.u8() as i8;
        let adjacent_point_index = c.u32();
        let (x, y, z, time) = (c.f32(), c.f32(), c.f32(), c.f32());
        let code = c.u8();
        let confidence = c.f32();
        let sample_rank = c.u8();
        let _reserved = c.u16();
        let state = OccupancyState::from_code(code).ok_or_else(|| IoError::InvalidRecord {
            index,
            reason: format!("state code {code}"),
        })?;
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(IoError::InvalidRecord {
                index,
                reason: format!("confidence {confidence} outside (0, 1]"),
            });
        }
        points.push(OverlapPoint {
            position: Vec3::new(x as f64, y as f64, z as f64),
            time: time as f64,
            state,
            confidence: confidence as f64,
            current_point_index,
            adjacent_scan_offset,
            adjacent_point_index,
            sample_rank,
        });
    }
    Ok((header, OverlapSet { points }))
}

pub fn write_overlap_set(path: &Path, set: &OverlapSet, sensor: &SensorConfig, hash: u64) -> Result<()> {
    write_bytes(path, &encode_overlap_set(set, sensor, hash)?)
}

pub fn read_overlap_set(path: &Path) -> Result<(FileHeader, OverlapSet)> {
    decode_overlap_set(&read_bytes(path)?)
}

pub fn encode_recon_samples(samples: &[ReconSample], sensor: &SensorConfig, hash: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * RECON_RECORD_LEN);
    encode_header(&mut out, RECON_MAGIC, samples.len() as u64, sensor, hash);
    for s in samples {
        out.extend_from_slice(&s.current_point_index.to_le_bytes());
        for x in [s.position.x, s.position.y, s.position.z, s.time] {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.push(s.state.code());
    }
    out
}

pub fn decode_recon_samples(bytes: &[u8]) -> Result<(FileHeader, Vec<ReconSample>)> {
    let (header, mut c) = decode_header(bytes, RECON_MAGIC, RECON_RECORD_LEN)?;
    let mut out = Vec::with_capacity(header.count as usize);
    for index in 0..header.count as usize {
        let current_point_index = c.u32();
        let (x, y, z, time) = (c.f32(), c.f32(), c.f32(), c.f32());
        let code = c.u8();
        let state = OccupancyState::from_code(code).ok_or_else(|| IoError::InvalidRecord {
            index,
            reason: format!("state code {code}"),
        })?;
        out.push(ReconSample {
            position: Vec3::new(x as f64, y as f64, z as f64),
            time: time as f64,
            state,
            current_point_index,
        });
    }
    Ok((header, out))
}

pub fn write_recon_samples(path: &Path, samples: &[ReconSample], sensor: &SensorConfig, hash: u64) -> Result<()> {
    write_bytes(path, &encode_recon_samples(samples, sensor, hash))
}

pub fn read_recon_samples(path: &Path) -> Result<(FileHeader, Vec<ReconSample>)> {
    decode_recon_samples(&read_bytes(path)?)
}

// ---- per-point u8 files ----

fn check_len(got: usize, expected: Option<usize>) -> Result<()> {
    match expected {
        Some(e) if e != got => Err(IoError::LengthMismatch { expected: e, got }),
        _ => Ok(()),
    }
}

pub fn decode_motion_labels(bytes: &[u8], expected: Option<usize>) -> Result<Vec<MotionClass>> {
    check_len(bytes.len(), expected)?;
    bytes
        .iter()
        .enumerate()
        .map(|(index, &b)| {
            MotionClass::from_code(b).ok_or_else(|| IoError::InvalidRecord {
                index,
                reason: format!("motion label {b}"),
            })
        })
        .collect()
}

pub fn encode_motion_labels(labels: &[MotionClass]) -> Vec<u8> {
    labels.iter().map(|m| m.code()).collect()
}

/// 0/1 flags such as ego masks and binary moving predictions.
pub fn decode_flags(bytes: &[u8], expected: Option<usize>) -> Result<Vec<bool>> {
    check_len(bytes.len(), expected)?;
    bytes
        .iter()
        .enumerate()
        .map(|(index, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(IoError::InvalidRecord {
                index,
                reason: format!("flag value {b}"),
            }),
        })
        .collect()
}

pub fn encode_flags(flags: &[bool]) -> Vec<u8> {
    flags.iter().map(|&f| f as u8).collect()
}

pub fn read_motion_labels(path: &Path, expected: Option<usize>) -> Result<Vec<MotionClass>> {
    decode_motion_labels(&read_bytes(path)?, expected)
}

pub fn write_motion_labels(path: &Path, labels: &[MotionClass]) -> Result<()> {
    write_bytes(path, &encode_motion_labels(labels))
}

pub fn read_flags(path: &Path, expected: Option<usize>) -> Result<Vec<bool>> {
    decode_flags(&read_bytes(path)?, expected)
}

pub fn write_flags(path: &Path, flags: &[bool]) -> Result<()> {
    write_bytes(path, &encode_flags(flags))
}

// ---- probabilities ----

/// Three whitespace-separated probabilities (free, occupied, unknown) per
/// non-blank line.
pub fn parse_probabilities(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| IoError::MalformedLine {
                line: k + 1,
                reason: e.to_string(),
            })?;
        let p: [f64; 3] = nums.as_slice().try_into().map_err(|_| IoError::MalformedLine {
            line: k + 1,
            reason: format!("expected 3 probabilities, found {}", nums.len()),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_probabilities(path: &Path) -> Result<Vec<[f64; 3]>> {
    parse_probabilities(&read_text(path)?)
}

// ---- boxes ----

/// One line of the boxes file: a single keyframe of one instance, in world
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub instance_id: String,
    pub category: Category,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u32>,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

fn schema(line: usize, field: &str, reason: impl Into<String>) -> IoError {
    IoError::SchemaViolation {
        line,
        field: field.into(),
        reason: reason.into(),
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| schema(line, name, "missing"))
}

fn finite(v: &Value, line: usize, name: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(line, name, "expected a finite number"))
}

fn triple(v: &Value, line: usize, name: &str) -> Result<[f64; 3]> {
    let arr = v.as_array().filter(|a| a.len() == 3).ok_or_else(|| schema(line, name, "expected 3 numbers"))?;
    Ok([finite(&arr[0], line, name)?, finite(&arr[1], line, name)?, finite(&arr[2], line, name)?])
}

fn parse_box_line(text: &str, line: usize) -> Result<BoxRecord> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema(line, "<line>", e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| schema(line, "<line>", "expected a JSON object"))?;
    let instance_id = field(obj, line, "instance_id")?
        .as_str()
        .ok_or_else(|| schema(line, "instance_id", "expected a string"))?
        .to_string();
    let category: Category = serde_json::from_value(field(obj, line, "category")?.clone())
        .map_err(|_| schema(line, "category", "expected one of human, cycle, vehicle"))?;
    let timestamp = finite(field(obj, line, "timestamp")?, line, "timestamp")?;
    let frame = match obj.get("frame") {
        None | Some(Value::Null) => None,
        Some(f) => Some(
            f.as_u64()
                .and_then(|x| u32::try_from(x).ok())
                .ok_or_else(|| schema(line, "frame", "expected a non-negative integer"))?,
        ),
    };
    let center = triple(field(obj, line, "center")?, line, "center")?;
    let size = triple(field(obj, line, "size")?, line, "size")?;
    if size.iter().any(|&s| s <= 0.0) {
        return Err(schema(line, "size", "extents must be positive"));
    }
    let yaw = finite(field(obj, line, "yaw")?, line, "yaw")?;
    Ok(BoxRecord {
        instance_id,
        category,
        timestamp,
        frame,
        center,
        size,
        yaw,
    })
}

/// Groups keyframe lines into tracks, in order of first appearance, with
/// keyframes sorted by timestamp.
pub fn parse_boxes_jsonl(text: &str) -> Result<Vec<TrackedBox>> {
    let mut tracks: Vec<TrackedBox> = Vec::new();
    let mut first_line: Vec<usize> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = parse_box_line(line, k + 1)?;
        let kf = Keyframe {
            bbox: OrientedBox {
                center: Vec3::from(r.center),
                size: Vec3::from(r.size),
                yaw: r.yaw,
            },
            timestamp: r.timestamp,
            frame: r.frame,
        };
        match tracks.iter().position(|t| t.instance_id == r.instance_id) {
            Some(t) => {
                if tracks[t].category != r.category {
                    return Err(schema(
                        k + 1,
                        "category",
                        format!("differs from line {} for the same instance", first_line[t]),
                    ));
                }
                tracks[t].keyframes.push(kf);
            }
            None => {
                first_line.push(k + 1);
                tracks.push(TrackedBox {
                    instance_id: r.instance_id,
                    category: r.category,
                    keyframes: vec![kf],
                });
            }
        }
    }
    for t in &mut tracks {
        t.keyframes.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    Ok(tracks)
}

pub fn format_boxes_jsonl(tracks: &[TrackedBox]) -> String {
    let mut s = String::new();
    for t in tracks {
        for kf in &t.keyframes {
            let r = BoxRecord {
                instance_id: t.instance_id.clone(),
                category: t.category,
                timestamp: kf.timestamp,
                frame: kf.frame,
                center: kf.bbox.center.into(),
                size: kf.bbox.size.into(),
                yaw: kf.bbox.yaw,
            };
            s.push_str(&serde_json::to_string(&r).expect("box serializes"));
            s.push('\n');
        }
    }
    s
}

pub fn read_boxes_jsonl(path: &Path) -> Result<Vec<TrackedBox>> {
    parse_boxes_jsonl(&read_text(path)?)
}

// ---- reports ----

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| IoError::Json(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::Json(e.to_string()))
}
