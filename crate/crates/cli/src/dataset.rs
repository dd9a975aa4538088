//! On-disk sequence layout.
//!
//! ```text
//! <root>/scans/000000.bin      f32 x, y, z, intensity per point
//! <root>/poses.txt             one 3x4 row-major sensor-to-world pose per scan
//! <root>/times.txt             optional; one timestamp per scan
//! <root>/labels/000000.label   u8 motion class per point (0 static, 1 moving, 2 unknown)
//! <root>/ego/000000.mask       optional; u8 ego flag per point
//! <root>/predictions/000000.pred  u8 moving flag per point
//! <root>/boxes.jsonl           optional; one instance keyframe per line, world frame
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use top_core::io;
use top_core::Pose;

use crate::error::{CliError, Result};

pub fn frame_name(k: usize, ext: &str) -> String {
    format!("{k:06}.{ext}")
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Dataset { root: root.into() }
    }

    pub fn scan_path(&self, k: usize) -> PathBuf {
        self.root.join("scans").join(frame_name(k, "bin"))
    }

    pub fn label_path(&self, k: usize) -> PathBuf {
        self.root.join("labels").join(frame_name(k, "label"))
    }

    pub fn ego_path(&self, k: usize) -> PathBuf {
        self.root.join("ego").join(frame_name(k, "mask"))
    }

    pub fn prediction_path(&self, k: usize) -> PathBuf {
        self.root.join("predictions").join(frame_name(k, "pred"))
    }

    pub fn poses_path(&self) -> PathBuf {
        self.root.join("poses.txt")
    }

    pub fn times_path(&self) -> PathBuf {
        self.root.join("times.txt")
    }

    pub fn boxes_path(&self) -> PathBuf {
        self.root.join("boxes.jsonl")
    }

    /// Number of scans; files must be named 000000.bin, 000001.bin, ... with
    /// no gaps.
    pub fn scan_count(&self) -> Result<usize> {
        let dir = self.root.join("scans");
        let entries = fs::read_dir(&dir)
            .map_err(|e| CliError::data(format!("MissingScans: {}: {e}", dir.display())))?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".bin"))
            .collect();
        names.sort();
        for (k, n) in names.iter().enumerate() {
            if *n != frame_name(k, "bin") {
                return Err(CliError::data(format!(
                    "MissingScan: expected {} but found {n}",
                    frame_name(k, "bin")
                )));
            }
        }
        Ok(names.len())
    }

    pub fn load_poses(&self, count: usize) -> Result<Vec<Pose>> {
        let p = self.poses_path();
        if !p.exists() {
            return Err(CliError::data(format!("MissingPose: {} not found", p.display())));
        }
        let poses = io::read_poses(&p)?;
        if poses.len() < count {
            return Err(CliError::data(format!(
                "MissingPose: {} scans but only {} poses",
                count,
                poses.len()
            )));
        }
        Ok(poses)
    }

    /// Timestamps from times.txt, or `k * period` when it is absent.
    pub fn load_times(&self, count: usize, period: f64) -> Result<Vec<f64>> {
        let p = self.times_path();
        if !p.exists() {
            return Ok((0..count).map(|k| k as f64 * period).collect());
        }
        let times = io::parse_times(&fs::read_to_string(&p).map_err(|e| CliError::data(e.to_string()))?)?;
        if times.len() < count {
            return Err(CliError::data(format!(
                "MissingTime: {} scans but only {} timestamps",
                count,
                times.len()
            )));
        }
        Ok(times)
    }
}

/// Files and directories created by a command. Unless committed, everything
/// recorded is removed on drop so failed runs leave no partial outputs.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dir(&mut self, p: &Path) -> Result<PathBuf> {
        let mut missing = Vec::new();
        let mut cur = Some(p);
        while let Some(c) = cur {
            if c.as_os_str().is_empty() || c.exists() {
                break;
            }
            missing.push(c.to_path_buf());
            cur = c.parent();
        }
        fs::create_dir_all(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        self.dirs.extend(missing.into_iter().rev());
        Ok(p.to_path_buf())
    }

    /// Records `p` as an output about to be written.
    pub fn file(&mut self, p: PathBuf) -> PathBuf {
        self.files.push(p.clone());
        p
    }

    pub fn write(&mut self, p: PathBuf, bytes: &[u8]) -> Result<()> {
        let p = self.file(p);
        fs::write(&p, bytes).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}
