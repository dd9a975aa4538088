//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use top_core::mos::ThresholdTable;
use top_core::objectives::ClassWeights;
use top_core::overlap::Aabb;
use top_core::recon::{DEFAULT_FREE_PER_BEAM, DEFAULT_OCCUPIED_PER_BEAM};
use top_core::{ExtractionConfig, SensorConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub occupied_per_beam: u32,
    pub free_per_beam: u32,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            occupied_per_beam: DEFAULT_OCCUPIED_PER_BEAM,
            free_per_beam: DEFAULT_FREE_PER_BEAM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Slack added to box extents when assigning points to boxes.
    pub box_margin_m: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { box_margin_m: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: ClassWeights,
}

/// Fully resolved settings. `threads` is never serialized, so echoed
/// configs (and the hashes derived from them) do not depend on it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub sensor: SensorConfig,
    pub extraction: ExtractionConfig,
    pub thresholds: ThresholdTable,
    pub recon: ReconConfig,
    pub loss: LossConfig,
    pub label: LabelConfig,
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub bounds: Option<[f64; 6]>,
    pub n: Option<u32>,
    pub divergence: Option<f64>,
    pub lambda_occ: Option<f64>,
}

pub fn parse_bounds(s: &str) -> std::result::Result<[f64; 6], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.as_slice()
        .try_into()
        .map_err(|_| format!("expected 6 comma-separated numbers, got {}", v.len()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::data(format!("config: {e}")))
    }

    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::data(format!("config {}: {e}", p.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(t) = o.threads {
            cfg.threads = Some(t);
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(b) = o.bounds {
            cfg.extraction.bounds = Aabb::from_flat(&b);
        }
        if let Some(n) = o.n {
            cfg.extraction.n_adjacent = n;
        }
        if let Some(d) = o.divergence {
            cfg.sensor.divergence_angle_rad = d;
        }
        if let Some(l) = o.lambda_occ {
            cfg.sensor.occupied_confidence_threshold = l;
        }
        cfg.extraction.rng_seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        self.sensor
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.extraction
            .validate(&self.sensor)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.thresholds.validate().map_err(CliError::Usage)?;
        if !(self.label.box_margin_m >= 0.0) {
            return Err(CliError::Usage("label.box_margin_m must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        top_core::io::config_hash(&self.to_json())
    }

    /// Seed for work tied to scan `index`.
    pub fn scan_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let cfg = RunConfig::from_toml("seed = 4\n[extraction]\nn_adjacent = 3\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.extraction.n_adjacent, 3);
        assert_eq!(cfg.sensor, SensorConfig::default());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 4\n[extraction]\nn_adjacent = 3\n").unwrap();
        let o = Overrides {
            n: Some(2),
            ..Default::default()
        };
        let r = RunConfig::resolve(Some(&p), &o).unwrap();
        assert_eq!((r.seed, r.extraction.n_adjacent, r.extraction.rng_seed), (4, 2, 4));
    }

    #[test]
    fn threads_do_not_change_the_echo() {
        let a = RunConfig::resolve(None, &Overrides { threads: Some(1), ..Default::default() }).unwrap();
        let b = RunConfig::resolve(None, &Overrides { threads: Some(8), ..Default::default() }).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn bounds_flag() {
        assert_eq!(parse_bounds("-1,1,-2,2,-3,3").unwrap(), [-1., 1., -2., 2., -3., 3.]);
        assert!(parse_bounds("1,2").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sede = 1").is_err());
    }
}
