//! Reference positional encoding and cross-entropy objectives.
//!
//! Predictions are opaque probability vectors over (free, occupied,
//! unknown); no network is involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OccupancyState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("sample count {got} != {n_points} points x {per_beam} per beam")]
    CountMismatch {
        got: usize,
        n_points: usize,
        per_beam: usize,
    },
    #[error("sample {index}: probability of the true class is zero")]
    NonFiniteLoss { index: usize },
    #[error("encoding dimension {0} is not a positive multiple of 8")]
    BadDimension(usize),
    #[error("invalid prediction at {index}: {reason}")]
    InvalidPrediction { index: usize, reason: String },
}

/// Per-state loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassWeights {
    pub free: f64,
    pub occupied: f64,
    pub unknown: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            free: 1.0,
            occupied: 5.0,
            unknown: 1.0,
        }
    }
}

impl ClassWeights {
    #[inline]
    pub fn get(&self, s: OccupancyState) -> f64 {
        match s {
            OccupancyState::Free => self.free,
            OccupancyState::Occupied => self.occupied,
            OccupancyState::Unknown => self.unknown,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        ClassWeights {
            free: self.free * c,
            occupied: self.occupied * c,
            unknown: self.unknown * c,
        }
    }
}

/// Predicted probabilities over (free, occupied, unknown).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatePrediction {
    pub probabilities: [f64; 3],
}

impl StatePrediction {
    pub fn new(probabilities: [f64; 3]) -> Self {
        StatePrediction { probabilities }
    }

    pub fn one_hot(s: OccupancyState) -> Self {
        StatePrediction::new(s.one_hot())
    }

    pub fn validate(&self, index: usize) -> Result<(), LossError> {
        let p = &self.probabilities;
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(LossError::InvalidPrediction {
                index,
                reason: format!("entries must be finite and non-negative: {p:?}"),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::InvalidPrediction {
                index,
                reason: format!("probabilities sum to {sum}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub dimension: usize,
    pub frequency_base: f64,
    /// Divisors applied to x, y, z, t before encoding.
    pub coordinate_scale: [f64; 4],
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            dimension: 128,
            frequency_base: 1e4,
            // Crop half-widths and the default six-scan, 0.5 s horizon.
            coordinate_scale: [70.0, 70.0, 4.5, 3.0],
        }
    }
}

/// Sine-cosine encoding of an `(x, y, z, t)` point.
///
/// Each axis takes `d/4` consecutive slots laid out as interleaved
/// `(sin, cos)` pairs at frequencies `base^(-2k / (d/4))`.
pub fn positional_encoding(point: [f64; 4], cfg: &EncodingConfig) -> Result<Vec<f64>, LossError> {
    let d = cfg.dimension;
    if d == 0 || !d.is_multiple_of(8) {
        return Err(LossError::BadDimension(d));
    }
    let per_axis = d / 4;
    let mut out = Vec::with_capacity(d);
    for (axis, &coord) in point.iter().enumerate() {
        let x = coord / cfg.coordinate_scale[axis];
        for k in 0..per_axis / 2 {
            let freq = cfg.frequency_base.powf(-((2 * k) as f64) / per_axis as f64);
            let (s, c) = (x * freq).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    Ok(out)
}

fn check_predictions(predictions: &[StatePrediction]) -> Result<(), LossError> {
    for (k, p) in predictions.iter().enumerate() {
        p.validate(k)?;
    }
    Ok(())
}

#[inline]
fn weighted_nll(
    index: usize,
    state: OccupancyState,
    prediction: &StatePrediction,
    weights: &ClassWeights,
) -> Result<f64, LossError> {
    let p = prediction.probabilities[state.index()];
    if !(p > 0.0) {
        return Err(LossError::NonFiniteLoss { index });
    }
    Ok(-weights.get(state) * p.ln())
}

/// Confidence- and class-weighted cross-entropy over overlap points.
pub fn overlap_loss(
    states: &[OccupancyState],
    confidences: &[f64],
    predictions: &[StatePrediction],
    weights: &ClassWeights,
) -> Result<f64, LossError> {
    if states.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if confidences.len() != states.len() || predictions.len() != states.len() {
        return Err(LossError::LengthMismatch(format!(
            "{} states, {} confidences, {} predictions",
            states.len(),
            confidences.len(),
            predictions.len()
        )));
    }
    check_predictions(predictions)?;
    let mut sum = 0.0;
    for (k, ((s, w), p)) in states.iter().zip(confidences).zip(predictions).enumerate() {
        sum += w * weighted_nll(k, *s, p, weights)?;
    }
    Ok(sum / states.len() as f64)
}

/// Class-weighted cross-entropy over reconstruction samples, normalized by
/// `n_points * per_beam`.
pub fn recon_loss(
    states: &[OccupancyState],
    predictions: &[StatePrediction],
    weights: &ClassWeights,
    n_points: usize,
    per_beam: usize,
) -> Result<f64, LossError> {
    let expected = n_points * per_beam;
    if states.len() != expected || predictions.len() != expected {
        return Err(LossError::CountMismatch {
            got: states.len().max(predictions.len()),
            n_points,
            per_beam,
        });
    }
    if expected == 0 {
        return Err(LossError::EmptyBatch);
    }
    check_predictions(predictions)?;
    let mut sum = 0.0;
    for (k, (s, p)) in states.iter().zip(predictions).enumerate() {
        sum += weighted_nll(k, *s, p, weights)?;
    }
    Ok(sum / expected as f64)
}

pub fn total_loss(overlap: f64, recon: f64) -> f64 {
    overlap + recon
}
