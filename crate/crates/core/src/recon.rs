//! Occupancy reconstruction samples along the current beams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{self, ModelError, OccupancyState, Scan, SensorConfig};
use crate::par::{self, Execution};
use crate::Vec3;

/// Default split of the 30 samples drawn per beam.
pub const DEFAULT_OCCUPIED_PER_BEAM: u32 = 5;
pub const DEFAULT_FREE_PER_BEAM: u32 = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconSample {
    pub position: Vec3,
    /// Time of the current scan.
    pub time: f64,
    pub state: OccupancyState,
    pub current_point_index: u32,
}

/// Draws `free_per_beam` free samples uniformly in `(0, r_i)` and
/// `occupied_per_beam` samples uniformly over the occupied band behind each
/// current hit. Each beam has its own random stream derived from `seed`, so
/// the result is independent of scheduling.
pub fn sample_recon_points(
    current: &Scan,
    occupied_per_beam: u32,
    free_per_beam: u32,
    sensor: &SensorConfig,
    seed: u64,
) -> Result<Vec<ReconSample>, ModelError> {
    sample_recon_points_with(
        current,
        occupied_per_beam,
        free_per_beam,
        sensor,
        seed,
        Execution::default(),
    )
}

pub fn sample_recon_points_with(
    current: &Scan,
    occupied_per_beam: u32,
    free_per_beam: u32,
    sensor: &SensorConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ReconSample>, ModelError> {
    sensor.validate()?;
    let band = sensor.occupied_band();
    let per_beam = par::map_indices(current.len(), exec, |i| {
        let beam = model::beam_from_point(current, i)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut out = Vec::with_capacity((occupied_per_beam + free_per_beam) as usize);
        let mut push = |range: f64, state| {
            out.push(ReconSample {
                position: beam.origin + beam.direction * range,
                time: current.time,
                state,
                current_point_index: i as u32,
            })
        };
        for _ in 0..occupied_per_beam {
            // Rejection keeps the rare sample that rounds past the band edge
            // out of the unknown region.
            let range = loop {
                let r = beam.range + rng.random::<f64>() * band;
                if model::occupancy_state(sensor, r, beam.range)? == OccupancyState::Occupied {
                    break r;
                }
            };
            push(range, OccupancyState::Occupied);
        }
        for _ in 0..free_per_beam {
            let range = loop {
                let r = rng.random::<f64>() * beam.range;
                if r > 0.0 {
                    break r;
                }
            };
            push(range, OccupancyState::Free);
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(current.len() * (occupied_per_beam + free_per_beam) as usize);
    for beam_samples in per_beam {
        samples.extend(beam_samples?);
    }
    Ok(samples)
}
