use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ViewSelectError;
use crate::geometry::Camera;

/// Candidate viewpoints on a spherical shell around the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub cameras: Vec<Camera>,
    pub seed: u64,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// `count` directions on a Fibonacci lattice with radii drawn uniformly from
/// `[radius_min, radius_max]`. Deterministic for a given `(count, seed)`.
pub fn sample_candidates(
    count: usize,
    radius_min: f64,
    radius_max: f64,
    seed: u64,
) -> Result<CandidateSet, ViewSelectError> {
    if count == 0 {
        return Err(ViewSelectError::InvalidCandidates(
            "candidate count must be at least 1".into(),
        ));
    }
    if !(radius_min > 0.0 && radius_min <= radius_max && radius_max.is_finite()) {
        return Err(ViewSelectError::InvalidCandidates(format!(
            "need 0 < radius_min <= radius_max, got {radius_min}..{radius_max}"
        )));
    }
    let golden_deg = 180.0 * (3.0 - 5f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let polar = z.clamp(-1.0, 1.0).acos().to_degrees();
            let azimuth = (i as f64 * golden_deg).rem_euclid(360.0);
            let radius = if radius_min == radius_max {
                radius_min
            } else {
                rng.random_range(radius_min..=radius_max)
            };
            Camera::new(azimuth, polar, radius)
        })
        .collect();
    Ok(CandidateSet {
        cameras,
        seed,
        radius_min,
        radius_max,
    })
}
