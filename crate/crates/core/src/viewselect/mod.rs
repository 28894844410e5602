//! Viewpoint selection: candidate sampling, visibility and set cover.

pub mod bvh;
mod cover;
mod sampling;
mod visibility;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cover::{exact_cover_bruteforce, greedy_cover, SelectedViews, EXACT_COVER_LIMIT};
pub use sampling::{sample_candidates, CandidateSet};
pub use visibility::{
    compute_visibility, compute_visibility_from_points, VisibilityMatrix, VisibilityResult,
    VisibilityWarning, TIE_EPSILON,
};

use crate::geometry::TriangleMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewSelectError {
    #[error("invalid candidate parameters: {0}")]
    InvalidCandidates(String),
    #[error("visibility matrix is empty")]
    EmptyMatrix,
    #[error("exact cover supports at most {limit} candidates, got {candidates}")]
    TooLarge { candidates: usize, limit: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSelectConfig {
    pub candidates: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub max_angle_deg: f64,
    pub seed: u64,
}

impl Default for ViewSelectConfig {
    fn default() -> Self {
        ViewSelectConfig {
            candidates: 8192,
            radius_min: 1.0,
            radius_max: 1.4,
            max_angle_deg: 45.0,
            seed: 0,
        }
    }
}

impl ViewSelectConfig {
    pub fn validate(&self) -> Result<(), ViewSelectError> {
        if self.candidates == 0 {
            return Err(ViewSelectError::InvalidCandidates("candidates must be at least 1".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max.is_finite()) {
            return Err(ViewSelectError::InvalidCandidates(format!(
                "need 0 < radius_min <= radius_max, got {}..{}",
                self.radius_min, self.radius_max
            )));
        }
        if !(self.max_angle_deg > 0.0 && self.max_angle_deg <= 90.0) {
            return Err(ViewSelectError::InvalidCandidates(format!(
                "max_angle_deg must lie in (0, 90], got {}",
                self.max_angle_deg
            )));
        }
        Ok(())
    }
}

/// Output of the full selection pass.
#[derive(Debug, Clone)]
pub struct ViewSelection {
    pub candidates: CandidateSet,
    pub visibility: VisibilityMatrix,
    pub selected: SelectedViews,
    pub warnings: Vec<VisibilityWarning>,
    pub visibility_ms: f64,
    pub cover_ms: f64,
}

/// Samples candidates, computes visibility and runs the greedy cover.
pub fn select_views(mesh: &TriangleMesh, cfg: &ViewSelectConfig) -> Result<ViewSelection, ViewSelectError> {
    cfg.validate()?;
    let candidates = sample_candidates(cfg.candidates, cfg.radius_min, cfg.radius_max, cfg.seed)?;
    let start = Instant::now();
    let vis = compute_visibility(mesh, &candidates, cfg.max_angle_deg)?;
    let visibility_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let selected = greedy_cover(&vis.matrix)?;
    let cover_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ViewSelection {
        candidates,
        visibility: vis.matrix,
        selected,
        warnings: vis.warnings,
        visibility_ms,
        cover_ms,
    })
}
