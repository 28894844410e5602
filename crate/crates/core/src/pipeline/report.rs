use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::raster::ProjectStats;
use crate::schedule::StepPlan;

/// Run summary written as `report.json`. Wall-clock durations end in `_ms` and
/// timestamps in `_at`; everything else is deterministic for a fixed configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub config: Option<PipelineConfig>,
    /// Phases finished so far, in order.
    pub phases_completed: Vec<String>,
    pub mesh: Option<MeshSummary>,
    pub view_selection: Option<ViewSelectionSummary>,
    pub schedule: Option<ScheduleSummary>,
    pub init: Option<StageLog>,
    pub steps: Vec<StageLog>,
    pub final_resolution: Option<u32>,
    /// Owned texels that received content, as a fraction of all owned texels.
    pub texel_coverage_fraction: Option<f64>,
    /// PSNR of the texture against the oracle ground truth after initialization and after
    /// each step, over owned texels written at that point.
    pub oracle_psnr_db: Vec<f64>,
    pub remote_retries: usize,
    pub error: Option<ErrorSummary>,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub faces: usize,
    pub closed: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSelectionSummary {
    pub candidates: usize,
    pub selected: usize,
    pub selected_indices: Vec<usize>,
    /// Selected indices in processing order.
    pub order: Vec<usize>,
    pub coverage_area_fraction: f64,
    pub uncoverable_faces: usize,
    pub warnings: Vec<String>,
    pub visibility_ms: f64,
    pub cover_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub train_steps: usize,
    pub reduced_to_full: Vec<usize>,
    /// ᾱ at reduced indices 0..=reduced_steps.
    pub reduced_alpha_bars: Vec<f64>,
    pub plan: StepPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewLog {
    pub view: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub prompt: String,
    pub overlap_pixels: usize,
    pub non_overlap_pixels: usize,
    pub uninitialized_pixels: usize,
    pub projection: ProjectStats,
    pub retries: usize,
    pub view_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    /// 0 for initialization, otherwise the 1-based step.
    pub n: usize,
    pub resolution: u32,
    pub t_n: Option<usize>,
    pub t1: Option<usize>,
    pub t2: Option<usize>,
    pub views: Vec<ViewLog>,
    /// Texels written (or refreshed) during this stage.
    pub fresh_texels: usize,
    pub written_texels: usize,
    /// Resolution after the end-of-step upsample, when one happened.
    pub upsampled_to: Option<u32>,
    pub stage_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub phase: String,
    pub kind: String,
    pub message: String,
}
