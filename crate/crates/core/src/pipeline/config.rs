use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::denoise::{DenoiserChoice, ProceduralPattern, RemoteConfig};
use crate::raster::ProjectOptions;
use crate::schedule::{NoiseSchedule, PlanConfig, ScheduleConfig, StepPlan};
use crate::viewselect::ViewSelectConfig;

/// Ground truth for the oracle denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Square PNG used as the ground-truth texture; when absent a checker with a colour
    /// gradient is generated.
    pub texture: Option<PathBuf>,
    /// Checker cells per UV axis for the generated ground truth.
    pub checker_cells: u32,
    /// Resolution of the generated ground truth; 0 means the final plan resolution.
    pub resolution: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            texture: None,
            checker_cells: 8,
            resolution: 0,
        }
    }
}

/// Everything a run needs. Stored as TOML: scalar keys at the top, one table per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// OBJ file with texture coordinates; relative paths resolve against the config file.
    pub mesh: PathBuf,
    pub prompt: String,
    pub seed: u64,
    /// Side length of every rendered working image.
    pub render_size: u32,
    /// Camera distance for the six initialization poses and the preview renders.
    pub init_radius: f64,
    pub denoiser: DenoiserChoice,
    pub pipeline: PlanConfig,
    pub schedule: ScheduleConfig,
    pub viewselect: ViewSelectConfig,
    pub projection: ProjectOptions,
    pub oracle: OracleConfig,
    pub procedural: ProceduralPattern,
    pub remote: RemoteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mesh: PathBuf::new(),
            prompt: String::new(),
            seed: 0,
            render_size: 512,
            init_radius: 2.5,
            denoiser: DenoiserChoice::Oracle,
            pipeline: PlanConfig::default(),
            schedule: ScheduleConfig::default(),
            viewselect: ViewSelectConfig::default(),
            projection: ProjectOptions::default(),
            oracle: OracleConfig::default(),
            procedural: ProceduralPattern::default(),
            remote: RemoteConfig::default(),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

/// Parses the right-hand side of an override as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a parsed TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), PipelineError> {
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| config_error(format!("override {ov:?} is not of the form key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(config_error(format!("override {ov:?} has an empty key")));
        }
        let mut node = &mut *table;
        for k in &keys[..keys.len() - 1] {
            let entry = node
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| config_error(format!("override {ov:?}: {k} is not a section")))?;
        }
        node.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies overrides and validates. This is the only way a
    /// configuration is built from external input.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_error)?;
        apply_overrides(&mut table, overrides)?;
        let cfg: PipelineConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative mesh path is resolved against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if cfg.mesh.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.mesh = dir.join(&cfg.mesh);
            }
        }
        if let Some(tex) = &cfg.oracle.texture {
            if tex.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.oracle.texture = Some(dir.join(tex));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.mesh.as_os_str().is_empty() {
            return Err(config_error("mesh path is required"));
        }
        if !(16..=8192).contains(&self.render_size) {
            return Err(config_error(format!("render_size must lie in 16..=8192, got {}", self.render_size)));
        }
        if !(self.init_radius > 1.0 && self.init_radius.is_finite()) {
            return Err(config_error(format!(
                "init_radius must exceed 1 (the normalized mesh extent), got {}",
                self.init_radius
            )));
        }
        let sched = NoiseSchedule::from_config(&self.schedule).map_err(config_error)?;
        StepPlan::build(&self.pipeline, &sched).map_err(config_error)?;
        self.viewselect.validate().map_err(config_error)?;
        let p = &self.projection;
        if !(p.max_angle_deg > 0.0 && p.max_angle_deg <= 90.0) {
            return Err(config_error(format!(
                "projection.max_angle_deg must lie in (0, 90], got {}",
                p.max_angle_deg
            )));
        }
        if !(p.depth_epsilon > 0.0 && p.depth_epsilon < 1.0) {
            return Err(config_error(format!(
                "projection.depth_epsilon must lie in (0, 1), got {}",
                p.depth_epsilon
            )));
        }
        if self.oracle.checker_cells == 0 {
            return Err(config_error("oracle.checker_cells must be at least 1"));
        }
        if self.procedural.cells == 0 {
            return Err(config_error("procedural.cells must be at least 1"));
        }
        if self.remote.timeout_ms == 0 {
            return Err(config_error("remote.timeout_ms must be positive"));
        }
        if self.denoiser == DenoiserChoice::Remote && self.remote.endpoint.trim().is_empty() {
            return Err(config_error("remote.endpoint is required for the remote denoiser"));
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> NoiseSchedule {
        NoiseSchedule::from_config(&self.schedule).expect("validated config")
    }

    pub fn step_plan(&self) -> StepPlan {
        StepPlan::build(&self.pipeline, &self.noise_schedule()).expect("validated config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mesh = \"ball.obj\"\nprompt = \"a ball\"\n";

    #[test]
    fn defaults_match_the_reference_setup() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.viewselect.candidates, 8192);
        assert_eq!(cfg.pipeline.steps, 5);
        assert_eq!(cfg.pipeline.base_resolution, 307);
        assert_eq!(cfg.pipeline.upsample_factor, 1.5);
        assert_eq!(cfg.pipeline.slope, 2.5);
        assert_eq!(cfg.pipeline.t1, 2);
        assert_eq!(cfg.render_size, 512);
        assert_eq!(cfg.step_plan().resolutions(), vec![307, 460, 690, 1035, 1552]);
    }

    #[test]
    fn round_trips_losslessly() {
        let mut cfg = PipelineConfig::from_toml_str(MINIMAL, &[]).unwrap();
        cfg.seed = 17;
        cfg.denoiser = DenoiserChoice::Procedural;
        cfg.oracle.texture = Some("gt.png".into());
        cfg.viewselect.radius_max = 1.3;
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let ov = vec![
            "pipeline.N=1".to_string(),
            "seed = 9".to_string(),
            "prompt=a red ball".to_string(),
            "remote.endpoint=http://localhost:1/x".to_string(),
        ];
        let cfg = PipelineConfig::from_toml_str(MINIMAL, &ov).unwrap();
        assert_eq!(cfg.pipeline.steps, 1);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.prompt, "a red ball");
        assert_eq!(cfg.remote.endpoint, "http://localhost:1/x");
    }

    #[test]
    fn overrides_are_validated_like_the_file() {
        for bad in ["pipeline.N=0", "viewselect.candidates=0", "pipeline.upsample_factor=1.0", "render_size=3"] {
            let err = PipelineConfig::from_toml_str(MINIMAL, &[bad.to_string()]).unwrap_err();
            assert!(matches!(err, PipelineError::Config(_)), "{bad}");
            let file = format!("{MINIMAL}{}\n", bad.replace("pipeline.", "[pipeline]\n").replace("viewselect.", "[viewselect]\n"));
            assert!(PipelineConfig::from_toml_str(&file, &[]).is_err(), "{file}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_rejected() {
        assert!(PipelineConfig::from_toml_str("mesh = \"a.obj\"\nmesh_path = 1\n", &[]).is_err());
        assert!(PipelineConfig::from_toml_str("mesh = ", &[]).is_err());
        assert!(PipelineConfig::from_toml_str(MINIMAL, &["pipeline".into()]).is_err());
        assert!(PipelineConfig::from_toml_str(MINIMAL, &["seed.x=1".into()]).is_err());
        assert!(PipelineConfig::from_toml_str("prompt = \"x\"\n", &[]).is_err());
    }
}
