//! The denoiser boundary.
//!
//! Every denoiser is treated as a clean-image estimator: given a working image it
//! returns an estimate of the noise-free view, from which the noise prediction follows
//! through `ε̂ = (x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)`. The DDIM loop itself always runs locally.

pub mod mock;
mod procedural;
mod remote;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagebuf::{ColorImage, DepthImage};
use crate::raster::{FrameBuffer, Region, RegionMask};
use crate::schedule::{adaptive_coefficients, ddim_update, NoiseSchedule, ScheduleError, StepEntry};

pub use procedural::ProceduralPattern;
pub use remote::{remote_generate, GenerateMode, GenerateRequest, GenerateResponse, RemoteConfig, ENDPOINT_ENV};

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("remote denoiser {endpoint} unavailable after {attempts} attempts ({retries} retries): {message}")]
    RemoteUnavailable {
        endpoint: String,
        attempts: usize,
        retries: usize,
        message: String,
    },
    #[error("remote denoiser {endpoint} sent a bad response after {attempts} attempts ({retries} retries): {message}")]
    RemoteBadResponse {
        endpoint: String,
        attempts: usize,
        retries: usize,
        message: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Conditioning for one view.
#[derive(Debug, Clone)]
pub struct DenoiseContext {
    pub prompt: String,
    pub depth: DepthImage,
    pub view_azimuth: f64,
    pub seed: u64,
    /// Reduced timestep the chain starts from; it always runs down to 1.
    pub t_start: usize,
    /// Surface UV per pixel (`None` on background). Procedural patterns are evaluated
    /// here so they stay fixed to the surface across views.
    pub surface_uv: Option<Vec<Option<[f32; 2]>>>,
}

impl DenoiseContext {
    pub fn new(prompt: impl Into<String>, depth: DepthImage, view_azimuth: f64, seed: u64, t_start: usize) -> Self {
        DenoiseContext {
            prompt: prompt.into(),
            depth,
            view_azimuth,
            seed,
            t_start,
            surface_uv: None,
        }
    }

    pub fn with_surface_uv(mut self, fb: &FrameBuffer) -> Self {
        self.surface_uv = Some(
            fb.uvs()
                .iter()
                .enumerate()
                .map(|(i, uv)| fb.covered(i).then_some(*uv))
                .collect(),
        );
        self
    }

    fn size(&self) -> u32 {
        self.depth.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    /// Predicts the noise that leads back to a known target image.
    Oracle(ColorImage),
    /// Like the oracle, against a seeded pattern laid over the surface UVs.
    Procedural(ProceduralPattern),
    /// Clean-image estimates from an HTTP service.
    Remote(RemoteConfig),
}

/// A clean-image estimate plus the number of remote retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub image: ColorImage,
    pub retries: usize,
}

/// Clean-image estimate of a view. `init` is the working image (absent when generating
/// from depth alone) and `noise_level` the reduced timestep it sits at.
pub fn clean_estimate(
    kind: &DenoiserKind,
    ctx: &DenoiseContext,
    init: Option<&ColorImage>,
    noise_level: usize,
) -> Result<Estimate, DenoiseError> {
    let size = ctx.size();
    if ctx.depth.dims() != (size, size) {
        return Err(DenoiseError::ShapeMismatch(format!(
            "depth must be square, got {}x{}",
            ctx.depth.width(),
            ctx.depth.height()
        )));
    }
    if let Some(img) = init {
        if img.dims() != (size, size) {
            return Err(DenoiseError::ShapeMismatch(format!(
                "image is {}x{}, depth is {size}x{size}",
                img.width(),
                img.height()
            )));
        }
    }
    if let Some(uv) = &ctx.surface_uv {
        if uv.len() != (size as usize).pow(2) {
            return Err(DenoiseError::ShapeMismatch("surface UV map does not match the depth image".into()));
        }
    }
    match kind {
        DenoiserKind::Oracle(target) => {
            if target.dims() != (size, size) {
                return Err(DenoiseError::ShapeMismatch(format!(
                    "oracle target is {}x{}, working images are {size}x{size}",
                    target.width(),
                    target.height()
                )));
            }
            Ok(Estimate {
                image: target.clone(),
                retries: 0,
            })
        }
        DenoiserKind::Procedural(pattern) => Ok(Estimate {
            image: pattern.view_image(size, ctx.surface_uv.as_deref()),
            retries: 0,
        }),
        DenoiserKind::Remote(cfg) => {
            let mode = if init.is_some() { GenerateMode::Refine } else { GenerateMode::Init };
            let req = GenerateRequest::new(&ctx.prompt, mode, &ctx.depth, init, noise_level, ctx.seed)?;
            let (image, retries) = remote_generate(cfg, &req)?;
            Ok(Estimate { image, retries })
        }
    }
}

/// `ε̂ = (x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)`, elementwise in `f64`.
fn noise_from_estimate(x_t: &[f64], x0: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.iter().zip(x0).map(|(&x, &c)| (x - a * c) / b).collect()
}

fn to_f64(img: &ColorImage) -> Vec<f64> {
    img.as_flat().iter().map(|&v| v as f64).collect()
}

/// Noise prediction at reduced timestep `t` (which must be at least 1).
pub fn predict_noise(
    x_t: &ColorImage,
    t: usize,
    ctx: &DenoiseContext,
    kind: &DenoiserKind,
    sched: &NoiseSchedule,
) -> Result<ColorImage, DenoiseError> {
    if t == 0 {
        return Err(ScheduleError::TimestepOutOfRange {
            t,
            max: sched.reduced_steps(),
        }
        .into());
    }
    let alpha_bar = sched.alpha_bar(t)?;
    let est = clean_estimate(kind, ctx, Some(x_t), t)?;
    let eps = noise_from_estimate(&to_f64(x_t), &to_f64(&est.image), alpha_bar);
    let flat: Vec<f32> = eps.iter().map(|&e| e as f32).collect();
    Ok(ColorImage::from_flat(x_t.width(), x_t.height(), &flat))
}

/// Result of refining one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub image: ColorImage,
    pub retries: usize,
}

/// Re-noises `image` region by region up to `entry.t_n` and runs the deterministic DDIM
/// chain back to a clean image.
///
/// Overlap pixels are noised from `t1`, all other covered pixels from `t2`, with one
/// shared noise draw. The denoiser is queried once for a clean-image estimate of the
/// view; every chain step derives its noise prediction from that estimate. Background
/// pixels are returned unchanged, and so is the whole image when nothing is covered.
pub fn denoise_region_aware(
    image: &ColorImage,
    mask: &RegionMask,
    ctx: &DenoiseContext,
    entry: &StepEntry,
    sched: &NoiseSchedule,
    kind: &DenoiserKind,
    rng: &mut impl Rng,
) -> Result<Denoised, DenoiseError> {
    let size = image.width();
    if image.dims() != (mask.size(), mask.size()) {
        return Err(DenoiseError::ShapeMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            image.width(),
            image.height(),
            mask.size(),
            mask.size()
        )));
    }
    if mask.regions().iter().all(|&r| r == Region::Background) {
        return Ok(Denoised {
            image: image.clone(),
            retries: 0,
        });
    }
    let t_n = entry.t_n;
    let overlap = adaptive_coefficients(entry.t1, t_n, sched)?;
    let other = adaptive_coefficients(entry.t2, t_n, sched)?;
    let est = clean_estimate(kind, ctx, Some(image), t_n)?;
    let x0 = to_f64(&est.image);

    let z = to_f64(image);
    let mut x = Vec::with_capacity(z.len());
    for (p, &region) in mask.regions().iter().enumerate() {
        let ((a, b), identity) = if region == Region::Overlap {
            (overlap, entry.t1 == t_n)
        } else {
            (other, entry.t2 == t_n)
        };
        for k in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            let v = z[3 * p + k];
            x.push(if identity { v } else { a * v + b * e });
        }
    }

    for i in (1..=t_n).rev() {
        let ab = sched.alpha_bar(i)?;
        let ab_prev = sched.alpha_bar(i - 1)?;
        let eps = noise_from_estimate(&x, &x0, ab);
        x = ddim_update(&x, &eps, ab, ab_prev, 0.0, None);
    }

    let mut out = image.clone();
    for (p, (px, &region)) in out.pixels_mut().iter_mut().zip(mask.regions()).enumerate() {
        if region != Region::Background {
            *px = std::array::from_fn(|k| x[3 * p + k].clamp(0.0, 1.0) as f32);
        }
    }
    debug_assert_eq!(out.width(), size);
    Ok(Denoised {
        image: out,
        retries: est.retries,
    })
}

/// Appends a view hint to the prompt: ", front" for azimuths in `[0,30] ∪ [330,360)`,
/// ", back" for `(30,150] ∪ [210,330)`, nothing in between.
pub fn prompt_augment(prompt: &str, azimuth: f64) -> String {
    let a = azimuth.rem_euclid(360.0);
    if a <= 30.0 || a >= 330.0 {
        format!("{prompt}, front")
    } else if a <= 150.0 || a >= 210.0 {
        format!("{prompt}, back")
    } else {
        prompt.to_string()
    }
}

/// Serializable choice of denoiser for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserChoice {
    #[default]
    Oracle,
    Procedural,
    Remote,
}

impl std::str::FromStr for DenoiserChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(DenoiserChoice::Oracle),
            "procedural" => Ok(DenoiserChoice::Procedural),
            "remote" => Ok(DenoiserChoice::Remote),
            other => Err(format!("unknown denoiser {other:?} (expected oracle, procedural or remote)")),
        }
    }
}
