//! Diffusion scheduling math.
//!
//! Timesteps come in two flavours. *Full* indices run over the training schedule
//! (`1..=train_steps`), *reduced* indices over the short DDIM schedule (`1..=reduced_steps`).
//! Reduced index 0 denotes the clean image, for which ᾱ is taken to be 1.
//!
//! All elementwise operations are generic over the float type so the `f32` production
//! path can be cross-checked against an `f64` reference.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid beta range: need 0 < start <= end < 1, got {start}..{end}")]
    InvalidBetaRange { start: f64, end: f64 },
    #[error("reduced steps {reduced} must be in 1..={train}")]
    InvalidStepCount { reduced: usize, train: usize },
    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("noise can only be added: t_from {from} > t_to {to}")]
    NoiseRemoval { from: usize, to: usize },
    #[error("shape mismatch: {left} vs {right} elements")]
    ShapeMismatch { left: usize, right: usize },
    #[error("sigma {sigma} too large for step {step}")]
    SigmaTooLarge { sigma: f64, step: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reduced_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            train_steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            reduced_steps: 10,
        }
    }
}

/// β/α/ᾱ tables plus the map from reduced DDIM indices to full timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    reduced_to_full: Vec<usize>,
}

impl NoiseSchedule {
    /// Linear β ramp; reduced index `k` maps to full index `round(k * T / reduced)`.
    pub fn build(
        train_steps: usize,
        beta_start: f64,
        beta_end: f64,
        reduced_steps: usize,
    ) -> Result<Self, ScheduleError> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::InvalidBetaRange {
                start: beta_start,
                end: beta_end,
            });
        }
        if train_steps == 0 {
            return Err(ScheduleError::InvalidStepCount {
                reduced: reduced_steps,
                train: train_steps,
            });
        }
        let betas = (0..train_steps)
            .map(|i| {
                if train_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (train_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, reduced_steps)
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self, ScheduleError> {
        Self::build(cfg.train_steps, cfg.beta_start, cfg.beta_end, cfg.reduced_steps)
    }

    pub fn from_betas(betas: Vec<f64>, reduced_steps: usize) -> Result<Self, ScheduleError> {
        let train = betas.len();
        if reduced_steps == 0 || reduced_steps > train {
            return Err(ScheduleError::InvalidStepCount {
                reduced: reduced_steps,
                train,
            });
        }
        if let Some(&b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(ScheduleError::InvalidBetaRange { start: b, end: b });
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(train);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        // round half up; integer arithmetic avoids float ties
        let reduced_to_full: Vec<usize> = (1..=reduced_steps)
            .map(|k| (2 * k * train + reduced_steps) / (2 * reduced_steps))
            .collect();
        debug_assert!(reduced_to_full.windows(2).all(|w| w[0] < w[1]));
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            reduced_to_full,
        })
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn reduced_steps(&self) -> usize {
        self.reduced_to_full.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// ᾱ over full indices `1..=T` (element 0 is ᾱ_1).
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn reduced_to_full(&self) -> &[usize] {
        &self.reduced_to_full
    }

    /// Full timestep of a reduced index; 0 maps to 0.
    pub fn full_index(&self, reduced: usize) -> Result<usize, ScheduleError> {
        match reduced {
            0 => Ok(0),
            k if k <= self.reduced_steps() => Ok(self.reduced_to_full[k - 1]),
            t => Err(ScheduleError::TimestepOutOfRange {
                t,
                max: self.reduced_steps(),
            }),
        }
    }

    pub fn alpha_bar_full(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// ᾱ at a reduced index.
    pub fn alpha_bar(&self, reduced: usize) -> Result<f64, ScheduleError> {
        Ok(self.alpha_bar_full(self.full_index(reduced)?))
    }

    /// ᾱ at every reduced index `0..=reduced_steps`.
    pub fn reduced_alpha_bars(&self) -> Vec<f64> {
        (0..=self.reduced_steps())
            .map(|k| self.alpha_bar(k).expect("in range"))
            .collect()
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<(), ScheduleError> {
    if a.len() != b.len() {
        Err(ScheduleError::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        })
    } else {
        Ok(())
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("representable coefficient")
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` at reduced index `t`.
pub fn forward_diffuse<T: Float>(
    x0: &[T],
    t: usize,
    eps: &[T],
    sched: &NoiseSchedule,
) -> Result<Vec<T>, ScheduleError> {
    check_len(x0, eps)?;
    let ab = sched.alpha_bar(t)?;
    let (a, b): (T, T) = (cast(ab.sqrt()), cast((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Signal and noise coefficients for re-noising from `t_from` up to `t_to`:
/// `(√(ᾱ_to/ᾱ_from), √(1 − ᾱ_to/ᾱ_from))`.
pub fn adaptive_coefficients(
    t_from: usize,
    t_to: usize,
    sched: &NoiseSchedule,
) -> Result<(f64, f64), ScheduleError> {
    if t_from > t_to {
        return Err(ScheduleError::NoiseRemoval {
            from: t_from,
            to: t_to,
        });
    }
    let ratio = sched.alpha_bar(t_to)? / sched.alpha_bar(t_from)?;
    debug_assert!((0.0..=1.0).contains(&ratio));
    Ok((ratio.sqrt(), (1.0 - ratio).max(0.0).sqrt()))
}

/// Moves an image believed to sit at noise level `t_from` to level `t_to`.
///
/// With `t_from = t1` this is the overlap-region scheduler, with `t_from = t2` the
/// non-overlap one. Equal endpoints return `z` unchanged, bit for bit.
pub fn adaptive_noise<T: Float>(
    z: &[T],
    t_from: usize,
    t_to: usize,
    eps: &[T],
    sched: &NoiseSchedule,
) -> Result<Vec<T>, ScheduleError> {
    check_len(z, eps)?;
    let (a, b) = adaptive_coefficients(t_from, t_to, sched)?;
    if t_from == t_to {
        return Ok(z.to_vec());
    }
    let (a, b): (T, T) = (cast(a), cast(b));
    Ok(z.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One DDIM update between two explicit ᾱ values.
///
/// `x_prev = √ᾱ_prev·(x − √(1−ᾱ)·ε̂)/√ᾱ + √(1−ᾱ_prev−σ²)·ε̂ + σ·noise`
pub fn ddim_update<T: Float>(
    x: &[T],
    eps_pred: &[T],
    alpha_bar: f64,
    alpha_bar_prev: f64,
    sigma: f64,
    noise: Option<&[T]>,
) -> Vec<T> {
    let x0_scale: T = cast(1.0 / alpha_bar.sqrt());
    let eps_in: T = cast((1.0 - alpha_bar).sqrt());
    let prev_scale: T = cast(alpha_bar_prev.sqrt());
    let dir: T = cast((1.0 - alpha_bar_prev - sigma * sigma).max(0.0).sqrt());
    let s: T = cast(sigma);
    x.iter()
        .zip(eps_pred)
        .enumerate()
        .map(|(k, (&xi, &e))| {
            let x0 = (xi - eps_in * e) * x0_scale;
            let mut out = prev_scale * x0 + dir * e;
            if let Some(n) = noise {
                out = out + s * n[k];
            }
            out
        })
        .collect()
}

/// DDIM step from reduced index `i` to `i − 1`.
pub fn ddim_step<T: Float>(
    x_i: &[T],
    eps_pred: &[T],
    i: usize,
    sigma: f64,
    noise: Option<&[T]>,
    sched: &NoiseSchedule,
) -> Result<Vec<T>, ScheduleError> {
    check_len(x_i, eps_pred)?;
    if let Some(n) = noise {
        check_len(x_i, n)?;
    }
    if i == 0 || i > sched.reduced_steps() {
        return Err(ScheduleError::TimestepOutOfRange {
            t: i,
            max: sched.reduced_steps(),
        });
    }
    let ab = sched.alpha_bar(i)?;
    let ab_prev = sched.alpha_bar(i - 1)?;
    if sigma < 0.0 || sigma * sigma > 1.0 - ab_prev {
        return Err(ScheduleError::SigmaTooLarge { sigma, step: i });
    }
    if sigma > 0.0 && noise.is_none() {
        return Err(ScheduleError::ShapeMismatch {
            left: x_i.len(),
            right: 0,
        });
    }
    Ok(ddim_update(x_i, eps_pred, ab, ab_prev, sigma, noise))
}

/// Per-step starting noise level: `max(ceil − slope·n, floor)` rounded half up.
pub fn step_timestep(n: usize, slope: f64, floor: usize, ceil: usize) -> usize {
    let raw = (ceil as f64 - slope * n as f64).max(floor as f64);
    let rounded = (raw + 0.5).floor();
    (rounded.max(floor as f64) as usize).clamp(floor, ceil)
}

/// Texture resolutions: `r_1 = base`, `r_{k+1} = ⌊factor · r_k⌋`.
pub fn resolution_plan(base: u32, factor: f64, steps: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(steps);
    let mut r = base;
    for _ in 0..steps {
        out.push(r);
        r = (factor * r as f64).floor() as u32;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Number of recursive refinement steps.
    #[serde(rename = "N")]
    pub steps: usize,
    pub base_resolution: u32,
    pub upsample_factor: f64,
    pub slope: f64,
    pub t1: usize,
    pub t_floor: usize,
    pub t_ceil: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            steps: 5,
            base_resolution: 307,
            upsample_factor: 1.5,
            slope: 2.5,
            t1: 2,
            t_floor: 5,
            t_ceil: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    /// 1-based step index.
    pub n: usize,
    pub resolution: u32,
    pub t_n: usize,
    pub t1: usize,
    pub t2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub entries: Vec<StepEntry>,
    pub slope: f64,
    pub upsample_factor: f64,
}

impl StepPlan {
    pub fn build(cfg: &PlanConfig, sched: &NoiseSchedule) -> Result<Self, ScheduleError> {
        let bad = |m: String| Err(ScheduleError::InvalidPlan(m));
        if cfg.steps == 0 {
            return bad("N must be at least 1".into());
        }
        if cfg.base_resolution == 0 || !(cfg.upsample_factor > 1.0) {
            return bad(format!(
                "need base >= 1 and factor > 1, got {} and {}",
                cfg.base_resolution, cfg.upsample_factor
            ));
        }
        if !(cfg.slope >= 0.0) || !cfg.slope.is_finite() {
            return bad(format!("slope must be >= 0, got {}", cfg.slope));
        }
        if cfg.t_floor < 1 || cfg.t_floor > cfg.t_ceil || cfg.t_ceil > sched.reduced_steps() {
            return bad(format!(
                "need 1 <= floor <= ceil <= {}, got {}..{}",
                sched.reduced_steps(),
                cfg.t_floor,
                cfg.t_ceil
            ));
        }
        if cfg.t1 < 1 || cfg.t1 >= cfg.t_floor {
            return bad(format!("t1 must be in 1..{}, got {}", cfg.t_floor, cfg.t1));
        }
        let resolutions = resolution_plan(cfg.base_resolution, cfg.upsample_factor, cfg.steps);
        if resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("resolutions not strictly increasing: {resolutions:?}"));
        }
        let entries: Vec<StepEntry> = resolutions
            .iter()
            .enumerate()
            .map(|(k, &resolution)| {
                let n = k + 1;
                let t_n = step_timestep(n, cfg.slope, cfg.t_floor, cfg.t_ceil);
                // t2 collapses onto t1 only when t_n <= t1 + 1
                let t2 = (t_n - 1).max(cfg.t1);
                StepEntry {
                    n,
                    resolution,
                    t_n,
                    t1: cfg.t1,
                    t2,
                }
            })
            .collect();
        for e in &entries {
            assert!(e.t1 <= e.t2 && e.t2 <= e.t_n);
            if e.t_n > e.t1 + 1 {
                assert!(e.t1 < e.t2 && e.t2 < e.t_n);
            }
        }
        assert!(entries.windows(2).all(|w| w[1].t_n <= w[0].t_n));
        Ok(StepPlan {
            entries,
            slope: cfg.slope,
            upsample_factor: cfg.upsample_factor,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for the 1-based step `n`.
    pub fn entry(&self, n: usize) -> &StepEntry {
        &self.entries[n - 1]
    }

    pub fn resolutions(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.resolution).collect()
    }
}
