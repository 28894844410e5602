use std::path::Path;

use super::RasterError;
use crate::geometry::Vec2;
use crate::imagebuf::{ColorImage, ImageIoError};

/// Square RGB texture with per-texel bookkeeping.
///
/// Texel `(x, y)` covers `u ∈ [x/R, (x+1)/R]` and `v ∈ [1-(y+1)/R, 1-y/R]`, so row 0
/// is the top of the image (largest `v`).
#[derive(Debug, Clone, PartialEq)]
pub struct UvTexture {
    resolution: u32,
    rgb: Vec<[f32; 3]>,
    /// Written during the current optimization step.
    fresh: Vec<bool>,
    /// Written at least once.
    written: Vec<bool>,
    /// Accumulated blend weight of fresh texels (cosine-weighted blending only).
    weight: Vec<f32>,
}

impl UvTexture {
    /// Black texture with nothing written.
    pub fn blank(resolution: u32) -> Self {
        assert!(resolution > 0, "texture resolution must be positive");
        let n = (resolution as usize).pow(2);
        UvTexture {
            resolution,
            rgb: vec![[0.0; 3]; n],
            fresh: vec![false; n],
            written: vec![false; n],
            weight: vec![0.0; n],
        }
    }

    /// Texture whose every texel is written (not fresh) with the given image.
    pub fn from_image(image: &ColorImage) -> Result<Self, RasterError> {
        let (w, h) = image.dims();
        if w != h || w == 0 {
            return Err(RasterError::DimensionMismatch(format!(
                "texture images must be square, got {w}x{h}"
            )));
        }
        let mut t = UvTexture::blank(w);
        for (dst, src) in t.rgb.iter_mut().zip(image.pixels()) {
            *dst = src.map(|c| c.clamp(0.0, 1.0));
        }
        t.written.fill(true);
        Ok(t)
    }

    pub fn from_fn(resolution: u32, f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        UvTexture::from_image(&ColorImage::from_fn(resolution, resolution, f)).expect("square image")
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    pub fn rgb(&self) -> &[[f32; 3]] {
        &self.rgb
    }

    pub fn fresh(&self) -> &[bool] {
        &self.fresh
    }

    pub fn written(&self) -> &[bool] {
        &self.written
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.resolution + x) as usize
    }

    /// Centre of texel `(x, y)` in UV space.
    pub fn texel_center(resolution: u32, x: u32, y: u32) -> Vec2 {
        let r = resolution as f64;
        Vec2::new((x as f64 + 0.5) / r, 1.0 - (y as f64 + 0.5) / r)
    }

    /// Index of the texel containing `uv` (nearest-texel lookup).
    #[inline]
    pub fn nearest_index(&self, u: f32, v: f32) -> usize {
        let r = self.resolution;
        let x = ((u * r as f32).floor().max(0.0) as u32).min(r - 1);
        let y = (((1.0 - v) * r as f32).floor().max(0.0) as u32).min(r - 1);
        self.index(x, y)
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.rgb[self.index(x, y)]
    }

    pub fn written_count(&self) -> usize {
        self.written.iter().filter(|&&w| w).count()
    }

    pub fn fresh_count(&self) -> usize {
        self.fresh.iter().filter(|&&f| f).count()
    }

    /// Starts a new step: nothing is fresh.
    pub fn clear_fresh(&mut self) {
        self.fresh.fill(false);
        self.weight.fill(0.0);
    }

    /// Writes a texel, marking it fresh and written.
    pub fn write_texel(&mut self, index: usize, rgb: [f32; 3]) {
        self.rgb[index] = rgb.map(|c| c.clamp(0.0, 1.0));
        self.fresh[index] = true;
        self.written[index] = true;
    }

    /// Marks a texel fresh (and therefore written) without changing its colour.
    pub fn set_fresh(&mut self, index: usize, fresh: bool) {
        self.fresh[index] = fresh;
        if fresh {
            self.written[index] = true;
        }
    }

    pub(super) fn blend_texel(&mut self, index: usize, rgb: [f32; 3], weight: f32) {
        let old = self.weight[index];
        let rgb = rgb.map(|c| c.clamp(0.0, 1.0));
        if self.fresh[index] && old > 0.0 {
            let total = old + weight;
            let prev = self.rgb[index];
            self.rgb[index] = std::array::from_fn(|c| (prev[c] * old + rgb[c] * weight) / total);
            self.weight[index] = total;
        } else {
            self.rgb[index] = rgb;
            self.weight[index] = weight;
        }
        self.fresh[index] = true;
        self.written[index] = true;
    }

    pub fn to_image(&self) -> ColorImage {
        ColorImage::from_pixels(self.resolution, self.resolution, self.rgb.clone())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        self.to_image().save_png(path)
    }

    /// Mean colour over written texels.
    pub fn written_mean(&self) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for (c, _) in self.rgb.iter().zip(&self.written).filter(|(_, &w)| w) {
            for k in 0..3 {
                sum[k] += c[k] as f64;
            }
            n += 1;
        }
        sum.map(|s| if n > 0 { s / n as f64 } else { 0.0 })
    }

    /// Bilinear resampling to a larger resolution.
    ///
    /// Only written source texels contribute; their weights are renormalized. A target
    /// texel counts as written when any contributing source texel was. Freshness resets.
    pub fn upsample(&self, new_resolution: u32) -> Result<UvTexture, RasterError> {
        if new_resolution <= self.resolution {
            return Err(RasterError::InvalidResolution(format!(
                "upsample target {new_resolution} must exceed {}",
                self.resolution
            )));
        }
        let src = self.resolution as i64;
        let scale = self.resolution as f64 / new_resolution as f64;
        let mut out = UvTexture::blank(new_resolution);
        for y in 0..new_resolution {
            let sy = (y as f64 + 0.5) * scale - 0.5;
            let y0 = sy.floor();
            let ty = sy - y0;
            for x in 0..new_resolution {
                let sx = (x as f64 + 0.5) * scale - 0.5;
                let x0 = sx.floor();
                let tx = sx - x0;
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0;
                for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                    for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                        let w = wx * wy;
                        if w <= 0.0 {
                            continue;
                        }
                        let xi = (x0 as i64 + dx).clamp(0, src - 1) as u32;
                        let yi = (y0 as i64 + dy).clamp(0, src - 1) as u32;
                        let i = self.index(xi, yi);
                        if self.written[i] {
                            for k in 0..3 {
                                acc[k] += w * self.rgb[i][k] as f64;
                            }
                            wsum += w;
                        }
                    }
                }
                if wsum > 0.0 {
                    let i = out.index(x, y);
                    out.rgb[i] = acc.map(|a| (a / wsum) as f32);
                    out.written[i] = true;
                }
            }
        }
        Ok(out)
    }
}
