use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrameBuffer, RasterError, TexelSurfaceTable, UvTexture};
use crate::geometry::{Camera, FAR_PLANE, NEAR_PLANE};
use crate::imagebuf::ColorImage;

/// Per-pixel classification used by region-aware denoising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Background,
    /// Covered pixel whose texel was refined earlier in the current step.
    Overlap,
    /// Covered pixel whose texel holds content from an earlier step only.
    NonOverlap,
    /// Covered pixel whose texel was never written.
    Uninitialized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    size: u32,
    regions: Vec<Region>,
}

impl RegionMask {
    pub fn new(size: u32, regions: Vec<Region>) -> Self {
        assert_eq!(regions.len(), (size as usize).pow(2));
        RegionMask { size, regions }
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn get(&self, pixel: usize) -> Region {
        self.regions[pixel]
    }

    /// `true` exactly on overlap pixels.
    pub fn overlap(&self) -> Vec<bool> {
        self.regions.iter().map(|&r| r == Region::Overlap).collect()
    }

    pub fn count(&self, region: Region) -> usize {
        self.regions.iter().filter(|&&r| r == region).count()
    }
}

/// Classifies each pixel by the state of the texel it was shaded from.
pub fn overlap_mask(fb: &FrameBuffer, texture: &UvTexture) -> Result<RegionMask, RasterError> {
    if fb.texture_resolution() != texture.resolution() {
        return Err(RasterError::ResolutionMismatch {
            expected: texture.resolution(),
            actual: fb.texture_resolution(),
        });
    }
    let regions = (0..fb.face_ids().len())
        .map(|i| {
            let Some(t) = fb.texel(i) else {
                return Region::Background;
            };
            if !texture.written()[t] {
                Region::Uninitialized
            } else if texture.fresh()[t] {
                Region::Overlap
            } else {
                Region::NonOverlap
            }
        })
        .collect();
    Ok(RegionMask::new(fb.size(), regions))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlendPolicy {
    /// The last view to see a texel determines its colour.
    #[default]
    Overwrite,
    /// Views that see a texel within one step are averaged, weighted by the cosine
    /// between the surface normal and the view direction.
    CosineWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectOptions {
    /// Texels seen at this angle from the normal or more are skipped.
    pub max_angle_deg: f64,
    /// Allowed mismatch between texel depth and the depth buffer, in normalized depth units.
    pub depth_epsilon: f64,
    pub blend: BlendPolicy,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            max_angle_deg: 45.0,
            depth_epsilon: 1e-3,
            blend: BlendPolicy::Overwrite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProjectStats {
    pub written: usize,
    pub rejected_angle: usize,
    pub rejected_depth: usize,
    pub outside_frame: usize,
    pub no_sample: usize,
}

impl ProjectStats {
    fn merge(mut self, o: ProjectStats) -> ProjectStats {
        self.written += o.written;
        self.rejected_angle += o.rejected_angle;
        self.rejected_depth += o.rejected_depth;
        self.outside_frame += o.outside_frame;
        self.no_sample += o.no_sample;
        self
    }
}

/// Writes `image` (rendered or generated for `camera`, with geometry `fb`) back into
/// `texture`.
///
/// A texel is updated when its surface point faces the camera within the angle limit
/// and its projected depth agrees with the depth buffer. Its colour is a bilinear
/// sample of `image` over neighbouring pixels that show the same texel (or face).
pub fn project_to_texture(
    image: &ColorImage,
    fb: &FrameBuffer,
    table: &TexelSurfaceTable,
    camera: &Camera,
    texture: &mut UvTexture,
    opts: &ProjectOptions,
) -> Result<ProjectStats, RasterError> {
    if image.dims() != (fb.size(), fb.size()) {
        return Err(RasterError::DimensionMismatch(format!(
            "image is {}x{}, frame buffer is {}x{}",
            image.width(),
            image.height(),
            fb.size(),
            fb.size()
        )));
    }
    if table.resolution() != texture.resolution() {
        return Err(RasterError::ResolutionMismatch {
            expected: texture.resolution(),
            actual: table.resolution(),
        });
    }
    let m = camera.matrices();
    let size = fb.size() as i64;
    let cos_sq = opts.max_angle_deg.to_radians().cos().powi(2);
    let depth_tol = opts.depth_epsilon * (FAR_PLANE - NEAR_PLANE);
    let faces = fb.visible_faces();
    let res = table.resolution();

    let per_face: Vec<(Vec<(u32, [f32; 3], f32)>, ProjectStats)> = faces
        .par_iter()
        .map(|&f| {
            let mut stats = ProjectStats::default();
            let mut updates = Vec::new();
            let normal = table.face_normal(f);
            for &texel in table.texels_of(f) {
                let p = table.point(texel as usize);
                let d = m.eye - p;
                let along = normal.dot(&d);
                let len_sq = d.norm_squared();
                if along <= 0.0 || along * along <= cos_sq * len_sq {
                    stats.rejected_angle += 1;
                    continue;
                }
                let Some(q) = m.project(&p) else {
                    stats.outside_frame += 1;
                    continue;
                };
                let (px, py) = (q.x.floor() as i64, q.y.floor() as i64);
                if px < 0 || py < 0 || px >= size || py >= size {
                    stats.outside_frame += 1;
                    continue;
                }
                let pixel = fb.index(px as u32, py as u32);
                let zb = fb.depths()[pixel] as f64;
                if !zb.is_finite() || (zb - q.depth).abs() > depth_tol {
                    stats.rejected_depth += 1;
                    continue;
                }
                let Some(rgb) = sample(image, fb, res, texel, f as u32, q.x, q.y) else {
                    stats.no_sample += 1;
                    continue;
                };
                let cos = (along / len_sq.sqrt()) as f32;
                updates.push((texel, rgb, cos));
                stats.written += 1;
            }
            (updates, stats)
        })
        .collect();

    let mut total = ProjectStats::default();
    for (updates, stats) in per_face {
        total = total.merge(stats);
        for (texel, rgb, cos) in updates {
            match opts.blend {
                BlendPolicy::Overwrite => texture.write_texel(texel as usize, rgb),
                BlendPolicy::CosineWeighted => texture.blend_texel(texel as usize, rgb, cos),
            }
        }
    }
    Ok(total)
}

/// Pixel radius searched for a pixel displaying the texel being projected.
const TEXEL_REACH: i64 = 2;

/// Colour for `texel` (owned by `face`) whose surface point projects to `(x, y)`.
///
/// In order of preference: a bilinear sample over the 2×2 taps that display the texel
/// itself; the closest pixel within `TEXEL_REACH` that displays it; a bilinear sample
/// over taps showing `face`; the closest pixel of `face` in the 3×3 neighbourhood.
fn sample(image: &ColorImage, fb: &FrameBuffer, res: u32, texel: u32, face: u32, x: f64, y: f64) -> Option<[f32; 3]> {
    let size = fb.size() as i64;
    let ids = fb.face_ids();
    let uvs = fb.uvs();
    let shaded = fb.texture_resolution() == res;
    let shows_texel = |i: usize| {
        if shaded {
            return fb.texels()[i] == texel;
        }
        let [u, v] = uvs[i];
        let tx = ((u * res as f32).floor().max(0.0) as u32).min(res - 1);
        let ty = (((1.0 - v) * res as f32).floor().max(0.0) as u32).min(res - 1);
        ty * res + tx == texel
    };
    let pixel = |xi: i64, yi: i64| -> Option<usize> {
        if xi < 0 || yi < 0 || xi >= size || yi >= size {
            return None;
        }
        let i = fb.index(xi as u32, yi as u32);
        (ids[i] == face).then_some(i)
    };

    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let mut taps: Vec<(usize, f64, bool)> = Vec::with_capacity(4);
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let w = wx * wy;
            if let Some(i) = pixel(x0 + dx, y0 + dy).filter(|_| w > 0.0) {
                taps.push((i, w, shows_texel(i)));
            }
        }
    }
    let blend = |only_texel: bool| -> Option<[f32; 3]> {
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0;
        for &(i, w, same) in &taps {
            if only_texel && !same {
                continue;
            }
            let c = image.pixels()[i];
            for k in 0..3 {
                acc[k] += w * c[k] as f64;
            }
            wsum += w;
        }
        (wsum > 0.0).then(|| acc.map(|a| (a / wsum) as f32))
    };
    let closest = |only_texel: bool, reach: i64| -> Option<[f32; 3]> {
        let (cx, cy) = (x.floor() as i64, y.floor() as i64);
        let mut best: Option<(f64, usize)> = None;
        for yi in cy - reach..=cy + reach {
            for xi in cx - reach..=cx + reach {
                let Some(i) = pixel(xi, yi) else { continue };
                if only_texel && !shows_texel(i) {
                    continue;
                }
                let d = (xi as f64 + 0.5 - x).powi(2) + (yi as f64 + 0.5 - y).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| image.pixels()[i])
    };
    blend(true)
        .or_else(|| closest(true, TEXEL_REACH))
        .or_else(|| blend(false))
        .or_else(|| closest(false, 1))
}
