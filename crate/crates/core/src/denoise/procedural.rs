use serde::{Deserialize, Serialize};

use crate::imagebuf::ColorImage;
use crate::raster::UvTexture;

/// Seeded colour cells over UV space with a smooth gradient on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProceduralPattern {
    pub seed: u64,
    /// Cells per UV axis.
    pub cells: u32,
}

impl Default for ProceduralPattern {
    fn default() -> Self {
        ProceduralPattern { seed: 0, cells: 8 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ProceduralPattern {
    pub fn color_at(&self, u: f64, v: f64) -> [f32; 3] {
        let n = self.cells.max(1) as f64;
        let cx = (u.clamp(0.0, 1.0) * n).floor().min(n - 1.0) as u64;
        let cy = (v.clamp(0.0, 1.0) * n).floor().min(n - 1.0) as u64;
        let h = splitmix64(self.seed ^ splitmix64(cy << 32 | cx));
        let gradient = [u, v, 1.0 - 0.5 * (u + v)];
        std::array::from_fn(|k| {
            let cell = ((h >> (16 * k)) & 0xffff) as f64 / 65535.0;
            (0.7 * cell + 0.3 * gradient[k]) as f32
        })
    }

    pub fn texture(&self, resolution: u32) -> UvTexture {
        UvTexture::from_fn(resolution, |x, y| {
            let c = UvTexture::texel_center(resolution, x, y);
            self.color_at(c.x, c.y)
        })
    }

    /// The pattern as seen in a view: evaluated at each pixel's surface UV when known
    /// (black on background), otherwise at the pixel's normalized image position.
    pub fn view_image(&self, size: u32, surface_uv: Option<&[Option<[f32; 2]>]>) -> ColorImage {
        ColorImage::from_fn(size, size, |x, y| match surface_uv {
            Some(uvs) => uvs[(y * size + x) as usize].map_or([0.0; 3], |[u, v]| self.color_at(u as f64, v as f64)),
            None => self.color_at((x as f64 + 0.5) / size as f64, 1.0 - (y as f64 + 0.5) / size as f64),
        })
    }
}
