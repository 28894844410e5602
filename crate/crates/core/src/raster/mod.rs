//! Software rasterization of textured meshes and projection of images back to UV space.

mod project;
mod render;
mod texel;
mod texture;

use thiserror::Error;

pub use project::{overlap_mask, project_to_texture, BlendPolicy, ProjectOptions, ProjectStats, Region, RegionMask};
pub use render::{normalized_depth, rasterize, rasterize_geometry, rasterize_with_table, render_depth, FrameBuffer};
pub use texel::{build_texel_table, TexelSurfaceTable, NO_FACE};
pub use texture::UvTexture;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("texture resolution mismatch: expected {expected}, got {actual}")]
    ResolutionMismatch { expected: u32, actual: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
}
