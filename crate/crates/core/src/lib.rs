//! Texture optimization for UV-mapped triangle meshes.
//!
//! The crate is organised along the stages of the optimizer:
//!
//! * [`geometry`]: mesh loading, normalization and camera poses.
//! * [`viewselect`]: candidate viewpoints, ray-cast visibility and the greedy set cover.
//! * [`raster`]: forward rendering of a UV texture and projection of images back onto it.
//! * [`schedule`]: noise schedules, DDIM stepping and the region-dependent noise injection.
//! * [`denoise`]: the pluggable denoiser boundary (oracle, procedural, remote HTTP).
//! * [`pipeline`]: initialization and the multi-resolution refinement loop.

pub mod denoise;
pub mod geometry;
pub mod imagebuf;
pub mod pipeline;
pub mod raster;
pub mod schedule;
pub mod viewselect;

pub use geometry::{Camera, TriangleMesh};
pub use imagebuf::{ColorImage, DepthImage};
pub use raster::{FrameBuffer, UvTexture};
pub use schedule::{NoiseSchedule, StepPlan};
