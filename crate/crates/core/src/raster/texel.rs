use log::warn;
use rayon::prelude::*;

use super::RasterError;
use crate::geometry::{TriangleMesh, Vec2, Vec3};

pub const NO_FACE: u32 = u32::MAX;

/// For every texel: the face that owns it and the surface point it stands for.
///
/// A face owns the texels whose centres lie inside its UV triangle; centres shared by
/// several triangles go to the lowest face id. The surface point is the texel centre
/// mapped through the face's UV parameterization.
#[derive(Debug, Clone)]
pub struct TexelSurfaceTable {
    resolution: u32,
    owner: Vec<u32>,
    points: Vec<[f32; 3]>,
    face_normals: Vec<Vec3>,
    offsets: Vec<u32>,
    face_texels: Vec<u32>,
    /// Texels whose centre lies strictly inside more than one UV triangle.
    pub overlap_conflicts: usize,
}

#[derive(Debug, Clone, Copy)]
struct Claim {
    texel: u32,
    strict: bool,
    point: [f32; 3],
}

impl TexelSurfaceTable {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }

    pub fn owner(&self, texel: usize) -> Option<usize> {
        let o = self.owner[texel];
        (o != NO_FACE).then_some(o as usize)
    }

    pub fn owners(&self) -> &[u32] {
        &self.owner
    }

    pub fn point(&self, texel: usize) -> Vec3 {
        let p = self.points[texel];
        Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn normal(&self, texel: usize) -> Option<Vec3> {
        self.owner(texel).map(|f| self.face_normals[f])
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_normals[face]
    }

    pub fn face_count(&self) -> usize {
        self.face_normals.len()
    }

    /// Texels owned by `face`, in increasing index order.
    pub fn texels_of(&self, face: usize) -> &[u32] {
        &self.face_texels[self.offsets[face] as usize..self.offsets[face + 1] as usize]
    }

    pub fn owned_count(&self) -> usize {
        self.face_texels.len()
    }
}

/// Rasterizes every UV triangle into a `resolution × resolution` texel grid.
pub fn build_texel_table(mesh: &TriangleMesh, resolution: u32) -> Result<TexelSurfaceTable, RasterError> {
    if resolution == 0 {
        return Err(RasterError::InvalidResolution("texture resolution must be positive".into()));
    }
    let r = resolution;
    let faces = mesh.face_count();
    let claims: Vec<Vec<Claim>> = (0..faces)
        .into_par_iter()
        .map(|f| face_claims(mesh, f, r))
        .collect();

    let n = (r as usize).pow(2);
    let mut owner = vec![NO_FACE; n];
    let mut strict = vec![false; n];
    let mut points = vec![[0.0f32; 3]; n];
    let mut conflicts = 0usize;
    for (f, list) in claims.iter().enumerate() {
        for c in list {
            let t = c.texel as usize;
            if owner[t] == NO_FACE {
                owner[t] = f as u32;
                strict[t] = c.strict;
                points[t] = c.point;
            } else if c.strict && strict[t] {
                conflicts += 1;
            }
        }
    }
    if conflicts > 0 {
        warn!("{conflicts} texels lie inside more than one UV triangle; lowest face id kept");
    }

    let mut counts = vec![0u32; faces + 1];
    for &o in &owner {
        if o != NO_FACE {
            counts[o as usize + 1] += 1;
        }
    }
    for f in 0..faces {
        counts[f + 1] += counts[f];
    }
    let offsets = counts.clone();
    let mut cursor = counts;
    let mut face_texels = vec![0u32; offsets[faces] as usize];
    for (t, &o) in owner.iter().enumerate() {
        if o != NO_FACE {
            let slot = &mut cursor[o as usize];
            face_texels[*slot as usize] = t as u32;
            *slot += 1;
        }
    }
    Ok(TexelSurfaceTable {
        resolution: r,
        owner,
        points,
        face_normals: (0..faces).map(|f| mesh.face_normal(f)).collect(),
        offsets,
        face_texels,
        overlap_conflicts: conflicts,
    })
}

fn face_claims(mesh: &TriangleMesh, face: usize, r: u32) -> Vec<Claim> {
    let rf = r as f64;
    // texel-grid coordinates: texel (x, y) spans [x, x+1] × [y, y+1]
    let uv = mesh.corner_uvs()[face];
    let tri = uv.map(|p| Vec2::new(p.x * rf, (1.0 - p.y) * rf));
    let area2 = cross(&(tri[1] - tri[0]), &(tri[2] - tri[0]));
    if area2.abs() < 1e-12 {
        return Vec::new();
    }
    let pts = mesh.face_points(face);
    let to_surface = |q: &Vec2| -> [f32; 3] {
        let b = barycentric(&tri, area2, q);
        let p = pts[0] * b[0] + pts[1] * b[1] + pts[2] * b[2];
        [p.x as f32, p.y as f32, p.z as f32]
    };
    let lo = tri.iter().fold(Vec2::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = tri.iter().fold(Vec2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let x0 = (lo.x.floor().max(0.0) as u32).min(r - 1);
    let x1 = (hi.x.ceil().max(1.0) as u32).min(r) - 1;
    let y0 = (lo.y.floor().max(0.0) as u32).min(r - 1);
    let y1 = (hi.y.ceil().max(1.0) as u32).min(r) - 1;
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let centre = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let b = barycentric(&tri, area2, &centre);
            let texel = y * r + x;
            if b.iter().all(|&l| l >= 0.0) {
                out.push(Claim {
                    texel,
                    strict: b.iter().all(|&l| l > 1e-9),
                    point: to_surface(&centre),
                });
            }
        }
    }
    out
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn barycentric(tri: &[Vec2; 3], area2: f64, q: &Vec2) -> [f64; 3] {
    let l0 = cross(&(tri[1] - *q), &(tri[2] - *q)) / area2;
    let l1 = cross(&(tri[2] - *q), &(tri[0] - *q)) / area2;
    [l0, l1, 1.0 - l0 - l1]
}
