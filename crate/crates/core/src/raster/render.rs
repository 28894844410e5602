use rayon::prelude::*;

use super::texel::NO_FACE;
use super::{TexelSurfaceTable, UvTexture};
use crate::geometry::{Camera, TriangleMesh, Vec2, Vec3, FAR_PLANE, NEAR_PLANE};
use crate::imagebuf::{ColorImage, DepthImage};

const BAND_ROWS: usize = 16;

/// Result of rendering a mesh from one camera.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    size: u32,
    /// Texture resolution the colours were looked up in (0 for geometry-only renders).
    texture_resolution: u32,
    pub color: ColorImage,
    /// Positive view-axis distance; `+inf` on background.
    depth: Vec<f32>,
    face_id: Vec<u32>,
    uv: Vec<[f32; 2]>,
    /// Texel each pixel was shaded from; `NO_FACE` on background and in geometry-only renders.
    texel: Vec<u32>,
}

impl FrameBuffer {
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn texture_resolution(&self) -> u32 {
        self.texture_resolution
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.size + x) as usize
    }

    pub fn depths(&self) -> &[f32] {
        &self.depth
    }

    pub fn face_ids(&self) -> &[u32] {
        &self.face_id
    }

    pub fn uvs(&self) -> &[[f32; 2]] {
        &self.uv
    }

    pub fn texels(&self) -> &[u32] {
        &self.texel
    }

    #[inline]
    pub fn texel(&self, pixel: usize) -> Option<usize> {
        let t = self.texel[pixel];
        (t != NO_FACE).then_some(t as usize)
    }

    #[inline]
    pub fn face(&self, pixel: usize) -> Option<usize> {
        let f = self.face_id[pixel];
        (f != NO_FACE).then_some(f as usize)
    }

    #[inline]
    pub fn covered(&self, pixel: usize) -> bool {
        self.face_id[pixel] != NO_FACE
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.face_id.iter().map(|&f| f != NO_FACE).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != NO_FACE).count()
    }

    /// Normalized depth image: `(far - z) / (far - near)` on foreground, 0 on background.
    pub fn depth_image(&self) -> DepthImage {
        let data = self
            .depth
            .iter()
            .map(|&z| {
                if z.is_finite() {
                    normalized_depth(z as f64) as f32
                } else {
                    0.0
                }
            })
            .collect();
        DepthImage::from_values(self.size, self.size, data)
    }

    /// Sorted, deduplicated ids of faces with at least one pixel.
    pub fn visible_faces(&self) -> Vec<usize> {
        let mut faces: Vec<usize> = self.face_id.iter().filter(|&&f| f != NO_FACE).map(|&f| f as usize).collect();
        faces.sort_unstable();
        faces.dedup();
        faces
    }
}

/// Maps a view depth into `[0,1]` with 1 at the near plane and 0 at the far plane.
pub fn normalized_depth(z: f64) -> f64 {
    ((FAR_PLANE - z) / (FAR_PLANE - NEAR_PLANE)).clamp(0.0, 1.0)
}

/// Screen-space triangle ready for scan conversion.
#[derive(Debug, Clone, Copy)]
struct Setup {
    face: u32,
    p: [Vec2; 3],
    inv_z: [f64; 3],
    uv: [Vec2; 3],
    area: f64,
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

/// Renders the mesh with nearest-texel texture lookup.
pub fn rasterize(mesh: &TriangleMesh, texture: &UvTexture, camera: &Camera) -> FrameBuffer {
    let mut fb = rasterize_geometry(mesh, camera);
    fb.texel = fb
        .face_id
        .iter()
        .zip(&fb.uv)
        .map(|(&f, uv)| if f == NO_FACE { NO_FACE } else { texture.nearest_index(uv[0], uv[1]) as u32 })
        .collect();
    shade(&mut fb, texture);
    fb
}

/// Like [`rasterize`], but each pixel looks up the nearest texel owned by its own face.
///
/// Pixels near a UV seam would otherwise show a texel that belongs to a neighbouring
/// chart (or to no face at all) and that projection never writes from this surface.
pub fn rasterize_with_table(
    mesh: &TriangleMesh,
    texture: &UvTexture,
    table: &TexelSurfaceTable,
    camera: &Camera,
) -> FrameBuffer {
    assert_eq!(table.resolution(), texture.resolution(), "texel table and texture resolutions differ");
    let mut fb = rasterize_geometry(mesh, camera);
    fb.texel = fb
        .face_id
        .par_iter()
        .zip(&fb.uv)
        .map(|(&f, uv)| if f == NO_FACE { NO_FACE } else { owned_texel(table, f, uv) })
        .collect();
    shade(&mut fb, texture);
    fb
}

fn shade(fb: &mut FrameBuffer, texture: &UvTexture) {
    fb.texture_resolution = texture.resolution();
    let rgb = texture.rgb();
    for (px, &t) in fb.color.pixels_mut().iter_mut().zip(&fb.texel) {
        if t != NO_FACE {
            *px = rgb[t as usize];
        }
    }
}

/// Nearest texel to `uv` among those owned by `face`, searched within two texels of the
/// plain nearest texel; falls back to the plain nearest texel.
fn owned_texel(table: &TexelSurfaceTable, face: u32, uv: &[f32; 2]) -> u32 {
    let r = table.resolution() as i64;
    let gx = uv[0] as f64 * r as f64;
    let gy = (1.0 - uv[1] as f64) * r as f64;
    let cx = (gx.floor() as i64).clamp(0, r - 1);
    let cy = (gy.floor() as i64).clamp(0, r - 1);
    let nearest = (cy * r + cx) as u32;
    let owners = table.owners();
    if owners[nearest as usize] == face {
        return nearest;
    }
    let mut best: Option<(f64, u32)> = None;
    for y in (cy - 2).max(0)..=(cy + 2).min(r - 1) {
        for x in (cx - 2).max(0)..=(cx + 2).min(r - 1) {
            let t = (y * r + x) as u32;
            if owners[t as usize] != face {
                continue;
            }
            let d = (x as f64 + 0.5 - gx).powi(2) + (y as f64 + 0.5 - gy).powi(2);
            if best.is_none_or(|(bd, bt)| d < bd || (d == bd && t < bt)) {
                best = Some((d, t));
            }
        }
    }
    best.map_or(nearest, |(_, t)| t)
}

/// Normalized depth render of the mesh (see [`FrameBuffer::depth_image`]).
pub fn render_depth(mesh: &TriangleMesh, camera: &Camera) -> DepthImage {
    rasterize_geometry(mesh, camera).depth_image()
}

/// Depth, face id and UV buffers without colour.
///
/// Back faces (in world space) are culled and triangles are clipped against the near
/// plane. The depth test is strict `<`; equal depths resolve to the lower face id, which
/// makes the result independent of submission order.
pub fn rasterize_geometry(mesh: &TriangleMesh, camera: &Camera) -> FrameBuffer {
    let size = camera.image_size as usize;
    let m = camera.matrices();
    let view: Vec<Vec3> = mesh.vertices().iter().map(|v| m.to_view(v)).collect();
    let mut setups = Vec::new();
    for (f, tri) in mesh.triangles().iter().enumerate() {
        let basis = mesh.face_basis(f);
        if basis.degenerate || basis.normal.dot(&(m.eye - basis.centroid)) <= 0.0 {
            continue;
        }
        let corners: [(Vec3, Vec2); 3] = std::array::from_fn(|k| (view[tri[k] as usize], mesh.corner_uvs()[f][k]));
        for clipped in clip_near(&corners) {
            if let Some(s) = setup(f as u32, &clipped, &m, size) {
                setups.push(s);
            }
        }
    }

    let n = size * size;
    let mut depth = vec![f64::INFINITY; n];
    let mut face_id = vec![NO_FACE; n];
    let mut uv = vec![[0.0f32; 2]; n];
    depth
        .par_chunks_mut(BAND_ROWS * size)
        .zip(face_id.par_chunks_mut(BAND_ROWS * size))
        .zip(uv.par_chunks_mut(BAND_ROWS * size))
        .enumerate()
        .for_each(|(band, ((depth, face_id), uv))| {
            let row0 = band * BAND_ROWS;
            let row1 = row0 + depth.len() / size;
            for s in setups.iter().filter(|s| s.y1 >= row0 && s.y0 < row1) {
                scan(s, size, row0, row1, depth, face_id, uv);
            }
        });

    FrameBuffer {
        size: size as u32,
        texture_resolution: 0,
        color: ColorImage::new(size as u32, size as u32),
        depth: depth.iter().map(|&z| z as f32).collect(),
        face_id,
        uv,
        texel: vec![NO_FACE; n],
    }
}

/// Clips a view-space triangle against the near plane and fans the result.
fn clip_near(corners: &[(Vec3, Vec2); 3]) -> Vec<[(Vec3, Vec2); 3]> {
    let inside = |c: &(Vec3, Vec2)| -c.0.z >= NEAR_PLANE;
    let count = corners.iter().filter(|c| inside(c)).count();
    if count == 3 {
        return vec![*corners];
    }
    if count == 0 {
        return Vec::new();
    }
    let mut poly = Vec::with_capacity(4);
    for i in 0..3 {
        let a = corners[i];
        let b = corners[(i + 1) % 3];
        if inside(&a) {
            poly.push(a);
        }
        if inside(&a) != inside(&b) {
            // interpolate from the inside endpoint so shared edges clip identically
            let (i0, o0) = if inside(&a) { (a, b) } else { (b, a) };
            let t = (-NEAR_PLANE - i0.0.z) / (o0.0.z - i0.0.z);
            poly.push((i0.0 + (o0.0 - i0.0) * t, i0.1 + (o0.1 - i0.1) * t));
        }
    }
    (1..poly.len() - 1).map(|k| [poly[0], poly[k], poly[k + 1]]).collect()
}

fn setup(face: u32, tri: &[(Vec3, Vec2); 3], m: &crate::geometry::CameraMatrices, size: usize) -> Option<Setup> {
    let mut p = [Vec2::zeros(); 3];
    let mut inv_z = [0.0; 3];
    for k in 0..3 {
        let (x, y) = m.view_to_pixel(&tri[k].0);
        p[k] = Vec2::new(x, y);
        inv_z[k] = 1.0 / -tri[k].0.z;
    }
    let mut uv = [tri[0].1, tri[1].1, tri[2].1];
    let mut area = edge(&p[0], &p[1], &p[2]);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
        inv_z.swap(1, 2);
        uv.swap(1, 2);
        area = -area;
    }
    let lo = p[0].inf(&p[1]).inf(&p[2]);
    let hi = p[0].sup(&p[1]).sup(&p[2]);
    if hi.x < 0.5 || hi.y < 0.5 || lo.x > size as f64 - 0.5 || lo.y > size as f64 - 0.5 {
        return None;
    }
    let clamp = |v: f64| (v.max(0.0) as usize).min(size - 1);
    Some(Setup {
        face,
        p,
        inv_z,
        uv,
        area,
        x0: clamp((lo.x - 0.5).ceil()),
        x1: clamp((hi.x - 0.5).floor()),
        y0: clamp((lo.y - 0.5).ceil()),
        y1: clamp((hi.y - 0.5).floor()),
    })
}

/// Twice the signed area of `(a, b, c)`. Endpoints are put in a canonical order first,
/// so `edge(a, b, c) == -edge(b, a, c)` holds exactly and shared edges leave no cracks.
#[inline]
fn edge(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    let swap = (a.y, a.x) > (b.y, b.x);
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let e = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if swap {
        -e
    } else {
        e
    }
}

/// Tie rule for pixel centres exactly on an edge: each shared edge is owned by
/// exactly one of the two triangles that traverse it in opposite directions.
#[inline]
fn owns_edge(a: &Vec2, b: &Vec2) -> bool {
    let d = b - a;
    d.y > 0.0 || (d.y == 0.0 && d.x < 0.0)
}

fn scan(
    s: &Setup,
    size: usize,
    row0: usize,
    row1: usize,
    depth: &mut [f64],
    face_id: &mut [u32],
    uv: &mut [[f32; 2]],
) {
    let edges = [(1usize, 2usize), (2, 0), (0, 1)];
    let owns: [bool; 3] = edges.map(|(a, b)| owns_edge(&s.p[a], &s.p[b]));
    for y in s.y0.max(row0)..=s.y1.min(row1 - 1) {
        let py = y as f64 + 0.5;
        for x in s.x0..=s.x1 {
            let q = Vec2::new(x as f64 + 0.5, py);
            let mut w = [0.0; 3];
            let mut inside = true;
            for (k, &(a, b)) in edges.iter().enumerate() {
                let e = edge(&s.p[a], &s.p[b], &q);
                if e < 0.0 || (e == 0.0 && !owns[k]) {
                    inside = false;
                    break;
                }
                w[k] = e / s.area;
            }
            if !inside {
                continue;
            }
            let iz = w[0] * s.inv_z[0] + w[1] * s.inv_z[1] + w[2] * s.inv_z[2];
            let z = 1.0 / iz;
            let i = (y - row0) * size + x;
            if z < depth[i] || (z == depth[i] && s.face < face_id[i]) {
                depth[i] = z;
                face_id[i] = s.face;
                let u = (w[0] * s.inv_z[0] * s.uv[0] + w[1] * s.inv_z[1] * s.uv[1] + w[2] * s.inv_z[2] * s.uv[2]) * z;
                uv[i] = [u.x.clamp(0.0, 1.0) as f32, u.y.clamp(0.0, 1.0) as f32];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn quad_at(z: f64, scale: f64) -> TriangleMesh {
        shapes::unit_quad().map_vertices(|v| Vec3::new(v.x * scale, v.y * scale, z))
    }

    #[test]
    fn full_screen_quad_is_uniform() {
        let red = UvTexture::from_fn(4, |_, _| [1.0, 0.0, 0.0]);
        let cam = Camera::new(0.0, 1e-3, 1.0).with_image_size(32);
        let fb = rasterize(&quad_at(0.0, 5.0), &red, &cam);
        assert_eq!(fb.covered_count(), 32 * 32);
        assert!(fb.color.pixels().iter().all(|p| *p == [1.0, 0.0, 0.0]));
        let d0 = fb.depths()[0];
        // the camera is tilted by 1e-3 degrees, which moves corner depths by about 1e-5
        for &d in fb.depths() {
            assert!((d - d0).abs() < 1e-4);
        }
        assert!((d0 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mesh_behind_camera_is_empty() {
        let cam = Camera::new(0.0, 1e-3, 1.0).with_image_size(16);
        let m = quad_at(3.0, 1.0);
        let fb = rasterize(&m, &UvTexture::blank(2), &cam);
        assert_eq!(fb.covered_count(), 0);
        assert!(render_depth(&m, &cam).values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn nearer_triangle_wins() {
        let a = quad_at(0.5, 1.0);
        let b = quad_at(0.0, 2.0);
        let mut verts = b.vertices().to_vec();
        verts.extend_from_slice(a.vertices());
        let mut tris = b.triangles().to_vec();
        tris.extend(a.triangles().iter().map(|t| t.map(|i| i + 4)));
        let mut uvs = b.corner_uvs().to_vec();
        uvs.extend_from_slice(a.corner_uvs());
        let m = TriangleMesh::new(verts, tris, uvs).unwrap();
        let cam = Camera::new(0.0, 1e-3, 2.0).with_image_size(64);
        let fb = rasterize_geometry(&m, &cam);
        let centre = fb.index(32, 32);
        assert!(fb.face(centre).unwrap() >= 2);
        // every pixel where the small quad projects is owned by it
        let only_small = rasterize_geometry(&a, &cam);
        for p in 0..64 * 64 {
            if only_small.covered(p) {
                assert!(fb.face(p).unwrap() >= 2, "pixel {p}");
            }
        }
    }

    #[test]
    fn submission_order_does_not_matter() {
        let m = shapes::icosphere(2);
        let cam = Camera::new(30.0, 70.0, 2.2).with_image_size(96);
        let fb = rasterize_geometry(&m, &cam);
        let perm: Vec<usize> = (0..m.face_count()).rev().collect();
        let shuffled = TriangleMesh::new(
            m.vertices().to_vec(),
            perm.iter().map(|&f| m.triangles()[f]).collect(),
            perm.iter().map(|&f| m.corner_uvs()[f]).collect(),
        )
        .unwrap();
        let fb2 = rasterize_geometry(&shuffled, &cam);
        for p in 0..96 * 96 {
            assert_eq!(fb.face(p), fb2.face(p).map(|f| perm[f]), "pixel {p}");
            assert_eq!(fb.depths()[p].to_bits(), fb2.depths()[p].to_bits());
        }
    }

    #[test]
    fn closed_mesh_has_no_cracks() {
        let m = shapes::icosphere(3);
        let cam = Camera::new(10.0, 80.0, 3.0).with_image_size(128);
        let fb = rasterize_geometry(&m, &cam);
        // the silhouette is convex, so every pixel between two covered pixels on a row is covered
        for y in 0..128 {
            let row: Vec<bool> = (0..128).map(|x| fb.covered(fb.index(x, y))).collect();
            if let (Some(a), Some(b)) = (row.iter().position(|&c| c), row.iter().rposition(|&c| c)) {
                assert!(row[a..=b].iter().all(|&c| c), "gap in row {y}");
            }
        }
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // a large floor quad passing under and behind the camera
        let m = shapes::unit_quad().map_vertices(|v| Vec3::new(v.x * 5.0, v.y * 5.0, -0.5));
        let cam = Camera::new(0.0, 90.0, 1.0).with_image_size(32);
        let fb = rasterize_geometry(&m, &cam);
        assert!(fb.covered_count() > 0);
        assert!(fb.depths().iter().filter(|d| d.is_finite()).all(|&d| d >= NEAR_PLANE as f32));
        // the bottom rows see the floor, the top rows see the sky
        assert!(fb.covered(fb.index(16, 31)));
        assert!(!fb.covered(fb.index(16, 0)));
    }
}
