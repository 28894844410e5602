use std::collections::HashMap;

use thiserror::Error;

use super::{Vec2, Vec3};

/// Tolerance applied when validating UV coordinates read from files.
const UV_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("failed to read mesh file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face on line {line} has no texture coordinates")]
    MissingUvs { line: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh bounds are degenerate (all vertices coincide)")]
    DegenerateBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshWarning {
    /// Zero-area triangle; kept in the mesh but never counted as coverable.
    DegenerateFace { face: usize },
    /// Edges not shared by exactly two triangles. Occlusion tests assume a closed surface.
    NonManifoldEdges { boundary: usize, over_shared: usize },
}

/// Centroid, unit normal and area of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBasis {
    pub centroid: Vec3,
    /// Counter-clockwise normal; the zero vector when `degenerate`.
    pub normal: Vec3,
    pub area: f64,
    pub degenerate: bool,
}

impl FaceBasis {
    pub fn from_points(a: &Vec3, b: &Vec3, c: &Vec3) -> Self {
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        let area = 0.5 * norm;
        let centroid = (a + b + c) / 3.0;
        let degenerate = !(norm > f64::EPSILON * (b - a).norm().max((c - a).norm()).max(1e-300));
        let normal = if degenerate { Vec3::zeros() } else { cross / norm };
        FaceBasis {
            centroid,
            normal,
            area: if degenerate { 0.0 } else { area },
            degenerate,
        }
    }
}

/// An indexed triangle mesh with one UV per triangle corner.
///
/// Immutable after construction: derived per-face normals and areas are computed once.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    corner_uvs: Vec<[Vec2; 3]>,
    bases: Vec<FaceBasis>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        corner_uvs: Vec<[Vec2; 3]>,
    ) -> Result<Self, GeometryError> {
        if triangles.len() != corner_uvs.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "{} triangles but {} UV triples",
                triangles.len(),
                corner_uvs.len()
            )));
        }
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(bad) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {f} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh(format!("non-finite vertex {v:?}")));
        }
        let mut corner_uvs = corner_uvs;
        for (f, uvs) in corner_uvs.iter_mut().enumerate() {
            for uv in uvs.iter_mut() {
                for c in uv.iter_mut() {
                    if !(*c >= -UV_SLACK && *c <= 1.0 + UV_SLACK) {
                        return Err(GeometryError::InvalidMesh(format!(
                            "triangle {f} has UV component {c} outside [0,1]"
                        )));
                    }
                    *c = c.clamp(0.0, 1.0);
                }
            }
        }
        let bases = triangles
            .iter()
            .map(|t| {
                FaceBasis::from_points(
                    &vertices[t[0] as usize],
                    &vertices[t[1] as usize],
                    &vertices[t[2] as usize],
                )
            })
            .collect();
        Ok(TriangleMesh {
            vertices,
            triangles,
            corner_uvs,
            bases,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn corner_uvs(&self) -> &[[Vec2; 3]] {
        &self.corner_uvs
    }

    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn face_basis(&self, face: usize) -> FaceBasis {
        self.bases[face]
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.bases[face].normal
    }

    pub fn face_area(&self, face: usize) -> f64 {
        self.bases[face].area
    }

    pub fn face_areas(&self) -> Vec<f64> {
        self.bases.iter().map(|b| b.area).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.bases.iter().map(|b| b.area).sum()
    }

    /// The three corner positions of a face.
    pub fn face_points(&self, face: usize) -> [Vec3; 3] {
        let t = self.triangles[face];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Uniformly scales and translates the mesh so its bounding box is centred at the
    /// origin and its longest axis spans exactly `[-1, 1]`. UVs are untouched.
    pub fn normalized(&self) -> Result<TriangleMesh, GeometryError> {
        if self.vertices.is_empty() {
            return Err(GeometryError::DegenerateBounds);
        }
        let (lo, hi) = self.bounds();
        let extent = (hi - lo).max();
        if !(extent > 0.0) {
            return Err(GeometryError::DegenerateBounds);
        }
        let center = (lo + hi) * 0.5;
        let scale = 2.0 / extent;
        let vertices = self
            .vertices
            .iter()
            .map(|v| ((v - center) * scale).map(|c| c.clamp(-1.0, 1.0)))
            .collect();
        TriangleMesh::new(vertices, self.triangles.clone(), self.corner_uvs.clone())
    }

    /// Applies `f` to every vertex position, keeping topology and UVs.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        let vertices = self.vertices.iter().map(f).collect();
        TriangleMesh::new(vertices, self.triangles.clone(), self.corner_uvs.clone())
            .expect("vertex map preserves validity")
    }

    pub fn degenerate_faces(&self) -> Vec<usize> {
        (0..self.face_count()).filter(|&f| self.bases[f].degenerate).collect()
    }

    /// Counts edges used by one triangle (boundary) and by more than two (over-shared).
    pub fn edge_manifoldness(&self) -> (usize, usize) {
        let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = uses.values().filter(|&&n| n == 1).count();
        let over = uses.values().filter(|&&n| n > 2).count();
        (boundary, over)
    }

    pub fn is_closed(&self) -> bool {
        self.edge_manifoldness() == (0, 0)
    }

    pub fn warnings(&self) -> Vec<MeshWarning> {
        let mut out: Vec<MeshWarning> = self
            .degenerate_faces()
            .into_iter()
            .map(|face| MeshWarning::DegenerateFace { face })
            .collect();
        let (boundary, over_shared) = self.edge_manifoldness();
        if boundary > 0 || over_shared > 0 {
            out.push(MeshWarning::NonManifoldEdges {
                boundary,
                over_shared,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uv3() -> [Vec2; 3] {
        [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]
    }

    fn single(a: Vec3, b: Vec3, c: Vec3) -> TriangleMesh {
        TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]], vec![uv3()]).unwrap()
    }

    #[test]
    fn face_basis_of_unit_right_triangle() {
        let m = single(Vec3::zeros(), Vec3::x(), Vec3::y());
        let b = m.face_basis(0);
        assert_abs_diff_eq!(b.centroid, Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(b.normal, Vec3::z(), epsilon = 1e-12);
        assert_abs_diff_eq!(b.area, 0.5, epsilon = 1e-12);
        assert!(!b.degenerate);
    }

    #[test]
    fn reversed_winding_flips_normal() {
        let m = single(Vec3::zeros(), Vec3::y(), Vec3::x());
        assert_abs_diff_eq!(m.face_normal(0), -Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn collinear_face_is_degenerate() {
        let m = single(Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0);
        let b = m.face_basis(0);
        assert_eq!(b.area, 0.0);
        assert!(b.degenerate);
        assert_eq!(b.normal, Vec3::zeros());
        assert_eq!(m.warnings()[0], MeshWarning::DegenerateFace { face: 0 });
    }

    #[test]
    fn rejects_out_of_range_index_and_uv() {
        let err = TriangleMesh::new(vec![Vec3::zeros(); 2], vec![[0, 1, 2]], vec![uv3()]);
        assert!(matches!(err, Err(GeometryError::InvalidMesh(_))));
        let mut uvs = uv3();
        uvs[1].x = 1.5;
        let err = TriangleMesh::new(vec![Vec3::zeros(); 3], vec![[0, 1, 2]], vec![uvs]);
        assert!(matches!(err, Err(GeometryError::InvalidMesh(_))));
    }

    #[test]
    fn normalize_cube_from_0_2_to_unit() {
        let cube = crate::geometry::shapes::cube().map_vertices(|v| v + Vec3::repeat(1.0));
        let (lo, hi) = cube.bounds();
        assert_abs_diff_eq!(lo, Vec3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, Vec3::repeat(2.0), epsilon = 1e-12);
        let n = cube.normalized().unwrap();
        let (lo, hi) = n.bounds();
        assert_abs_diff_eq!(lo, Vec3::repeat(-1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, Vec3::repeat(1.0), epsilon = 1e-12);
        assert_eq!(n.corner_uvs(), cube.corner_uvs());
    }

    #[test]
    fn normalize_identity_on_normalized_mesh() {
        let m = crate::geometry::shapes::cube();
        let n = m.normalized().unwrap();
        for (a, b) in m.vertices().iter().zip(n.vertices()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn normalize_rejects_single_point() {
        let m = single(Vec3::repeat(0.3), Vec3::repeat(0.3), Vec3::repeat(0.3));
        assert!(matches!(m.normalized(), Err(GeometryError::DegenerateBounds)));
    }

    #[test]
    fn closed_cube_is_manifold() {
        assert!(crate::geometry::shapes::cube().is_closed());
        assert!(!crate::geometry::shapes::unit_quad().is_closed());
    }
}
