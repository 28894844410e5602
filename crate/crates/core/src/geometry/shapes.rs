//! Procedural fixtures: quad, cube and icosphere, all with valid UV layouts.

use std::collections::HashMap;

use super::{TriangleMesh, Vec2, Vec3};

/// Square in the z=0 plane spanning `[-1,1]²`, facing +Z, UVs covering the unit square.
pub fn unit_quad() -> TriangleMesh {
    let vertices = vec![
        Vec3::new(-1.0, -1.0, 0.0),
        Vec3::new(1.0, -1.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(-1.0, 1.0, 0.0),
    ];
    let uv = [
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 1.0),
        Vec2::new(0.0, 1.0),
    ];
    TriangleMesh::new(
        vertices,
        vec![[0, 1, 2], [0, 2, 3]],
        vec![[uv[0], uv[1], uv[2]], [uv[0], uv[2], uv[3]]],
    )
    .expect("static quad")
}

/// Axis-aligned cube spanning `[-1,1]³` with outward winding and a 3x2 box UV layout.
pub fn cube() -> TriangleMesh {
    let vertices: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            )
        })
        .collect();
    // each side as a CCW (seen from outside) quad of vertex indices
    let sides: [[u32; 4]; 6] = [
        [1, 3, 7, 5], // +X
        [2, 0, 4, 6], // -X
        [3, 2, 6, 7], // +Y
        [0, 1, 5, 4], // -Y
        [4, 5, 7, 6], // +Z
        [2, 3, 1, 0], // -Z
    ];
    let mut triangles = Vec::with_capacity(12);
    let mut corner_uvs = Vec::with_capacity(12);
    let margin = 0.02;
    for (s, quad) in sides.iter().enumerate() {
        let (cx, cy) = ((s % 3) as f64 / 3.0, (s / 3) as f64 / 2.0);
        let (w, h) = (1.0 / 3.0, 1.0 / 2.0);
        let uv = [
            Vec2::new(cx + margin, cy + margin),
            Vec2::new(cx + w - margin, cy + margin),
            Vec2::new(cx + w - margin, cy + h - margin),
            Vec2::new(cx + margin, cy + h - margin),
        ];
        triangles.push([quad[0], quad[1], quad[2]]);
        corner_uvs.push([uv[0], uv[1], uv[2]]);
        triangles.push([quad[0], quad[2], quad[3]]);
        corner_uvs.push([uv[0], uv[2], uv[3]]);
    }
    TriangleMesh::new(vertices, triangles, corner_uvs).expect("static cube")
}

/// Unit-radius icosphere with `20 * 4^subdivisions` faces.
///
/// UVs use a per-face atlas: faces are packed two per grid cell with gutters, so no
/// two UV triangles touch. Texture seams therefore never cross a face.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let corner_uvs = per_face_atlas(faces.len());
    TriangleMesh::new(vertices, faces, corner_uvs).expect("icosphere is valid")
}

/// UV triangles for `count` faces packed two per square cell with gutters.
pub fn per_face_atlas(count: usize) -> Vec<[Vec2; 3]> {
    let cells = count.div_ceil(2).max(1);
    let grid = (cells as f64).sqrt().ceil() as usize;
    let size = 1.0 / grid as f64;
    let (m, d) = (0.09, 0.13);
    (0..count)
        .map(|f| {
            let cell = f / 2;
            let origin = Vec2::new((cell % grid) as f64, (cell / grid) as f64) * size;
            let local = if f % 2 == 0 {
                [(m, m), (1.0 - m - d, m), (m, 1.0 - m - d)]
            } else {
                [(1.0 - m, 1.0 - m), (m + d, 1.0 - m), (1.0 - m, m + d)]
            };
            local.map(|(u, v)| origin + Vec2::new(u, v) * size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_normals_point_outward() {
        let c = cube();
        assert_eq!(c.face_count(), 12);
        for f in 0..12 {
            let b = c.face_basis(f);
            assert!(b.normal.dot(&b.centroid) > 0.0, "face {f}");
            assert!((b.area - 2.0).abs() < 1e-12);
        }
        assert!((c.total_area() - 24.0).abs() < 1e-9);
    }

    #[test]
    fn icosphere_counts_and_orientation() {
        for s in 0..4 {
            let m = icosphere(s);
            assert_eq!(m.face_count(), 20 * 4usize.pow(s));
            assert!(m.is_closed());
            for f in 0..m.face_count() {
                let b = m.face_basis(f);
                assert!(b.normal.dot(&b.centroid) > 0.0);
            }
            for v in m.vertices() {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn atlas_triangles_stay_inside_unit_square() {
        for uvs in per_face_atlas(1280) {
            for uv in uvs {
                assert!(uv.x > 0.0 && uv.x < 1.0 && uv.y > 0.0 && uv.y < 1.0);
            }
            let e1 = uvs[1] - uvs[0];
            let e2 = uvs[2] - uvs[0];
            assert!(e1.x * e2.y - e1.y * e2.x > 0.0, "ccw in uv space");
        }
    }
}
