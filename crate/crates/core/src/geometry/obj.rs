//! Minimal Wavefront OBJ reader/writer for UV-mapped triangle meshes.

use std::fmt::Write as _;
use std::path::Path;

use super::{GeometryError, MeshWarning, TriangleMesh, Vec2, Vec3};

#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub warnings: Vec<MeshWarning>,
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<LoadedMesh, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_obj(&text)
}

fn parse_floats<const N: usize>(
    parts: &[&str],
    line: usize,
    min: usize,
) -> Result<[f64; N], GeometryError> {
    if parts.len() < min {
        return Err(GeometryError::Parse {
            line,
            message: format!("expected at least {min} values"),
        });
    }
    let mut out = [0.0; N];
    for (slot, s) in out.iter_mut().zip(parts) {
        *slot = s.parse().map_err(|_| GeometryError::Parse {
            line,
            message: format!("bad number {s:?}"),
        })?;
    }
    Ok(out)
}

/// Resolves a 1-based (or negative, relative) OBJ index.
fn resolve_index(raw: &str, count: usize, line: usize) -> Result<usize, GeometryError> {
    let idx: i64 = raw.parse().map_err(|_| GeometryError::Parse {
        line,
        message: format!("bad index {raw:?}"),
    })?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        count as i64 + idx
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(GeometryError::Parse {
            line,
            message: format!("index {idx} out of range (have {count})"),
        });
    }
    Ok(resolved as usize)
}

pub fn parse_obj(text: &str) -> Result<LoadedMesh, GeometryError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let [x, y, z] = parse_floats::<3>(&rest, line, 3)?;
                positions.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(&rest, line, 2)?;
                texcoords.push(Vec2::new(u, v));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(GeometryError::Parse {
                        line,
                        message: "face needs at least 3 corners".into(),
                    });
                }
                let mut corners = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut fields = corner.split('/');
                    let v = resolve_index(fields.next().unwrap_or(""), positions.len(), line)?;
                    let vt = match fields.next() {
                        Some(s) if !s.is_empty() => resolve_index(s, texcoords.len(), line)?,
                        _ => return Err(GeometryError::MissingUvs { line }),
                    };
                    corners.push((v as u32, texcoords[vt]));
                }
                // fan triangulation
                for k in 1..corners.len() - 1 {
                    let (a, b, c) = (corners[0], corners[k], corners[k + 1]);
                    triangles.push([a.0, b.0, c.0]);
                    corner_uvs.push([a.1, b.1, c.1]);
                }
            }
            // normals, groups, materials and smoothing are irrelevant here
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(GeometryError::InvalidMesh("no faces".into()));
    }
    let mesh = TriangleMesh::new(positions, triangles, corner_uvs)?;
    let warnings = mesh.warnings();
    for w in &warnings {
        log::warn!("mesh: {w:?}");
    }
    Ok(LoadedMesh { mesh, warnings })
}

/// Writes the mesh as OBJ plus an MTL file whose diffuse map is `texture_file`.
/// Each triangle corner gets its own `vt` record.
pub fn write_obj_with_material(
    mesh: &TriangleMesh,
    obj_path: &Path,
    texture_file: &str,
) -> std::io::Result<()> {
    let stem = obj_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let mtl_name = format!("{stem}.mtl");
    let mut obj = String::new();
    let _ = writeln!(obj, "mtllib {mtl_name}");
    for v in mesh.vertices() {
        let _ = writeln!(obj, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
    }
    for uvs in mesh.corner_uvs() {
        for uv in uvs {
            let _ = writeln!(obj, "vt {:.9} {:.9}", uv.x, uv.y);
        }
    }
    let _ = writeln!(obj, "usemtl textured");
    for (f, t) in mesh.triangles().iter().enumerate() {
        let base = 3 * f + 1;
        let _ = writeln!(
            obj,
            "f {}/{} {}/{} {}/{}",
            t[0] + 1,
            base,
            t[1] + 1,
            base + 1,
            t[2] + 1,
            base + 2
        );
    }
    let mtl = format!(
        "newmtl textured\nKa 1.000 1.000 1.000\nKd 1.000 1.000 1.000\nillum 1\nmap_Kd {texture_file}\n"
    );
    std::fs::write(obj_path, obj)?;
    std::fs::write(obj_path.with_file_name(mtl_name), mtl)
}
