use fixedbitset::FixedBitSet;
use log::warn;
use rayon::prelude::*;

use super::bvh::{Bvh, Ray};
use super::{CandidateSet, ViewSelectError};
use crate::geometry::{TriangleMesh, Vec3};

/// Distance slack when deciding whether a face is the first one hit.
pub const TIE_EPSILON: f64 = 1e-6;

const CLUSTER_LEAF: usize = 8;

/// Face-by-candidate coverage relation, stored column-wise (one bitset per candidate).
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMatrix {
    columns: Vec<FixedBitSet>,
    face_areas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VisibilityWarning {
    /// The candidate sits inside the closed mesh; its column was left empty.
    CameraInsideMesh { candidate: usize },
}

#[derive(Debug, Clone)]
pub struct VisibilityResult {
    pub matrix: VisibilityMatrix,
    pub warnings: Vec<VisibilityWarning>,
}

impl VisibilityMatrix {
    pub fn new(face_areas: Vec<f64>, columns: Vec<FixedBitSet>) -> Result<Self, ViewSelectError> {
        if let Some(c) = columns.iter().position(|c| c.len() != face_areas.len()) {
            return Err(ViewSelectError::DimensionMismatch(format!(
                "column {c} has {} rows, expected {}",
                columns[c].len(),
                face_areas.len()
            )));
        }
        if face_areas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(ViewSelectError::DimensionMismatch(
                "face areas must be finite and nonnegative".into(),
            ));
        }
        Ok(VisibilityMatrix { columns, face_areas })
    }

    /// Builds a matrix from `rows[face][candidate]`.
    pub fn from_rows(face_areas: Vec<f64>, rows: &[Vec<bool>]) -> Result<Self, ViewSelectError> {
        if rows.len() != face_areas.len() {
            return Err(ViewSelectError::DimensionMismatch(format!(
                "{} rows for {} faces",
                rows.len(),
                face_areas.len()
            )));
        }
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(ViewSelectError::DimensionMismatch("ragged rows".into()));
        }
        let columns = (0..k)
            .map(|c| {
                let mut col = FixedBitSet::with_capacity(rows.len());
                for (f, row) in rows.iter().enumerate() {
                    col.set(f, row[c]);
                }
                col
            })
            .collect();
        Self::new(face_areas, columns)
    }

    pub fn face_count(&self) -> usize {
        self.face_areas.len()
    }

    pub fn candidate_count(&self) -> usize {
        self.columns.len()
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn get(&self, face: usize, candidate: usize) -> bool {
        self.columns[candidate].contains(face)
    }

    pub fn column(&self, candidate: usize) -> &FixedBitSet {
        &self.columns[candidate]
    }

    pub fn columns(&self) -> &[FixedBitSet] {
        &self.columns
    }

    /// Faces seen by at least one candidate.
    pub fn coverable(&self) -> FixedBitSet {
        let mut all = FixedBitSet::with_capacity(self.face_count());
        for c in &self.columns {
            all.union_with(c);
        }
        all
    }

    /// Number of true entries in the whole matrix.
    pub fn count_ones(&self) -> usize {
        self.columns.iter().map(|c| c.count_ones(..)).sum()
    }

    /// A copy with extra columns appended.
    pub fn with_columns(&self, extra: impl IntoIterator<Item = FixedBitSet>) -> Result<Self, ViewSelectError> {
        let mut columns = self.columns.clone();
        columns.extend(extra);
        Self::new(self.face_areas.clone(), columns)
    }
}

/// Bounding sphere of face centroids plus a cone bounding their normals.
#[derive(Debug, Clone)]
struct Cluster {
    center: Vec3,
    radius: f64,
    axis: Vec3,
    /// Half-angle of the normal cone in radians; `PI` when unbounded.
    spread: f64,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Hierarchy over non-degenerate faces used to skip whole groups whose normals
/// face away from a camera.
struct ClusterTree {
    nodes: Vec<Cluster>,
    order: Vec<u32>,
}

impl ClusterTree {
    fn build(centroids: &[Vec3], normals: &[Vec3], faces: Vec<u32>) -> Self {
        let mut tree = ClusterTree {
            nodes: Vec::new(),
            order: faces,
        };
        if !tree.order.is_empty() {
            tree.split(centroids, normals, 0, tree.order.len());
        }
        tree
    }

    fn split(&mut self, centroids: &[Vec3], normals: &[Vec3], start: usize, end: usize) -> usize {
        let slice = &mut self.order[start..end];
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        let mut sum_n = Vec3::zeros();
        for &f in slice.iter() {
            lo = lo.inf(&centroids[f as usize]);
            hi = hi.sup(&centroids[f as usize]);
            sum_n += normals[f as usize];
        }
        let center = (lo + hi) * 0.5;
        let radius = slice
            .iter()
            .map(|&f| (centroids[f as usize] - center).norm())
            .fold(0.0, f64::max);
        let (axis, spread) = if sum_n.norm() > 1e-9 {
            let axis = sum_n.normalize();
            let spread = slice
                .iter()
                .map(|&f| normals[f as usize].dot(&axis).clamp(-1.0, 1.0).acos())
                .fold(0.0, f64::max);
            (axis, spread)
        } else {
            (Vec3::z(), std::f64::consts::PI)
        };
        let id = self.nodes.len();
        self.nodes.push(Cluster {
            center,
            radius,
            axis,
            spread,
            start,
            end,
            children: None,
        });
        if end - start > CLUSTER_LEAF {
            // Split on the longest axis of the combined position/normal extent so that
            // groups are compact in both, which keeps normal cones narrow.
            let extent = hi - lo;
            let axis_pos = extent.imax();
            let (mut nlo, mut nhi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
            for &f in slice.iter() {
                nlo = nlo.inf(&normals[f as usize]);
                nhi = nhi.sup(&normals[f as usize]);
            }
            let next = nhi - nlo;
            let use_normal = next.max() * 0.5 > extent.max();
            let key = |f: u32| -> f64 {
                if use_normal {
                    normals[f as usize][next.imax()]
                } else {
                    centroids[f as usize][axis_pos]
                }
            };
            let mid = slice.len() / 2;
            slice.select_nth_unstable_by(mid, |&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            let left = self.split(centroids, normals, start, start + mid);
            let right = self.split(centroids, normals, start + mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    /// Calls `visit` for every face whose cluster cannot be ruled out for `eye`.
    fn for_candidates(&self, eye: &Vec3, max_angle: f64, mut visit: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let d = eye - node.center;
            let dist = d.norm();
            if dist > node.radius && node.spread < std::f64::consts::PI {
                let view_spread = (node.radius / dist).asin();
                let between = (node.axis.dot(&d) / dist).clamp(-1.0, 1.0).acos();
                // Lower bound on the angle between any face normal and the direction
                // from any centroid in the cluster to the eye.
                if between - node.spread - view_spread >= max_angle + 1e-9 {
                    continue;
                }
            }
            match node.children {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => {
                    for &f in &self.order[node.start..node.end] {
                        visit(f as usize);
                    }
                }
            }
        }
    }
}

/// Visibility from arbitrary eye positions. A face is visible from an eye when the
/// angle between its normal and the centroid-to-eye direction is strictly below
/// `max_angle_deg` and no other face is hit first on the eye-to-centroid segment.
pub fn compute_visibility_from_points(
    mesh: &TriangleMesh,
    eyes: &[Vec3],
    max_angle_deg: f64,
) -> Result<VisibilityResult, ViewSelectError> {
    if !(max_angle_deg > 0.0 && max_angle_deg <= 90.0) {
        return Err(ViewSelectError::InvalidCandidates(format!(
            "max angle must lie in (0, 90], got {max_angle_deg}"
        )));
    }
    let n = mesh.face_count();
    let bases: Vec<_> = (0..n).map(|f| mesh.face_basis(f)).collect();
    let centroids: Vec<Vec3> = bases.iter().map(|b| b.centroid).collect();
    let normals: Vec<Vec3> = bases.iter().map(|b| b.normal).collect();
    let live: Vec<u32> = (0..n as u32).filter(|&f| !bases[f as usize].degenerate).collect();
    let clusters = ClusterTree::build(&centroids, &normals, live);
    let bvh = Bvh::build(mesh);
    let closed = mesh.is_closed();
    let max_angle = max_angle_deg.to_radians();
    let cos_sq = max_angle.cos().powi(2);

    let per_eye: Vec<(FixedBitSet, bool)> = eyes
        .par_iter()
        .map(|eye| {
            let mut col = FixedBitSet::with_capacity(n);
            if closed && inside_closed(&bvh, eye) {
                return (col, true);
            }
            clusters.for_candidates(eye, max_angle, |f| {
                let d = eye - centroids[f];
                let along = normals[f].dot(&d);
                let len_sq = d.norm_squared();
                if along <= 0.0 || along * along <= cos_sq * len_sq {
                    return;
                }
                let dist = len_sq.sqrt();
                let ray = Ray::new(*eye, -d / dist);
                if !bvh.occluded(&ray, dist - TIE_EPSILON, Some(f)) {
                    col.insert(f);
                }
            });
            (col, false)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut columns = Vec::with_capacity(eyes.len());
    for (c, (col, inside)) in per_eye.into_iter().enumerate() {
        if inside {
            warn!("candidate {c} lies inside the mesh; skipped");
            warnings.push(VisibilityWarning::CameraInsideMesh { candidate: c });
        }
        columns.push(col);
    }
    let areas = bases.iter().map(|b| b.area).collect();
    Ok(VisibilityResult {
        matrix: VisibilityMatrix::new(areas, columns)?,
        warnings,
    })
}

/// Visibility matrix for a candidate set.
pub fn compute_visibility(
    mesh: &TriangleMesh,
    candidates: &CandidateSet,
    max_angle_deg: f64,
) -> Result<VisibilityResult, ViewSelectError> {
    let eyes: Vec<Vec3> = candidates.cameras.iter().map(|c| c.position()).collect();
    compute_visibility_from_points(mesh, &eyes, max_angle_deg)
}

/// Parity test with three skewed rays; the majority vote guards against rays that
/// graze an edge or vertex.
fn inside_closed(bvh: &Bvh, p: &Vec3) -> bool {
    if !bvh.bounds().contains(p) {
        return false;
    }
    let dirs = [
        Vec3::new(0.5773, 0.5774, 0.5775),
        Vec3::new(-0.3141, 0.8123, -0.4913),
        Vec3::new(0.7071, -0.2236, -0.6708),
    ];
    let odd = dirs
        .iter()
        .filter(|d| bvh.count_hits(&Ray::new(*p, d.normalize())) % 2 == 1)
        .count();
    odd >= 2
}
