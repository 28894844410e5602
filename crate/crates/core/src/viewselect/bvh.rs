//! Bounding volume hierarchy over mesh triangles with watertight ray intersection.

use crate::geometry::{TriangleMesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Slab test; returns the entry distance when the box overlaps `[0, t_max]`.
    #[inline]
    fn hit(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - ray.origin[k]) * ray.inv_dir[k];
            let b = (self.max[k] - ray.origin[k]) * ray.inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0 * inf leaves the bound untouched
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// A ray with the precomputation needed by the watertight triangle test.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    inv_dir: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    shear: [f64; 3],
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        let kz = dir.iamax();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        let shear = [dir[kx] / dir[kz], dir[ky] / dir[kz], 1.0 / dir[kz]];
        Ray {
            origin,
            dir,
            inv_dir: dir.map(|d| 1.0 / d),
            kx,
            ky,
            kz,
            shear,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Watertight ray/triangle test (two-sided). Returns the ray parameter of the hit.
    #[inline]
    pub fn intersect_triangle(&self, tri: &[Vec3; 3]) -> Option<f64> {
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let [sx, sy, sz] = self.shear;
        let a = tri[0] - self.origin;
        let b = tri[1] - self.origin;
        let c = tri[2] - self.origin;
        let ax = a[kx] - sx * a[kz];
        let ay = a[ky] - sy * a[kz];
        let bx = b[kx] - sx * b[kz];
        let by = b[ky] - sy * b[kz];
        let cx = c[kx] - sx * c[kz];
        let cy = c[ky] - sy * c[kz];
        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let t_scaled = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz]);
        let t = t_scaled / det;
        (t > 0.0).then_some(t)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive slot. Interior: index of the left child (right follows it).
    first: u32,
    /// Primitive count for leaves, 0 for interior nodes.
    count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub face: usize,
    pub t: f64,
}

/// Median-split BVH. Triangles are copied in leaf order for cache locality.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    faces: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.face_count();
        let points: Vec<[Vec3; 3]> = (0..n).map(|f| mesh.face_points(f)).collect();
        let centroids: Vec<Vec3> = points.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
        let mut faces: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            nodes.push(Node {
                bounds: Aabb::empty(),
                first: 0,
                count: 0,
            });
            Self::split(&mut nodes, 0, &mut faces, 0, &points, &centroids);
        }
        let tris = faces.iter().map(|&f| points[f as usize]).collect();
        Bvh { nodes, faces, tris }
    }

    fn split(
        nodes: &mut Vec<Node>,
        node: usize,
        faces: &mut [u32],
        offset: usize,
        points: &[[Vec3; 3]],
        centroids: &[Vec3],
    ) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in faces.iter() {
            for p in &points[f as usize] {
                bounds.grow(p);
            }
            cbounds.grow(&centroids[f as usize]);
        }
        let extent = cbounds.max - cbounds.min;
        if faces.len() <= LEAF_SIZE || extent.max() <= 0.0 {
            nodes[node] = Node {
                bounds,
                first: offset as u32,
                count: faces.len() as u32,
            };
            return;
        }
        let axis = extent.imax();
        let mid = faces.len() / 2;
        faces.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = nodes.len();
        nodes.push(Node {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        nodes.push(Node {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        nodes[node] = Node {
            bounds,
            first: left as u32,
            count: 0,
        };
        let (lo, hi) = faces.split_at_mut(mid);
        Self::split(nodes, left, lo, offset, points, centroids);
        Self::split(nodes, left + 1, hi, offset + mid, points, centroids);
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Nearest hit with `t < t_max`. Equal distances resolve to the lower face id.
    pub fn closest_hit(&self, ray: &Ray, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        self.traverse(ray, t_max, |bvh, slot, bound| {
            if let Some(t) = ray.intersect_triangle(&bvh.tris[slot]) {
                let face = bvh.faces[slot] as usize;
                let better = match best {
                    None => t < limit,
                    Some(b) => t < b.t || (t == b.t && face < b.face),
                };
                if better {
                    best = Some(Hit { face, t });
                    limit = t;
                }
            }
            *bound = limit;
            false
        });
        best
    }

    /// Whether any face other than `exclude` is hit with `t < t_max`.
    pub fn occluded(&self, ray: &Ray, t_max: f64, exclude: Option<usize>) -> bool {
        let mut hit = false;
        self.traverse(ray, t_max, |bvh, slot, _| {
            let face = bvh.faces[slot] as usize;
            if Some(face) != exclude {
                if let Some(t) = ray.intersect_triangle(&bvh.tris[slot]) {
                    if t < t_max {
                        hit = true;
                        return true;
                    }
                }
            }
            false
        });
        hit
    }

    /// Number of faces crossed by the ray (all distances).
    pub fn count_hits(&self, ray: &Ray) -> usize {
        let mut n = 0;
        self.traverse(ray, f64::INFINITY, |bvh, slot, _| {
            if ray.intersect_triangle(&bvh.tris[slot]).is_some() {
                n += 1;
            }
            false
        });
        n
    }

    /// Visits primitives of every leaf whose box the ray enters before `bound`.
    /// The visitor may shrink `bound`; returning `true` stops traversal.
    fn traverse(
        &self,
        ray: &Ray,
        initial_bound: f64,
        mut visit: impl FnMut(&Self, usize, &mut f64) -> bool,
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut bound = initial_bound;
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.hit(ray, bound).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for slot in start..start + node.count as usize {
                    if visit(self, slot, &mut bound) {
                        return;
                    }
                }
            } else {
                let l = node.first as usize;
                let tl = self.nodes[l].bounds.hit(ray, bound);
                let tr = self.nodes[l + 1].bounds.hit(ray, bound);
                // push the farther child first so the nearer one is popped next
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (l, l + 1) } else { (l + 1, l) };
                        stack[sp] = far as u32;
                        stack[sp + 1] = near as u32;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = l as u32;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = (l + 1) as u32;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
    }

    #[cfg(test)]
    fn check_structure(&self, face_count: usize) {
        let mut seen = vec![false; face_count];
        for node in &self.nodes {
            if node.count > 0 {
                for slot in node.first..node.first + node.count {
                    let slot = slot as usize;
                    seen[self.faces[slot] as usize] = true;
                    for p in &self.tris[slot] {
                        assert!(node.bounds.contains(p));
                    }
                }
            } else {
                let l = node.first as usize;
                let u = self.nodes[l].bounds.union(&self.nodes[l + 1].bounds);
                assert!(node.bounds.contains(&u.min) && node.bounds.contains(&u.max));
            }
        }
        assert!(seen.iter().all(|&s| s), "every face reachable");
    }
}
