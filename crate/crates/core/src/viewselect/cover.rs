use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use fixedbitset::FixedBitSet;

use super::{ViewSelectError, VisibilityMatrix};

/// Largest candidate count accepted by [`exact_cover_bruteforce`].
pub const EXACT_COVER_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedViews {
    /// Chosen candidate indices in selection order.
    pub indices: Vec<usize>,
    /// Newly covered area at the time each view was chosen.
    pub gains: Vec<f64>,
    /// Newly covered face count at the time each view was chosen.
    pub new_faces: Vec<usize>,
    pub covered_faces: FixedBitSet,
    /// Covered area over total mesh area.
    pub coverage_area_fraction: f64,
    /// Non-degenerate faces that no candidate sees.
    pub uncoverable_faces: Vec<usize>,
}

impl SelectedViews {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_indices(vis: &VisibilityMatrix, indices: Vec<usize>) -> Self {
        let areas = vis.face_areas();
        let mut covered = FixedBitSet::with_capacity(vis.face_count());
        let mut gains = Vec::with_capacity(indices.len());
        let mut new_faces = Vec::with_capacity(indices.len());
        for &c in &indices {
            let (g, k) = marginal(vis.column(c), &covered, areas);
            gains.push(g);
            new_faces.push(k);
            covered.union_with(vis.column(c));
        }
        let coverable = vis.coverable();
        let total: f64 = areas.iter().sum();
        let covered_area: f64 = covered.ones().map(|f| areas[f]).sum();
        let uncoverable_faces = (0..vis.face_count())
            .filter(|&f| !coverable.contains(f) && areas[f] > 0.0)
            .collect();
        SelectedViews {
            indices,
            gains,
            new_faces,
            covered_faces: covered,
            coverage_area_fraction: if total > 0.0 { covered_area / total } else { 1.0 },
            uncoverable_faces,
        }
    }
}

/// Area and count of faces in `column` not yet in `covered`, summed in face order.
fn marginal(column: &FixedBitSet, covered: &FixedBitSet, areas: &[f64]) -> (f64, usize) {
    let mut gain = 0.0;
    let mut count = 0;
    for f in column.ones() {
        if !covered.contains(f) {
            gain += areas[f];
            count += 1;
        }
    }
    (gain, count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    bound: f64,
    candidate: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(Reverse(self.candidate).cmp(&Reverse(other.candidate)))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy set cover weighted by face area.
///
/// Each round picks the candidate whose newly covered area is largest (lowest index on
/// ties) until every coverable face is covered. Uses lazy evaluation: a stale gain is an
/// upper bound on the current one, so a candidate whose refreshed gain still tops the
/// heap is the true maximum.
pub fn greedy_cover(vis: &VisibilityMatrix) -> Result<SelectedViews, ViewSelectError> {
    if vis.candidate_count() == 0 || vis.face_count() == 0 {
        return Err(ViewSelectError::EmptyMatrix);
    }
    let areas = vis.face_areas();
    let coverable = vis.coverable();
    let target = coverable.count_ones(..);
    let mut covered = FixedBitSet::with_capacity(vis.face_count());
    let mut heap: BinaryHeap<Entry> = (0..vis.candidate_count())
        .map(|c| Entry {
            bound: marginal(vis.column(c), &covered, areas).0,
            candidate: c,
        })
        .filter(|e| e.bound > 0.0)
        .collect();
    let mut indices = Vec::new();
    let mut done = 0;
    while done < target {
        let Some(top) = heap.pop() else { break };
        let (gain, count) = marginal(vis.column(top.candidate), &covered, areas);
        if gain <= 0.0 {
            continue;
        }
        let fresh = Entry {
            bound: gain,
            candidate: top.candidate,
        };
        if heap.peek().is_some_and(|next| *next > fresh) {
            heap.push(fresh);
            continue;
        }
        indices.push(top.candidate);
        covered.union_with(vis.column(top.candidate));
        done += count;
    }
    Ok(SelectedViews::from_indices(vis, indices))
}

/// Minimum-cardinality cover of all coverable faces by exhaustive enumeration.
/// Among minimum covers the lexicographically smallest index set is returned.
pub fn exact_cover_bruteforce(vis: &VisibilityMatrix) -> Result<SelectedViews, ViewSelectError> {
    let k = vis.candidate_count();
    if k > EXACT_COVER_LIMIT {
        return Err(ViewSelectError::TooLarge {
            candidates: k,
            limit: EXACT_COVER_LIMIT,
        });
    }
    if k == 0 || vis.face_count() == 0 {
        return Err(ViewSelectError::EmptyMatrix);
    }
    let coverable = vis.coverable();
    let blocks = coverable.as_slice().len();
    let target = coverable.as_slice();
    for size in 0..=k {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let mut acc = vec![0; blocks];
            for &c in &combo {
                for (a, b) in acc.iter_mut().zip(vis.column(c).as_slice()) {
                    *a |= *b;
                }
            }
            if acc == target {
                return Ok(SelectedViews::from_indices(vis, combo));
            }
            if !next_combination(&mut combo, k) {
                break;
            }
        }
    }
    unreachable!("the full candidate set covers every coverable face")
}

/// Advances to the next `combo.len()`-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let r = combo.len();
    let Some(i) = (0..r).rev().find(|&i| combo[i] < n - r + i) else {
        return false;
    };
    combo[i] += 1;
    for j in i + 1..r {
        combo[j] = combo[j - 1] + 1;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(faces: usize, cands: usize, density: f64, seed: u64) -> VisibilityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas = (0..faces).map(|_| rng.random_range(0.1..1.0)).collect();
        let rows: Vec<Vec<bool>> = (0..faces)
            .map(|_| (0..cands).map(|_| rng.random_bool(density)).collect())
            .collect();
        VisibilityMatrix::from_rows(areas, &rows).unwrap()
    }

    /// Straightforward greedy without lazy evaluation.
    fn naive_greedy(vis: &VisibilityMatrix) -> Vec<usize> {
        let mut covered = FixedBitSet::with_capacity(vis.face_count());
        let target = vis.coverable();
        let mut picks = Vec::new();
        while covered != target {
            let mut best = (0.0, usize::MAX);
            for c in 0..vis.candidate_count() {
                let g = marginal(vis.column(c), &covered, vis.face_areas()).0;
                if g > best.0 {
                    best = (g, c);
                }
            }
            picks.push(best.1);
            covered.union_with(vis.column(best.1));
        }
        picks
    }

    #[test]
    fn single_dominating_candidate() {
        let vis = VisibilityMatrix::from_rows(
            vec![1.0; 3],
            &[vec![false, true, true], vec![true, true, false], vec![false, true, false]],
        )
        .unwrap();
        let g = greedy_cover(&vis).unwrap();
        assert_eq!(g.indices, vec![1]);
        assert_eq!(g.coverage_area_fraction, 1.0);
        assert_eq!(exact_cover_bruteforce(&vis).unwrap().indices, vec![1]);
    }

    #[test]
    fn identity_needs_every_candidate() {
        let rows: Vec<Vec<bool>> = (0..3).map(|f| (0..3).map(|c| c == f).collect()).collect();
        let vis = VisibilityMatrix::from_rows(vec![1.0, 2.0, 3.0], &rows).unwrap();
        assert_eq!(exact_cover_bruteforce(&vis).unwrap().len(), 3);
        // largest area first
        assert_eq!(greedy_cover(&vis).unwrap().indices, vec![2, 1, 0]);
    }

    #[test]
    fn identical_columns_pick_lower_index() {
        let vis = VisibilityMatrix::from_rows(vec![1.0, 1.0], &[vec![true, true], vec![true, true]]).unwrap();
        assert_eq!(greedy_cover(&vis).unwrap().indices, vec![0]);
    }

    #[test]
    fn an_extra_candidate_can_make_greedy_pick_more_views() {
        // faces 0..6; A = {0,1,2}, B = {3,4,5}, C = {0,1,3,4}
        let a = [true, true, true, false, false, false];
        let b = [false, false, false, true, true, true];
        let c = [true, true, false, true, true, false];
        let rows = |cols: &[&[bool; 6]]| -> Vec<Vec<bool>> { (0..6).map(|f| cols.iter().map(|col| col[f]).collect()).collect() };
        let two = VisibilityMatrix::from_rows(vec![1.0; 6], &rows(&[&a, &b])).unwrap();
        let three = VisibilityMatrix::from_rows(vec![1.0; 6], &rows(&[&a, &b, &c])).unwrap();
        assert_eq!(greedy_cover(&two).unwrap().indices, vec![0, 1]);
        assert_eq!(greedy_cover(&three).unwrap().indices, vec![2, 0, 1]);
    }

    #[test]
    fn uncoverable_faces_are_reported() {
        let vis = VisibilityMatrix::from_rows(vec![1.0, 1.0, 0.0], &[vec![true], vec![false], vec![false]]).unwrap();
        let g = greedy_cover(&vis).unwrap();
        assert_eq!(g.indices, vec![0]);
        // the zero-area face is not counted as uncoverable
        assert_eq!(g.uncoverable_faces, vec![1]);
        assert!((g.coverage_area_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_rejects_large_inputs() {
        let vis = random_instance(4, 21, 0.5, 0);
        assert!(matches!(exact_cover_bruteforce(&vis), Err(ViewSelectError::TooLarge { .. })));
    }

    #[test]
    fn lazy_matches_naive_greedy() {
        for seed in 0..200 {
            let vis = random_instance(40, 30, 0.15, seed);
            let lazy = greedy_cover(&vis).unwrap();
            assert_eq!(lazy.indices, naive_greedy(&vis), "seed {seed}");
            assert_eq!(lazy.covered_faces, vis.coverable());
            assert!(lazy.gains.iter().all(|&g| g > 0.0));
        }
    }

    #[test]
    fn tetrahedron_instances_within_bound() {
        let bound = (1.0 + 4f64.ln()).ceil() as usize;
        for seed in 0..20 {
            let vis = random_instance(4, 6, 0.4, 1000 + seed);
            let g = greedy_cover(&vis).unwrap();
            let e = exact_cover_bruteforce(&vis).unwrap();
            assert!(g.len() >= e.len());
            assert!(g.len() <= e.len() * bound, "seed {seed}");
            assert_eq!(g.covered_faces, e.covered_faces);
        }
    }

    #[test]
    fn greedy_never_beats_exact() {
        for seed in 0..100 {
            let vis = random_instance(8, 12, 0.25, 77 + seed);
            let g = greedy_cover(&vis).unwrap();
            let e = exact_cover_bruteforce(&vis).unwrap();
            assert!(g.len() >= e.len(), "seed {seed}");
        }
    }

    #[test]
    fn extra_columns_never_reduce_coverage() {
        for seed in 0..50 {
            let vis = random_instance(12, 8, 0.2, 500 + seed);
            let base = greedy_cover(&vis).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut extra = FixedBitSet::with_capacity(12);
            for f in 0..12 {
                extra.set(f, rng.random_bool(0.3));
            }
            let grown = greedy_cover(&vis.with_columns([extra]).unwrap()).unwrap();
            assert!(grown.covered_faces.is_superset(&base.covered_faces));
            // a column dominated by an existing one never changes the selection
            let mut dominated = vis.column(base.indices[0]).clone();
            if let Some(f) = dominated.ones().next() {
                dominated.set(f, false);
            }
            let same = greedy_cover(&vis.with_columns([dominated]).unwrap()).unwrap();
            assert_eq!(same.indices, base.indices);
        }
    }

    #[test]
    fn combinations_enumerate_in_order() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }
}
