//! Exact k-d tree for radius and k-nearest-neighbour queries.
//!
//! Results are identical to a brute-force scan using [`dist_sq`]: radius
//! queries are inclusive (`d <= r`) and k-NN ties are broken by the smaller
//! point index.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

/// Squared Euclidean distance, evaluated in a fixed order so that every
/// caller (including brute-force checks) sees bit-identical values.
#[inline]
pub fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Read-only spatial index over a fixed point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Points in leaf order, so leaf scans read contiguous memory.
    sorted: Vec<[f64; 3]>,
    /// Original index of each entry of `sorted`.
    perm: Vec<u32>,
    nodes: Vec<Node>,
}

/// Traversal stack; the tree depth is logarithmic so this never overflows
/// for any index that fits in memory.
struct Stack {
    items: [u32; 128],
    len: usize,
}

impl Stack {
    #[inline]
    fn new() -> Self {
        Self { items: [0; 128], len: 1 }
    }

    #[inline]
    fn push(&mut self, n: u32) {
        self.items[self.len] = n;
        self.len += 1;
    }

    #[inline]
    fn pop(&mut self) -> Option<u32> {
        (self.len > 0).then(|| {
            self.len -= 1;
            self.items[self.len]
        })
    }
}

/// Output of a k-nearest query, ordered by `(distance, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub indices: Vec<usize>,
    pub distances_sq: Vec<f64>,
    /// Set when fewer than `k` points exist in the index.
    pub short: bool,
}

impl KdTree {
    pub fn new(positions: &[Vec3]) -> Self {
        Self::from_arrays(positions.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn from_arrays(points: Vec<[f64; 3]>) -> Self {
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build(&points, &mut perm, 0, &mut nodes);
        }
        let sorted = perm.iter().map(|&i| points[i as usize]).collect();
        Self {
            points,
            sorted,
            perm,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        Vec3::from(self.points[i])
    }

    /// Indices of all points within distance `r` (inclusive), ascending.
    pub fn radius_search(&self, center: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_visit(center, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(index, dist_sq)` for every point within `r`, in tree order.
    pub fn radius_visit<F: FnMut(usize, f64)>(&self, center: &Vec3, r: f64, mut f: F) {
        if self.nodes.is_empty() || !(r >= 0.0) {
            return;
        }
        let q = [center.x, center.y, center.z];
        let r2 = r * r;
        let mut stack = Stack::new();
        while let Some(n) = stack.pop() {
            match self.nodes[n as usize] {
                Node::Leaf { start, end } => {
                    let (start, end) = (start as usize, end as usize);
                    for (p, &i) in self.sorted[start..end].iter().zip(&self.perm[start..end]) {
                        let d = dist_sq(&q, p);
                        if d <= r2 {
                            f(i as usize, d);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[axis as usize] - value;
                    let bound = diff * diff;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    if bound <= r2 {
                        stack.push(far);
                    }
                    stack.push(near);
                }
            }
        }
    }

    /// Nearest point within `r` (ties by smaller index), without allocating.
    pub fn nearest_within(&self, center: &Vec3, r: f64) -> Option<(usize, f64)> {
        let mut best: Option<(f64, usize)> = None;
        self.radius_visit(center, r, |i, d| {
            if best.map_or(true, |b| (d, i) < b) {
                best = Some((d, i));
            }
        });
        best.map(|(d, i)| (i, d))
    }

    /// True when at least one indexed point lies within `r` of `center`.
    pub fn any_within(&self, center: &Vec3, r: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let q = [center.x, center.y, center.z];
        let r2 = r * r;
        let mut stack = Stack::new();
        while let Some(n) = stack.pop() {
            match self.nodes[n as usize] {
                Node::Leaf { start, end } => {
                    if self.sorted[start as usize..end as usize].iter().any(|p| dist_sq(&q, p) <= r2) {
                        return true;
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[axis as usize] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    if diff * diff <= r2 {
                        stack.push(far);
                    }
                    stack.push(near);
                }
            }
        }
        false
    }

    /// The `k` nearest points. When `k` exceeds the index size every point
    /// is returned and the result is flagged `short`.
    pub fn knn_search(&self, center: &Vec3, k: usize) -> KnnResult {
        let q = [center.x, center.y, center.z];
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_node(0, &q, k, &mut best);
        }
        KnnResult {
            indices: best.iter().map(|&(_, i)| i as usize).collect(),
            distances_sq: best.iter().map(|&(d, _)| d).collect(),
            short: k > self.points.len(),
        }
    }

    /// Nearest point and its squared distance.
    pub fn nearest(&self, center: &Vec3) -> Option<(usize, f64)> {
        let r = self.knn_search(center, 1);
        r.indices.first().map(|&i| (i, r.distances_sq[0]))
    }

    fn knn_node(&self, n: u32, q: &[f64; 3], k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[n as usize] {
            Node::Leaf { start, end } => {
                let (start, end) = (start as usize, end as usize);
                for (p, &i) in self.sorted[start..end].iter().zip(&self.perm[start..end]) {
                    let d = dist_sq(q, p);
                    let cand = (d, i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                            continue;
                        }
                    }
                    let pos = best.partition_point(|&(bd, bi)| bd < d || (bd == d && bi < i));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, best);
                // equal bound is not pruned so index ties stay exact
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.knn_node(far, q, k, best);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], perm: &mut [u32], offset: u32, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if perm.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + perm.len() as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in perm.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let value = points[perm[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = perm.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid as u32, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_radius(pts: &[[f64; 3]], q: &[f64; 3], r: f64) -> Vec<usize> {
        (0..pts.len()).filter(|&i| dist_sq(q, &pts[i]) <= r * r).collect()
    }

    fn brute_knn(pts: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dist_sq(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn radius_covering_everything() {
        let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let t = KdTree::new(&pts);
        assert_eq!(t.radius_search(&Vec3::new(25.0, 0.0, 0.0), 100.0), (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn radius_is_inclusive() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let t = KdTree::new(&pts);
        assert_eq!(t.radius_search(&Vec3::zeros(), 1.0), vec![0, 1]);
        assert!(t.any_within(&Vec3::new(3.0, 0.0, 0.0), 1.0));
        assert!(!t.any_within(&Vec3::new(3.5, 0.0, 0.0), 1.0));
    }

    #[test]
    fn knn_at_existing_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let t = KdTree::new(&pts);
        for i in [0, 17, 199] {
            let r = t.knn_search(&pts[i], 1);
            assert_eq!(r.indices, vec![i]);
            assert_eq!(r.distances_sq, vec![0.0]);
        }
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        // duplicates and a symmetric arrangement
        let pts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ];
        let t = KdTree::new(&pts);
        assert_eq!(t.knn_search(&Vec3::zeros(), 3).indices, vec![0, 1, 2]);
        let many: Vec<Vec3> = (0..100).map(|i| Vec3::new((i % 3) as f64, 0.0, 0.0)).collect();
        let t = KdTree::new(&many);
        assert_eq!(t.knn_search(&Vec3::zeros(), 4).indices, vec![0, 3, 6, 9]);
    }

    #[test]
    fn knn_larger_than_cloud_is_short() {
        let pts = vec![Vec3::zeros(), Vec3::x()];
        let t = KdTree::new(&pts);
        let r = t.knn_search(&Vec3::zeros(), 5);
        assert!(r.short);
        assert_eq!(r.indices, vec![0, 1]);
        assert!(!t.knn_search(&Vec3::zeros(), 2).short);
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::new(&[]);
        assert!(t.radius_search(&Vec3::zeros(), 1.0).is_empty());
        assert!(t.nearest(&Vec3::zeros()).is_none());
        assert!(t.knn_search(&Vec3::zeros(), 1).short);
    }

    #[test]
    fn random_queries_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)])
            .collect();
        let t = KdTree::from_arrays(pts.clone());
        for _ in 0..50 {
            let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-1.5..1.5)];
            let r = rng.random_range(0.1..3.0);
            let k = rng.random_range(1..20);
            let qv = Vec3::from(q);
            assert_eq!(t.radius_search(&qv, r), brute_radius(&pts, &q, r));
            assert_eq!(t.knn_search(&qv, k).indices, brute_knn(&pts, &q, k));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn queries_equal_brute_force(
            // coarse grid coordinates produce many exact distance ties
            pts in prop::collection::vec(prop::array::uniform3(-20i32..20), 1..1000),
            q in prop::array::uniform3(-25i32..25),
            r in 0.0f64..15.0,
            k in 1usize..30,
        ) {
            let pts: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] as f64 * 0.5, p[1] as f64 * 0.5, p[2] as f64 * 0.5]).collect();
            let q = [q[0] as f64 * 0.5, q[1] as f64 * 0.5, q[2] as f64 * 0.5];
            let t = KdTree::from_arrays(pts.clone());
            let qv = Vec3::from(q);
            prop_assert_eq!(t.radius_search(&qv, r), brute_radius(&pts, &q, r));
            prop_assert_eq!(t.knn_search(&qv, k).indices, brute_knn(&pts, &q, k));
            prop_assert_eq!(t.any_within(&qv, r), !brute_radius(&pts, &q, r).is_empty());
        }
    }
}
