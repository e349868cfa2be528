//! Exact nearest-neighbour index over 3D points.
//!
//! A bucketed kd-tree split on the widest axis at the median. Ties in
//! distance always resolve to the lowest original point index, so every
//! query is deterministic.

use crate::geom::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    /// Points in tree order.
    points: Vec<[f64; 3]>,
    /// Original index of each point in tree order.
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    pub index: usize,
    pub dist2: f64,
}

#[inline]
fn closer(d2: f64, idx: u32, best_d2: f64, best_idx: u32) -> bool {
    d2 < best_d2 || (d2 == best_d2 && idx < best_idx)
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for the index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&raw, &mut order, 0, points.len(), &mut nodes);
        }
        let points = order.iter().map(|&i| raw[i as usize]).collect();
        KdTree {
            points,
            ids: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Original point indices in tree order. Neighbouring entries are
    /// spatially close, so queries issued in this order share cache.
    pub fn order(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.ids.iter().map(|&i| i as usize)
    }

    pub fn nearest(&self, q: &Vec3) -> Option<Neighbour> {
        self.nearest_within(q, f64::INFINITY, None)
    }

    /// Nearest point with squared distance `<= max_dist2`.
    ///
    /// `hint` is any candidate index known to be close (for example the
    /// previous match); it only tightens the search bound and never changes
    /// the answer.
    pub fn nearest_within(&self, q: &Vec3, max_dist2: f64, hint: Option<(usize, f64)>) -> Option<Neighbour> {
        if self.points.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best_d2 = max_dist2;
        let mut best_idx = u32::MAX;
        if let Some((idx, d2)) = hint {
            if d2 <= max_dist2 {
                best_d2 = d2;
                best_idx = idx as u32;
            }
        }
        self.search_nearest(0, &q, 0.0, &mut [0.0; 3], &mut best_d2, &mut best_idx);
        (best_idx != u32::MAX).then_some(Neighbour {
            index: best_idx as usize,
            dist2: best_d2,
        })
    }

    // `cell_d2` is the squared distance from `q` to the node's cell and
    // `off[a]` its component along axis `a`.
    fn search_nearest(
        &self,
        node: u32,
        q: &[f64; 3],
        cell_d2: f64,
        off: &mut [f64; 3],
        best_d2: &mut f64,
        best_idx: &mut u32,
    ) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                let range = start as usize..end as usize;
                for (p, &id) in self.points[range.clone()].iter().zip(&self.ids[range]) {
                    let d2 = dist2(p, q);
                    if d2 <= *best_d2 && closer(d2, id, *best_d2, *best_idx) {
                        *best_d2 = d2;
                        *best_idx = id;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_nearest(near, q, cell_d2, off, best_d2, best_idx);
                let a = axis as usize;
                let far_d2 = cell_d2 - off[a] * off[a] + diff * diff;
                if far_d2 <= *best_d2 {
                    let saved = off[a];
                    off[a] = diff;
                    self.search_nearest(far, q, far_d2, off, best_d2, best_idx);
                    off[a] = saved;
                }
            }
        }
    }

    /// The `k` nearest points sorted by distance, ties by index.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<Neighbour> {
        let mut out: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        self.search_knn(0, &[q.x, q.y, q.z], 0.0, &mut [0.0; 3], k, &mut out);
        out.into_iter()
            .map(|(dist2, i)| Neighbour {
                index: i as usize,
                dist2,
            })
            .collect()
    }

    fn search_knn(&self, node: u32, q: &[f64; 3], cell_d2: f64, off: &mut [f64; 3], k: usize, out: &mut Vec<(f64, u32)>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                let range = start as usize..end as usize;
                for (p, &id) in self.points[range.clone()].iter().zip(&self.ids[range]) {
                    let d2 = dist2(p, q);
                    if out.len() == k {
                        let (wd, wi) = out[k - 1];
                        if !closer(d2, id, wd, wi) {
                            continue;
                        }
                        out.pop();
                    }
                    // insertion from the back; rows are short
                    out.push((d2, id));
                    let mut j = out.len() - 1;
                    while j > 0 && closer(d2, id, out[j - 1].0, out[j - 1].1) {
                        out[j] = out[j - 1];
                        j -= 1;
                    }
                    out[j] = (d2, id);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_knn(near, q, cell_d2, off, k, out);
                let a = axis as usize;
                let far_d2 = cell_d2 - off[a] * off[a] + diff * diff;
                if out.len() < k || far_d2 <= out[k - 1].0 {
                    let saved = off[a];
                    off[a] = diff;
                    self.search_knn(far, q, far_d2, off, k, out);
                    off[a] = saved;
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let slice = &mut order[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    if hi[axis] - lo[axis] <= 0.0 {
        // all points coincide
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a as usize][axis].total_cmp(&points[b as usize][axis]));
    let value = points[slice[mid] as usize][axis];
    // Everything left of `mid` is <= value and everything from `mid` on is >= value,
    // so the search rule "diff <= 0 goes left" stays exact.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..500 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random()) * 1.2;
            let n = tree.nearest(&q).unwrap();
            let (bi, bd) = brute_nearest(&pts, &q);
            assert_eq!(n.index, bi);
            assert_eq!(n.dist2, bd);
            let k = tree.knn(&q, 16);
            let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = k.iter().map(|n| n.index).collect();
            let want: Vec<usize> = all[..16].iter().map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vec3::zeros()).unwrap().index, 0);
        assert_eq!(tree.nearest(&Vec3::new(2.0, 0.0, 0.0)).unwrap().index, 0);
    }

    #[test]
    fn bounded_search_and_hint() {
        let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let tree = KdTree::new(&pts);
        let q = Vec3::new(2.04, 0.5, 0.0);
        assert!(tree.nearest_within(&q, 0.2, None).is_none());
        let n = tree.nearest_within(&q, 1.0, Some((30, (pts[30] - q).norm_squared()))).unwrap();
        assert_eq!(n.index, 20);
    }

    #[test]
    fn duplicate_points() {
        let pts = vec![Vec3::new(0.5, 0.5, 0.5); 50];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vec3::zeros()).unwrap().index, 0);
        assert_eq!(tree.knn(&Vec3::zeros(), 3).iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
