//! Minimal 3-D kd-tree for nearest-neighbor and radius queries.
//!
//! Built once per point cloud; queries are read-only. Construction uses
//! median splits with index tie-breaking, so the tree shape — and therefore
//! every query result — is a pure function of the input order.

use crate::geom::Vec3;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Static kd-tree over a set of points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    /// Builds a balanced tree over `points` (which the tree takes ownership of).
    pub fn build(points: Vec<Vec3>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = KdTree {
            points,
            nodes: Vec::with_capacity(n),
            root: -1,
        };
        if n > 0 {
            tree.root = tree.build_rec(&mut order, 0);
        }
        tree
    }

    fn build_rec(&mut self, order: &mut [u32], depth: usize) -> i32 {
        if order.is_empty() {
            return -1;
        }
        let axis = (depth % 3) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points[a as usize][axis as usize];
            let cb = self.points[b as usize][axis as usize];
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let point = order[mid];
        let id = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis,
            left: -1,
            right: -1,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Index and distance of the nearest point to `q`; `None` when empty.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.root < 0 {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, q, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    /// Distance to the nearest point, or `+inf` for an empty tree.
    pub fn nearest_dist(&self, q: Vec3) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |(_, d)| d)
    }

    fn nearest_rec(&self, id: i32, q: Vec3, best: &mut (usize, f64)) {
        let node = self.nodes[id as usize];
        let p = self.points[node.point as usize];
        let d2 = (p - q).norm_squared();
        // Ties resolve to the lower point index.
        if d2 < best.1 || (d2 == best.1 && (node.point as usize) < best.0) {
            *best = (node.point as usize, d2);
        }
        let delta = q[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near >= 0 {
            self.nearest_rec(near, q, best);
        }
        if far >= 0 && delta * delta <= best.1 {
            self.nearest_rec(far, q, best);
        }
    }

    /// Indices of all points within `r` of `q`, in ascending index order.
    pub fn within_radius(&self, q: Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.root >= 0 {
            self.radius_rec(self.root, q, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, id: i32, q: Vec3, r2: f64, out: &mut Vec<usize>) {
        let node = self.nodes[id as usize];
        let p = self.points[node.point as usize];
        if (p - q).norm_squared() <= r2 {
            out.push(node.point as usize);
        }
        let delta = q[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near >= 0 {
            self.radius_rec(near, q, r2, out);
        }
        if far >= 0 && delta * delta <= r2 {
            self.radius_rec(far, q, r2, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect()
    }

    #[test]
    fn empty_and_single() {
        let t = KdTree::build(Vec::new());
        assert!(t.nearest(Vec3::zeros()).is_none());
        assert_eq!(t.nearest_dist(Vec3::zeros()), f64::INFINITY);
        assert!(t.within_radius(Vec3::zeros(), 1.0).is_empty());

        let t = KdTree::build(vec![Vec3::new(1.0, 0.0, 0.0)]);
        let (i, d) = t.nearest(Vec3::zeros()).unwrap();
        assert_eq!(i, 0);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force() {
        let pts = random_points(500, 7);
        let tree = KdTree::build(pts.clone());
        let queries = random_points(200, 8);
        for q in queries {
            // Nearest by brute force with index tie-break.
            let (bi, bd2) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            let (i, d) = tree.nearest(q).unwrap();
            assert_eq!(i, bi);
            assert!((d * d - bd2).abs() < 1e-9);

            let r = 1.3;
            let mut expected: Vec<usize> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| (*p - q).norm_squared() <= r * r)
                .map(|(i, _)| i)
                .collect();
            expected.sort_unstable();
            assert_eq!(tree.within_radius(q, r), expected);
        }
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let p = Vec3::new(0.5, 0.5, 0.5);
        let tree = KdTree::build(vec![p, p, p]);
        let (i, d) = tree.nearest(p).unwrap();
        assert_eq!(i, 0);
        assert!(d < 1e-12);
        assert_eq!(tree.within_radius(p, 0.1), vec![0, 1, 2]);
    }
}
