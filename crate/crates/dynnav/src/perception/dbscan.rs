//! Density-based clustering (DBSCAN) over small filtered clouds.

use super::kdtree::KdTree;
use crate::geom::Vec3;

/// Cluster label per point: `Some(cluster)` or `None` for noise.
pub type Labels = Vec<Option<usize>>;

/// Classic DBSCAN. A point is a core point when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are discovered in ascending
/// point-index order and border points join the first core cluster that
/// reaches them, so the labeling is deterministic for a given input order.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Labels {
    let n = points.len();
    let mut labels: Labels = vec![None; n];
    if n == 0 {
        return labels;
    }
    let tree = KdTree::build(points.to_vec());
    let mut visited = vec![false; n];
    let mut next_cluster = 0;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let neighbors = tree.within_radius(points[seed], eps);
        if neighbors.len() < min_pts {
            continue; // noise for now; may become a border point later
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[seed] = Some(cluster);
        let mut queue: Vec<usize> = neighbors;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nj = tree.within_radius(points[j], eps);
            if nj.len() >= min_pts {
                for &k in &nj {
                    if !visited[k] || labels[k].is_none() {
                        queue.push(k);
                    }
                }
            }
        }
    }
    labels
}

/// Number of clusters present in a labeling.
pub fn cluster_count(labels: &Labels) -> usize {
    labels.iter().flatten().copied().max().map_or(0, |m| m + 1)
}
