//! Voxel downsampling of point clouds.

use std::collections::HashMap;

use crate::geom::{PointCloud, Vec3};

/// Integer voxel coordinates of `p` on a grid of cell size `res` anchored at
/// the world origin.
#[inline]
pub fn voxel_key(p: Vec3, res: f64) -> [i64; 3] {
    [
        (p.x / res).floor() as i64,
        (p.y / res).floor() as i64,
        (p.z / res).floor() as i64,
    ]
}

/// Result of voxel filtering: one centroid per occupied cell.
#[derive(Debug, Clone)]
pub struct VoxelFiltered {
    /// Downsampled cloud; point `i` is the centroid of cell `keys[i]`.
    pub cloud: PointCloud,
    /// Voxel coordinates per filtered point, sorted lexicographically.
    pub keys: Vec<[i64; 3]>,
    /// How many input points fell into each cell.
    pub counts: Vec<usize>,
}

impl VoxelFiltered {
    /// Lookup table from voxel coordinates to filtered point index.
    pub fn key_index(&self) -> HashMap<[i64; 3], usize> {
        self.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect()
    }
}

/// Replaces all points inside each `res`-sized voxel with their centroid.
/// Output order is sorted by voxel coordinates, independent of input order.
pub fn filter_cloud(cloud: &PointCloud, res: f64) -> VoxelFiltered {
    assert!(res > 0.0, "voxel size must be positive");
    let mut cells: HashMap<[i64; 3], (Vec3, usize)> = HashMap::new();
    for &p in &cloud.points {
        let e = cells.entry(voxel_key(p, res)).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut entries: Vec<([i64; 3], (Vec3, usize))> = cells.into_iter().collect();
    entries.sort_unstable_by_key(|(k, _)| *k);
    let mut points = Vec::with_capacity(entries.len());
    let mut keys = Vec::with_capacity(entries.len());
    let mut counts = Vec::with_capacity(entries.len());
    for (k, (sum, n)) in entries {
        points.push(sum / n as f64);
        keys.push(k);
        counts.push(n);
    }
    VoxelFiltered {
        cloud: PointCloud {
            points,
            timestamp: cloud.timestamp,
            source_pose: cloud.source_pose,
        },
        keys,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{CameraPose, Mat3};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn cloud_of(points: Vec<Vec3>) -> PointCloud {
        PointCloud {
            points,
            timestamp: 0.0,
            source_pose: CameraPose::new(Mat3::identity(), Vec3::zeros(), 0.0).unwrap(),
        }
    }

    #[test]
    fn points_in_one_cell_merge_to_centroid() {
        let c = cloud_of(vec![
            Vec3::new(0.01, 0.02, 0.03),
            Vec3::new(0.07, 0.04, 0.09),
        ]);
        let f = filter_cloud(&c, 0.1);
        assert_eq!(f.cloud.len(), 1);
        assert_relative_eq!(f.cloud.points[0].x, 0.04, epsilon = 1e-12);
        assert_eq!(f.counts[0], 2);
        assert_eq!(f.keys[0], [0, 0, 0]);
    }

    #[test]
    fn separated_points_stay_separate() {
        let c = cloud_of(vec![Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.95, 0.0, 0.0)]);
        let f = filter_cloud(&c, 0.1);
        assert_eq!(f.cloud.len(), 2);
    }

    #[test]
    fn negative_coordinates_floor_correctly() {
        let c = cloud_of(vec![Vec3::new(-0.05, -0.15, 0.0)]);
        let f = filter_cloud(&c, 0.1);
        assert_eq!(f.keys[0], [-1, -2, 0]);
    }

    #[test]
    fn output_is_input_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        let a = filter_cloud(&cloud_of(pts), 0.1);
        let b = filter_cloud(&cloud_of(rev), 0.1);
        assert_eq!(a.keys, b.keys);
        for (pa, pb) in a.cloud.points.iter().zip(&b.cloud.points) {
            assert!((pa - pb).norm() < 1e-12);
        }
    }

    /// Independent oracle: brute-force binning of 10k random points must
    /// yield exactly the same cell set and per-cell counts.
    #[test]
    fn matches_brute_force_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.0..3.0),
                )
            })
            .collect();
        let f = filter_cloud(&cloud_of(pts.clone()), 0.1);
        let mut expected: HashMap<[i64; 3], usize> = HashMap::new();
        for p in &pts {
            *expected
                .entry([
                    (p.x / 0.1).floor() as i64,
                    (p.y / 0.1).floor() as i64,
                    (p.z / 0.1).floor() as i64,
                ])
                .or_default() += 1;
        }
        assert_eq!(f.keys.len(), expected.len());
        for (k, n) in f.keys.iter().zip(&f.counts) {
            assert_eq!(expected.get(k), Some(n));
        }
        // Each centroid must lie inside its own cell.
        for (k, p) in f.keys.iter().zip(&f.cloud.points) {
            assert_eq!(voxel_key(*p, 0.1), *k);
        }
    }
}
