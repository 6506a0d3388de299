//! Depth-image perception: voxel filtering, density clustering, Kalman
//! tracking with occlusion handling, and dynamic/static classification.
//!
//! [`PerceptionEngine::step`] consumes one depth image and maintains the set
//! of [`KalmanTrack`]s. Classification compares each cluster against a
//! buffered frame roughly [`PerceptionParams::delta`] seconds old and feeds
//! per-frame votes through a temporal consistency filter.

pub mod classify;
pub mod dbscan;
pub mod kdtree;
pub mod track;
pub mod voxel;

use std::collections::{HashMap, VecDeque};

pub use classify::{consistent_class, occlusion_test, vote_classify, Visibility, VoteContext, VoteStats};
pub use dbscan::dbscan;
pub use kdtree::KdTree;
pub use track::{associate, Association, HistoryEntry, KalmanTrack, ObjectClass, TrackStatus, VoteDecision};
pub use voxel::{filter_cloud, voxel_key, VoxelFiltered};

use crate::geom::{CameraIntrinsics, DepthImage, PointCloud, Vec3};

/// Tunable perception parameters. Defaults follow the reference setup: a
/// 0.1 m voxel grid, a 0.3 s comparison span with a 0.2 m/s motion
/// threshold, 100-point absolute / 0.8 relative vote limits, a 0.3 s
/// consistency window and a 0.5 s track termination timeout.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    /// Voxel edge length for downsampling, m.
    pub voxel: f64,
    /// DBSCAN neighborhood radius, m.
    pub dbscan_eps: f64,
    /// DBSCAN core-point threshold (self included).
    pub dbscan_min_pts: usize,
    /// Nominal time gap to the classification reference frame, s.
    pub delta: f64,
    /// Apparent-velocity threshold separating dynamic from static, m/s.
    pub v_d: f64,
    /// Absolute dynamic-vote count limit.
    pub l_abs: usize,
    /// Relative dynamic-vote fraction limit.
    pub l_rel: f64,
    /// Consistency window: votes must agree over this span, s.
    pub t_h: f64,
    /// Track termination timeout after the last accepted measurement, s.
    pub t_d: f64,
    /// Association gate at zero speed, m; grows with the track speed.
    pub gate_base: f64,
    /// White-noise acceleration intensity, m^2/s^3.
    pub q_acc: f64,
    /// Measurement noise standard deviation, m.
    pub r_std: f64,
    /// Squared-Mahalanobis association gate (chi-squared, 3 dof).
    pub chi2_gate: f64,
    /// EMA factor for the half-extent estimate.
    pub size_alpha: f64,
    /// Initial position/velocity standard deviations for new tracks.
    pub sigma_p0: f64,
    pub sigma_v0: f64,
    /// Maximum stored history entries per track.
    pub history_cap: usize,
    /// Fraction of the lateral half-extent used to push a cluster centroid
    /// from the visible surface toward the object center.
    pub center_offset_factor: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            voxel: 0.1,
            dbscan_eps: 0.35,
            dbscan_min_pts: 6,
            delta: 0.3,
            v_d: 0.2,
            l_abs: 100,
            l_rel: 0.8,
            t_h: 0.3,
            t_d: 0.5,
            gate_base: 0.8,
            q_acc: 1.0,
            r_std: 0.05,
            chi2_gate: 16.27,
            size_alpha: 0.3,
            sigma_p0: 0.1,
            sigma_v0: 2.0,
            history_cap: 2048,
            center_offset_factor: 0.55,
        }
    }
}

/// A cluster of the current frame, carrying both the filtered voxel points
/// it was built from and the dense points mapped back through the voxel grid.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: usize,
    /// Indices into the filtered (voxel) cloud.
    pub filtered_indices: Vec<usize>,
    /// Indices into the dense cloud of the same frame.
    pub dense_indices: Vec<usize>,
    /// Mean of the dense points.
    pub centroid: Vec3,
    pub aabb_min: Vec3,
    pub aabb_max: Vec3,
    pub timestamp: f64,
}

impl Cluster {
    pub fn half_extents(&self) -> Vec3 {
        (self.aabb_max - self.aabb_min) * 0.5
    }

    pub fn aabb_center(&self) -> Vec3 {
        (self.aabb_max + self.aabb_min) * 0.5
    }
}

/// Voxel-filters and clusters one dense cloud in a single call: DBSCAN runs
/// on the filtered points and labels are mapped back onto the dense points
/// through their voxel cells.
pub fn extract_clusters(
    dense: &PointCloud,
    filtered: &VoxelFiltered,
    voxel: f64,
    eps: f64,
    min_pts: usize,
) -> Vec<Cluster> {
    let labels = dbscan(&filtered.cloud.points, eps, min_pts);
    clusters_from_labels(&labels, filtered, dense, voxel, dense.timestamp)
}

/// Depth cameras only see the front surface of an object, so the raw
/// centroid sits roughly half the object depth in front of the true center.
/// This pushes it along the view ray by `factor` times the lateral
/// half-extent (assuming a roughly circular horizontal cross-section).
pub fn corrected_center(centroid: Vec3, half_extents: Vec3, cam_pos: Vec3, factor: f64) -> Vec3 {
    let view = centroid - cam_pos;
    let norm = view.norm();
    if norm < 1e-9 {
        return centroid;
    }
    let v = view / norm;
    // Horizontal direction perpendicular to the view ray.
    let h = Vec3::new(-v.y, v.x, 0.0);
    let hn = h.norm();
    let lateral = if hn > 1e-9 {
        let h = h / hn;
        ((half_extents.x * h.x).powi(2) + (half_extents.y * h.y).powi(2)).sqrt()
    } else {
        0.5 * (half_extents.x + half_extents.y)
    };
    centroid + v * (factor * lateral)
}

/// One buffered frame: the image plus its dense cloud and a kd-tree over it.
pub struct StoredFrame {
    pub image: DepthImage,
    pub cloud: PointCloud,
    pub tree: KdTree,
}

/// Per-frame output of the perception engine.
#[derive(Debug, Clone)]
pub struct FrameSummary {
    pub timestamp: f64,
    pub clusters: Vec<Cluster>,
    /// `(cluster id, track id)` for every cluster that fed a track this frame.
    pub assignments: Vec<(usize, u64)>,
    /// Vote statistics per track that voted this frame.
    pub votes: Vec<(u64, VoteStats)>,
    /// Tracks that switched to dynamic this frame (triggers history clearing
    /// in the mapping stage).
    pub newly_dynamic: Vec<u64>,
    /// Track ids removed this frame.
    pub removed: Vec<u64>,
    pub dense_points: usize,
    /// Voxel-filtered cloud for this frame (what the mapping stage fuses).
    pub filtered: PointCloud,
}

/// Stateful perception pipeline over a depth-image stream.
pub struct PerceptionEngine {
    pub params: PerceptionParams,
    pub tracks: Vec<KalmanTrack>,
    intrinsics: CameraIntrinsics,
    max_range: f64,
    frames: VecDeque<StoredFrame>,
    next_id: u64,
}

impl PerceptionEngine {
    pub fn new(params: PerceptionParams, intrinsics: CameraIntrinsics, max_range: f64) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            intrinsics,
            max_range,
            frames: VecDeque::new(),
            next_id: 0,
        }
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// The buffered frame closest to `now - delta`, accepted when its age
    /// differs from `delta` by at most `delta / 2`.
    pub fn reference_frame(&self, now: f64) -> Option<&StoredFrame> {
        reference_frame_in(&self.frames, now, self.params.delta)
    }

    /// Processes one depth image: cluster, associate, update tracks, vote on
    /// classes, and retire stale tracks.
    pub fn step(&mut self, image: DepthImage) -> FrameSummary {
        let p = self.params.clone();
        let now = image.timestamp;
        let dense = image.to_point_cloud(&self.intrinsics);
        let filtered = filter_cloud(&dense, p.voxel);
        let clusters = extract_clusters(&dense, &filtered, p.voxel, p.dbscan_eps, p.dbscan_min_pts);

        // Predict all tracks to the frame time.
        for tr in &mut self.tracks {
            tr.predict(now, p.q_acc);
        }

        // Associate clusters to tracks on corrected centroids.
        let cam_pos = image.pose.translation;
        let measurements: Vec<Vec3> = clusters
            .iter()
            .map(|c| corrected_center(c.centroid, c.half_extents(), cam_pos, p.center_offset_factor))
            .collect();
        let track_positions: Vec<Vec3> = self.tracks.iter().map(|t| t.position()).collect();
        let gates: Vec<f64> = self
            .tracks
            .iter()
            .map(|t| p.gate_base + t.velocity().norm() * (now - t.last_update).max(0.0))
            .collect();
        let assoc = associate(&track_positions, &gates, &measurements);

        let mut assignments: Vec<(usize, u64)> = Vec::new();
        let mut cluster_track: HashMap<usize, usize> = HashMap::new();
        let mut leftover_clusters = assoc.unmatched_clusters.clone();
        for &(ti, ci) in &assoc.matches {
            let tr = &mut self.tracks[ti];
            if tr.update(measurements[ci], p.r_std * p.r_std, p.chi2_gate) {
                tr.status = TrackStatus::Tracked;
                tr.last_update = now;
                let he = clusters[ci].half_extents();
                tr.half_extents = tr.half_extents * (1.0 - p.size_alpha) + he * p.size_alpha;
                tr.history.push_back(HistoryEntry {
                    timestamp: now,
                    center: tr.position(),
                });
                while tr.history.len() > p.history_cap {
                    tr.history.pop_front();
                    tr.freed_history = tr.freed_history.saturating_sub(1);
                }
                assignments.push((ci, tr.id));
                cluster_track.insert(ci, ti);
            } else {
                // Gate rejection: the cluster is treated as brand new.
                leftover_clusters.push(ci);
            }
        }
        leftover_clusters.sort_unstable();

        // Mark tracks that missed this frame.
        let matched_tracks: Vec<bool> = {
            let mut v = vec![false; self.tracks.len()];
            for (&ci, &ti) in &cluster_track {
                debug_assert!(ci < clusters.len());
                v[ti] = true;
            }
            v
        };
        for (ti, tr) in self.tracks.iter_mut().enumerate() {
            if !matched_tracks[ti] {
                if let TrackStatus::Tracked = tr.status {
                    tr.status = TrackStatus::Lost { since: now };
                }
            }
        }

        // Spawn tracks for unclaimed clusters.
        for &ci in &leftover_clusters {
            let id = self.next_id;
            self.next_id += 1;
            let tr = KalmanTrack::new(
                id,
                measurements[ci],
                clusters[ci].half_extents(),
                now,
                p.sigma_p0,
                p.sigma_v0,
            );
            cluster_track.insert(ci, self.tracks.len());
            assignments.push((ci, id));
            self.tracks.push(tr);
        }
        assignments.sort_unstable();

        // Classification votes against the reference frame.
        let mut votes = Vec::new();
        let mut newly_dynamic = Vec::new();
        let reference = reference_frame_in(&self.frames, now, p.delta);
        let mut ordered: Vec<(usize, usize)> =
            cluster_track.iter().map(|(&ci, &ti)| (ci, ti)).collect();
        ordered.sort_unstable();
        for (ci, ti) in ordered {
            let stats = match &reference {
                Some(frame) => {
                    let ref_t = frame.image.timestamp;
                    let tr = &self.tracks[ti];
                    let reference_center = tr
                        .history
                        .iter()
                        .min_by(|a, b| {
                            (a.timestamp - ref_t)
                                .abs()
                                .partial_cmp(&(b.timestamp - ref_t).abs())
                                .unwrap()
                        })
                        .filter(|h| (h.timestamp - ref_t).abs() <= p.delta / 2.0)
                        .map(|h| h.center);
                    let ctx = VoteContext {
                        reference_image: &frame.image,
                        reference_tree: &frame.tree,
                        intrinsics: &self.intrinsics,
                        max_range: self.max_range,
                        reference_center,
                        current_center: tr.position(),
                    };
                    let cluster_points: Vec<Vec3> = clusters[ci]
                        .dense_indices
                        .iter()
                        .map(|&i| dense.points[i])
                        .collect();
                    vote_classify(&cluster_points, &ctx, now - ref_t, p.v_d, p.l_abs, p.l_rel)
                }
                None => VoteStats {
                    eligible: 0,
                    dynamic_votes: 0,
                    decision: VoteDecision::Abstain,
                    mean_nn: 0.0,
                },
            };
            let tr = &mut self.tracks[ti];
            tr.votes.push_back((now, stats.decision));
            while let Some(&(t, _)) = tr.votes.front() {
                if t < now - p.t_h - 0.05 {
                    tr.votes.pop_front();
                } else {
                    break;
                }
            }
            if let Some(class) = consistent_class(&tr.votes, now, p.t_h) {
                if class == ObjectClass::Dynamic && tr.class != ObjectClass::Dynamic {
                    newly_dynamic.push(tr.id);
                }
                tr.class = class;
            }
            votes.push((tr.id, stats));
        }

        // Terminate tracks lost longer than t_d.
        let mut removed = Vec::new();
        self.tracks.retain(|tr| {
            if now - tr.last_update > p.t_d {
                removed.push(tr.id);
                false
            } else {
                true
            }
        });

        // Buffer the frame for future reference lookups.
        let tree = KdTree::build(dense.points.clone());
        self.frames.push_back(StoredFrame {
            image,
            cloud: dense.clone(),
            tree,
        });
        let keep_after = now - p.delta * 1.5 - 0.05;
        while let Some(f) = self.frames.front() {
            if f.image.timestamp < keep_after {
                self.frames.pop_front();
            } else {
                break;
            }
        }

        FrameSummary {
            timestamp: now,
            dense_points: dense.len(),
            filtered: filtered.cloud,
            clusters,
            assignments,
            votes,
            newly_dynamic,
            removed,
        }
    }
}

/// Reference-frame selection over a frame buffer (free function so the
/// engine can hold it while mutating its tracks).
fn reference_frame_in(frames: &VecDeque<StoredFrame>, now: f64, delta: f64) -> Option<&StoredFrame> {
    let target = now - delta;
    let best = frames.iter().min_by(|a, b| {
        let da = (a.image.timestamp - target).abs();
        let db = (b.image.timestamp - target).abs();
        da.partial_cmp(&db).unwrap()
    })?;
    let gap = now - best.image.timestamp;
    ((gap - delta).abs() <= delta / 2.0).then_some(best)
}

/// Builds [`Cluster`]s from DBSCAN labels over the filtered cloud, mapping
/// dense points in through their voxel cell.
fn clusters_from_labels(
    labels: &dbscan::Labels,
    filtered: &VoxelFiltered,
    dense: &PointCloud,
    voxel: f64,
    timestamp: f64,
) -> Vec<Cluster> {
    let n_clusters = dbscan::cluster_count(labels);
    if n_clusters == 0 {
        return Vec::new();
    }
    let mut clusters: Vec<Cluster> = (0..n_clusters)
        .map(|id| Cluster {
            id,
            filtered_indices: Vec::new(),
            dense_indices: Vec::new(),
            centroid: Vec3::zeros(),
            aabb_min: Vec3::repeat(f64::INFINITY),
            aabb_max: Vec3::repeat(f64::NEG_INFINITY),
            timestamp,
        })
        .collect();
    let mut cell_label: HashMap<[i64; 3], usize> = HashMap::new();
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = label {
            clusters[*c].filtered_indices.push(i);
            cell_label.insert(filtered.keys[i], *c);
        }
    }
    for (di, &p) in dense.points.iter().enumerate() {
        if let Some(&c) = cell_label.get(&voxel_key(p, voxel)) {
            let cl = &mut clusters[c];
            cl.dense_indices.push(di);
            cl.centroid += p;
            for k in 0..3 {
                cl.aabb_min[k] = cl.aabb_min[k].min(p[k]);
                cl.aabb_max[k] = cl.aabb_max[k].max(p[k]);
            }
        }
    }
    for cl in &mut clusters {
        if !cl.dense_indices.is_empty() {
            cl.centroid /= cl.dense_indices.len() as f64;
        }
    }
    clusters.retain(|c| !c.dense_indices.is_empty());
    for (id, cl) in clusters.iter_mut().enumerate() {
        cl.id = id;
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CameraPose;
    use crate::sim::{render_depth, AgentScript, CameraModel, EgoConfig, ScenarioConfig, StaticPrimitive, Waypoint, YawMode};
    use approx::assert_relative_eq;

    fn scene(statics: Vec<StaticPrimitive>, agents: Vec<AgentScript>) -> ScenarioConfig {
        ScenarioConfig {
            scenario_version: 1,
            name: "engine-test".into(),
            seed: 0,
            bounds_min: Vec3::new(-10.0, -10.0, 0.0),
            bounds_max: Vec3::new(10.0, 10.0, 3.0),
            horizon: 30.0,
            sensor_sigma: 0.0,
            ego: EgoConfig {
                start: Vec3::new(-9.0, 0.0, 1.5),
                goal: Vec3::new(9.0, 0.0, 1.5),
                radius: 0.3,
                script: None,
                yaw: YawMode::FollowVelocity,
            },
            camera: CameraModel::default(),
            statics,
            agents,
        }
    }

    fn cam() -> CameraPose {
        CameraPose::from_yaw_pitch(Vec3::new(0.0, 0.0, 1.5), 0.0, 0.0, 0.0)
    }

    fn run_engine(sc: &ScenarioConfig, frames: usize) -> (PerceptionEngine, Vec<FrameSummary>) {
        let intr = sc.camera.intrinsics();
        let mut engine = PerceptionEngine::new(PerceptionParams::default(), intr, sc.camera.max_range);
        let dt = 1.0 / sc.camera.rate_hz;
        let mut summaries = Vec::new();
        for f in 0..frames {
            let t = f as f64 * dt;
            let img = render_depth(sc, t, &cam());
            summaries.push(engine.step(img));
        }
        (engine, summaries)
    }

    #[test]
    fn single_agent_yields_one_cluster_and_track() {
        let sc = scene(
            vec![],
            vec![AgentScript {
                id: 0,
                half_axes: Vec3::new(0.3, 0.3, 0.9),
                waypoints: vec![Waypoint { t: 0.0, pos: Vec3::new(2.5, 0.0, 0.9) }],
            }],
        );
        let (engine, summaries) = run_engine(&sc, 5);
        assert_eq!(engine.tracks.len(), 1);
        let last = summaries.last().unwrap();
        assert_eq!(last.clusters.len(), 1);
        assert_eq!(last.assignments.len(), 1);
        // Track id stays 0 across all frames.
        assert!(summaries.iter().all(|s| s.assignments.iter().all(|&(_, id)| id == 0)));
        // Corrected center is close to the true center (raw centroid would
        // sit on the front surface, ~0.2+ m off).
        let err = (engine.tracks[0].position() - Vec3::new(2.5, 0.0, 0.9)).norm();
        assert!(err < 0.12, "center error {err}");
    }

    #[test]
    fn moving_agent_is_classified_dynamic_and_static_wall_static() {
        let sc = scene(
            vec![StaticPrimitive::Box {
                center: Vec3::new(3.5, -1.5, 1.5),
                dimensions: Vec3::new(0.4, 1.5, 3.0),
            }],
            vec![AgentScript {
                id: 0,
                half_axes: Vec3::new(0.3, 0.3, 0.9),
                waypoints: vec![
                    Waypoint { t: 0.0, pos: Vec3::new(2.5, 1.5, 0.9) },
                    Waypoint { t: 6.0, pos: Vec3::new(2.5, -4.5, 0.9) },
                ],
            }],
        );
        // 1 s of frames: votes start near 0.15 s, classification by ~0.45 s.
        let (engine, _) = run_engine(&sc, 30);
        let dynamic: Vec<_> = engine.tracks.iter().filter(|t| t.class == ObjectClass::Dynamic).collect();
        let statics: Vec<_> = engine.tracks.iter().filter(|t| t.class == ObjectClass::Static).collect();
        assert_eq!(dynamic.len(), 1, "exactly the agent should be dynamic");
        assert_eq!(statics.len(), 1, "the wall should be static");
        // The dynamic track's velocity should approximate 1 m/s along -y.
        let v = dynamic[0].velocity();
        assert!((v.y + 1.0).abs() < 0.15, "velocity estimate {v:?}");
        assert!(v.x.abs() < 0.15 && v.z.abs() < 0.15);
    }

    #[test]
    fn track_survives_short_occlusion_with_same_id() {
        // Agent passes behind a pillar; the fully hidden span (~0.37 s at
        // 1.5 m/s) stays below t_d = 0.5 s, so the track must coast through
        // and resume under the same id.
        let sc = scene(
            vec![StaticPrimitive::Box {
                center: Vec3::new(2.0, 0.0, 1.5),
                dimensions: Vec3::new(0.3, 0.7, 3.0),
            }],
            vec![AgentScript {
                id: 0,
                half_axes: Vec3::new(0.25, 0.25, 0.8),
                waypoints: vec![
                    Waypoint { t: 0.0, pos: Vec3::new(3.2, 2.5, 0.8) },
                    Waypoint { t: 10.0 / 3.0, pos: Vec3::new(3.2, -2.5, 0.8) },
                ],
            }],
        );
        let (engine, summaries) = run_engine(&sc, 100); // 3.3 s, crossing at ~1.67 s
        // The agent's representative track: the dynamic one with the longest
        // assignment span.
        let span_of = |id: u64| -> (usize, usize) {
            let first = summaries
                .iter()
                .position(|s| s.assignments.iter().any(|&(_, tid)| tid == id))
                .unwrap_or(usize::MAX);
            let last = summaries
                .iter()
                .rposition(|s| s.assignments.iter().any(|&(_, tid)| tid == id))
                .unwrap_or(0);
            (first, last)
        };
        let agent = engine
            .tracks
            .iter()
            .filter(|t| t.class == ObjectClass::Dynamic)
            .max_by_key(|t| {
                let (f, l) = span_of(t.id);
                l.saturating_sub(f)
            })
            .expect("a dynamic track must exist");
        let (first, last) = span_of(agent.id);
        assert!(
            first < 20 && last > 85,
            "track must span the occlusion: {first}..{last}"
        );
        // The pillar must be tracked as static.
        assert!(
            engine.tracks.iter().any(|t| t.class == ObjectClass::Static),
            "pillar should hold a static track"
        );
    }

    #[test]
    fn corrected_center_counteracts_surface_bias() {
        // Synthetic: centroid 0.3 m in front of true center along +x view.
        let centroid = Vec3::new(2.0, 0.0, 1.0);
        let he = Vec3::new(0.3, 0.3, 0.9);
        let m = corrected_center(centroid, he, Vec3::new(0.0, 0.0, 1.0), 0.55);
        assert!(m.x > centroid.x);
        assert_relative_eq!(m.x, 2.0 + 0.55 * 0.3, epsilon = 1e-9);
        assert_relative_eq!(m.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lost_track_terminates_after_timeout() {
        // Agent simply leaves the sensing range.
        let sc = scene(
            vec![],
            vec![AgentScript {
                id: 0,
                half_axes: Vec3::new(0.3, 0.3, 0.9),
                waypoints: vec![
                    Waypoint { t: 0.0, pos: Vec3::new(2.0, 0.0, 0.9) },
                    Waypoint { t: 1.0, pos: Vec3::new(2.0, 8.0, 0.9) },
                ],
            }],
        );
        let (engine, summaries) = run_engine(&sc, 60); // 2 s
        assert!(engine.tracks.is_empty(), "track should be terminated");
        assert!(summaries.iter().any(|s| !s.removed.is_empty()));
    }

    #[test]
    fn no_reference_frame_means_abstain_votes() {
        let sc = scene(
            vec![],
            vec![AgentScript {
                id: 0,
                half_axes: Vec3::new(0.3, 0.3, 0.9),
                waypoints: vec![Waypoint { t: 0.0, pos: Vec3::new(2.5, 0.0, 0.9) }],
            }],
        );
        let (_, summaries) = run_engine(&sc, 3);
        for s in &summaries {
            for (_, stats) in &s.votes {
                assert_eq!(stats.decision, VoteDecision::Abstain);
            }
        }
    }
}
