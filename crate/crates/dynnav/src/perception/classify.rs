//! Dynamic/static classification of tracked clusters.
//!
//! Each frame, a cluster's points are compared against the dense cloud of a
//! reference frame roughly `delta` seconds older. Points whose nearest
//! reference neighbor is further than `v_d * delta` imply apparent motion
//! above `v_d` and vote "dynamic". Points that the reference camera could
//! not see — outside its frustum, beyond range, or occluded by something in
//! front — are excluded from the vote entirely, so disappearing geometry is
//! never mistaken for motion.

use std::collections::VecDeque;

use super::kdtree::KdTree;
use super::track::{ObjectClass, VoteDecision};
use crate::geom::{project_to_image, CameraIntrinsics, DepthImage, Vec3};

/// Visibility of a world point from a stored reference view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Visible,
    /// Something closer along the same pixel hides the point.
    Occluded,
    OutOfFrame,
    /// In the frustum but beyond the camera's sensing range.
    OutOfRange,
}

/// Classifies the visibility of `p` in the reference image. A point counts
/// as occluded when its projected depth exceeds the stored depth by more
/// than `eps`; a stored no-return (0.0) means confirmed free space, i.e.
/// visible.
pub fn occlusion_test(
    p: Vec3,
    reference: &DepthImage,
    intr: &CameraIntrinsics,
    eps: f64,
    max_range: f64,
) -> Visibility {
    let Some(ip) = project_to_image(p, &reference.pose, intr) else {
        return Visibility::OutOfFrame;
    };
    if ip.cam.z > max_range {
        return Visibility::OutOfRange;
    }
    let stored = reference
        .sample_nearest(ip.u, ip.v)
        .expect("projection verified in-frame");
    if stored > 0.0 && ip.cam.z - stored > eps {
        return Visibility::Occluded;
    }
    Visibility::Visible
}

/// Everything the voting step needs about the reference frame.
pub struct VoteContext<'a> {
    pub reference_image: &'a DepthImage,
    /// Kd-tree over the reference frame's dense cloud.
    pub reference_tree: &'a KdTree,
    pub intrinsics: &'a CameraIntrinsics,
    pub max_range: f64,
    /// The track's own center around the reference time, when its history
    /// reaches back that far. `None` disables the vote (abstain): without a
    /// reference-time counterpart, apparent motion is undefined.
    pub reference_center: Option<Vec3>,
    /// The track's current center estimate.
    pub current_center: Vec3,
}

/// Per-cluster voting statistics.
#[derive(Debug, Clone)]
pub struct VoteStats {
    /// Points that survived the visibility checks.
    pub eligible: usize,
    /// Eligible points whose apparent velocity exceeded the threshold.
    pub dynamic_votes: usize,
    pub decision: VoteDecision,
    /// Mean nearest-neighbor distance of eligible points (0 when none).
    pub mean_nn: f64,
}

/// Casts the dynamic/static vote for one cluster.
///
/// `points` are the cluster's dense points in world coordinates, `delta` the
/// actual time gap to the reference frame. A point votes dynamic when its
/// nearest neighbor in the reference cloud is further than `v_d * delta`.
/// The cluster decision is dynamic when more than `l_abs` points vote
/// dynamic, or when the dynamic fraction exceeds `l_rel`.
pub fn vote_classify(
    points: &[Vec3],
    ctx: &VoteContext,
    delta: f64,
    v_d: f64,
    l_abs: usize,
    l_rel: f64,
) -> VoteStats {
    let abstain = |reason_eligible: usize| VoteStats {
        eligible: reason_eligible,
        dynamic_votes: 0,
        decision: VoteDecision::Abstain,
        mean_nn: 0.0,
    };
    let Some(ref_center) = ctx.reference_center else {
        return abstain(0);
    };
    if delta <= 0.0 || ctx.reference_tree.is_empty() {
        return abstain(0);
    }
    let eps = v_d * delta;
    // Self-occlusion exemption: when the object moved away from the
    // reference camera, its current surface projects behind its own old
    // silhouette and would look "occluded" by itself. Compare the depths of
    // the old and current centers in the reference view.
    let ref_pose = &ctx.reference_image.pose;
    let z_old = ref_pose.world_to_camera(ref_center).z;
    let z_now = ref_pose.world_to_camera(ctx.current_center).z;
    let moved_away = z_now > z_old;

    let mut eligible = 0usize;
    let mut dynamic_votes = 0usize;
    let mut nn_sum = 0.0;
    for &p in points {
        match occlusion_test(p, ctx.reference_image, ctx.intrinsics, eps, ctx.max_range) {
            Visibility::OutOfFrame | Visibility::OutOfRange => continue,
            Visibility::Occluded if !moved_away => continue,
            _ => {}
        }
        let d = ctx.reference_tree.nearest_dist(p);
        eligible += 1;
        nn_sum += d;
        if d / delta > v_d {
            dynamic_votes += 1;
        }
    }
    if eligible == 0 {
        return abstain(0);
    }
    let decision = if dynamic_votes > l_abs
        || dynamic_votes as f64 / eligible as f64 > l_rel
    {
        VoteDecision::Dynamic
    } else {
        VoteDecision::Static
    };
    VoteStats {
        eligible,
        dynamic_votes,
        decision,
        mean_nn: nn_sum / eligible as f64,
    }
}

/// Evaluates the vote history: a class is assigned only when the votes
/// covering at least the last `t_h` seconds all agree on the same
/// non-abstain decision. Returns `None` when the evidence is inconsistent or
/// does not span the window yet (the caller keeps the previous class).
pub fn consistent_class(
    votes: &VecDeque<(f64, VoteDecision)>,
    now: f64,
    t_h: f64,
) -> Option<ObjectClass> {
    const TOL: f64 = 1e-9;
    let window: Vec<&(f64, VoteDecision)> =
        votes.iter().filter(|(t, _)| *t >= now - t_h - TOL).collect();
    let (first, rest) = window.split_first()?;
    let last_t = window.last().unwrap().0;
    if last_t - first.0 < t_h - TOL {
        return None;
    }
    if first.1 == VoteDecision::Abstain || rest.iter().any(|(_, d)| *d != first.1) {
        return None;
    }
    match first.1 {
        VoteDecision::Dynamic => Some(ObjectClass::Dynamic),
        VoteDecision::Static => Some(ObjectClass::Static),
        VoteDecision::Abstain => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CameraPose;
    use crate::sim::{render_depth, AgentScript, CameraModel, EgoConfig, ScenarioConfig, StaticPrimitive, Waypoint, YawMode};

    fn scene_with(statics: Vec<StaticPrimitive>, agents: Vec<AgentScript>) -> ScenarioConfig {
        ScenarioConfig {
            scenario_version: 1,
            name: "classify-test".into(),
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

    #[test]
    fn occlusion_test_basics() {
        let scene = scene_with(
            vec![StaticPrimitive::Box {
                center: Vec3::new(2.0, 0.0, 1.5),
                dimensions: Vec3::new(0.4, 1.0, 1.0),
            }],
            vec![],
        );
        let img = render_depth(&scene, 0.0, &cam());
        let intr = scene.camera.intrinsics();
        // A point behind the box along the optical axis is occluded.
        let hidden = Vec3::new(3.0, 0.0, 1.5);
        assert_eq!(
            occlusion_test(hidden, &img, &intr, 0.06, 4.0),
            Visibility::Occluded
        );
        // A point in front of the box is visible.
        let front = Vec3::new(1.5, 0.0, 1.5);
        assert_eq!(
            occlusion_test(front, &img, &intr, 0.06, 4.0),
            Visibility::Visible
        );
        // A point against empty background (no return) is visible.
        let open = Vec3::new(3.0, 2.0, 1.5);
        assert_eq!(
            occlusion_test(open, &img, &intr, 0.06, 4.0),
            Visibility::Visible
        );
        // Behind the camera: out of frame.
        assert_eq!(
            occlusion_test(Vec3::new(-1.0, 0.0, 1.5), &img, &intr, 0.06, 4.0),
            Visibility::OutOfFrame
        );
        // In the frustum but beyond range.
        assert_eq!(
            occlusion_test(Vec3::new(5.0, 0.0, 1.5), &img, &intr, 0.06, 4.0),
            Visibility::OutOfRange
        );
        // Exactly on the stored surface: visible (difference is ~0).
        assert_eq!(
            occlusion_test(Vec3::new(1.8, 0.0, 1.5), &img, &intr, 0.06, 4.0),
            Visibility::Visible
        );
    }

    fn vote_for_agent_pair(
        agent_t0: Vec3,
        agent_t1: Vec3,
        statics: Vec<StaticPrimitive>,
        delta: f64,
    ) -> VoteStats {
        let agent = AgentScript {
            id: 0,
            half_axes: Vec3::new(0.3, 0.3, 0.9),
            waypoints: vec![
                Waypoint { t: 0.0, pos: agent_t0 },
                Waypoint { t: delta, pos: agent_t1 },
            ],
        };
        let scene = scene_with(statics, vec![agent]);
        let intr = scene.camera.intrinsics();
        let img0 = render_depth(&scene, 0.0, &cam());
        let img1 = render_depth(&scene, delta, &cam());
        let cloud0 = img0.to_point_cloud(&intr);
        let cloud1 = img1.to_point_cloud(&intr);
        let tree0 = KdTree::build(cloud0.points.clone());
        // Cluster points: points of frame 1 near the agent.
        let pts: Vec<Vec3> = cloud1
            .points
            .iter()
            .copied()
            .filter(|p| {
                let d = p - agent_t1;
                (d.x / 0.5).powi(2) + (d.y / 0.5).powi(2) + (d.z / 1.1).powi(2) <= 1.0
            })
            .collect();
        assert!(pts.len() > 50, "cluster should be well observed, got {}", pts.len());
        let ctx = VoteContext {
            reference_image: &img0,
            reference_tree: &tree0,
            intrinsics: &intr,
            max_range: scene.camera.max_range,
            reference_center: Some(agent_t0),
            current_center: agent_t1,
        };
        vote_classify(&pts, &ctx, delta, 0.2, 100, 0.8)
    }

    #[test]
    fn moving_agent_votes_dynamic() {
        let stats = vote_for_agent_pair(
            Vec3::new(2.5, -0.5, 0.9),
            Vec3::new(2.5, -0.2, 0.9),
            vec![],
            0.3,
        );
        assert_eq!(stats.decision, VoteDecision::Dynamic);
        assert!(stats.dynamic_votes > 100 || stats.dynamic_votes as f64 / stats.eligible as f64 > 0.8);
    }

    #[test]
    fn stationary_structure_votes_static() {
        // Same scene, agent does not move; all points find near-zero NN.
        let stats = vote_for_agent_pair(
            Vec3::new(2.5, -0.5, 0.9),
            Vec3::new(2.5, -0.5, 0.9),
            vec![],
            0.3,
        );
        assert_eq!(stats.decision, VoteDecision::Static);
        assert_eq!(stats.dynamic_votes, 0);
        assert!(stats.mean_nn < 0.02);
    }

    #[test]
    fn agent_revealed_from_behind_wall_abstains() {
        // At t0 the agent is fully hidden behind a wall; at t1 it has stepped
        // clear. Every current point was occluded in the reference view, so
        // the vote must abstain rather than call it static (or dynamic).
        let wall = StaticPrimitive::Box {
            center: Vec3::new(2.0, -0.8, 1.5),
            dimensions: Vec3::new(0.2, 1.6, 3.0),
        };
        let agent = AgentScript {
            id: 0,
            half_axes: Vec3::new(0.3, 0.3, 0.9),
            waypoints: vec![
                Waypoint { t: 0.0, pos: Vec3::new(2.6, -0.8, 0.9) },
                Waypoint { t: 0.3, pos: Vec3::new(2.6, 0.9, 0.9) },
            ],
        };
        let scene = scene_with(vec![wall], vec![agent]);
        let intr = scene.camera.intrinsics();
        let img0 = render_depth(&scene, 0.0, &cam());
        let img1 = render_depth(&scene, 0.3, &cam());
        let cloud0 = img0.to_point_cloud(&intr);
        let cloud1 = img1.to_point_cloud(&intr);
        let tree0 = KdTree::build(cloud0.points.clone());
        let center1 = Vec3::new(2.6, 0.9, 0.9);
        let pts: Vec<Vec3> = cloud1
            .points
            .iter()
            .copied()
            .filter(|p| {
                let d = p - center1;
                (d.x / 0.5).powi(2) + (d.y / 0.5).powi(2) + (d.z / 1.1).powi(2) <= 1.0
            })
            .collect();
        assert!(pts.len() > 50);
        // The track was born this frame: no reference-time counterpart.
        let ctx = VoteContext {
            reference_image: &img0,
            reference_tree: &tree0,
            intrinsics: &intr,
            max_range: scene.camera.max_range,
            reference_center: None,
            current_center: center1,
        };
        let stats = vote_classify(&pts, &ctx, 0.3, 0.2, 100, 0.8);
        assert_eq!(stats.decision, VoteDecision::Abstain);
    }

    #[test]
    fn receding_agent_is_exempt_from_self_occlusion() {
        // The agent moves straight away from the camera; its new surface
        // projects behind its own old silhouette. Without the exemption all
        // points would be excluded and the vote would abstain forever.
        let stats = vote_for_agent_pair(
            Vec3::new(2.2, 0.0, 0.9),
            Vec3::new(2.5, 0.0, 0.9),
            vec![],
            0.3,
        );
        assert_eq!(stats.decision, VoteDecision::Dynamic);
        assert!(stats.eligible > 100);
    }

    #[test]
    fn consistency_filter_requires_full_agreeing_window() {
        use VoteDecision::*;
        let mk = |entries: &[(f64, VoteDecision)]| -> VecDeque<(f64, VoteDecision)> {
            entries.iter().copied().collect()
        };
        // Three agreeing votes spanning exactly 0.3 s.
        let v = mk(&[(0.0, Dynamic), (0.15, Dynamic), (0.3, Dynamic)]);
        assert_eq!(consistent_class(&v, 0.3, 0.3), Some(ObjectClass::Dynamic));
        // Window not yet covered.
        let v = mk(&[(0.2, Dynamic), (0.3, Dynamic)]);
        assert_eq!(consistent_class(&v, 0.3, 0.3), None);
        // One disagreeing vote breaks it.
        let v = mk(&[(0.0, Dynamic), (0.15, Static), (0.3, Dynamic)]);
        assert_eq!(consistent_class(&v, 0.3, 0.3), None);
        // An abstain breaks it too.
        let v = mk(&[(0.0, Dynamic), (0.15, Abstain), (0.3, Dynamic)]);
        assert_eq!(consistent_class(&v, 0.3, 0.3), None);
        // Static agreement yields static.
        let v = mk(&[(0.0, Static), (0.1, Static), (0.2, Static), (0.3, Static)]);
        assert_eq!(consistent_class(&v, 0.3, 0.3), Some(ObjectClass::Static));
        // Old votes outside the window are ignored (an old abstain is fine).
        let v = mk(&[(0.0, Abstain), (0.5, Dynamic), (0.65, Dynamic), (0.8, Dynamic)]);
        assert_eq!(consistent_class(&v, 0.8, 0.3), Some(ObjectClass::Dynamic));
        // Empty history.
        assert_eq!(consistent_class(&mk(&[]), 1.0, 0.3), None);
    }
}
