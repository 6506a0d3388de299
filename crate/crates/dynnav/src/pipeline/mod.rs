//! Closed-loop navigation episodes and the tooling around them.
//!
//! [`run_episode`] wires the full stack together: each sensor tick renders a
//! depth frame from the simulator, feeds it through perception and the
//! environment model, and replans on a fixed cadence — or immediately, when
//! the trajectory being flown stops validating against the freshest
//! environment view. The vehicle follows the planned spline exactly; arrival,
//! ground-truth collisions, and timeouts end the episode.
//!
//! The stages of a tick run strictly sequentially, so an episode is a pure
//! function of the scenario, the configuration, and the seed. Optional
//! [`TraceWriter`] output captures every frame in plain text with no
//! wall-clock content, making traces byte-identical across runs.
//!
//! [`run_benchmark`] repeats episodes over a scenario suite and aggregates
//! metrics; [`inspect_trace`] turns a recorded trace back into human-readable
//! tables and plot-ready samples.

mod bench;
mod inspect;
mod trace;

pub use bench::{run_benchmark, BenchEntry, BenchReport, BenchRow, BenchSuite};
pub use inspect::{inspect_trace, InspectReport};
pub use trace::{
    read_trace, EgoRow, FrameRow, PlanRow, SplineRecord, TraceData, TraceMeta, TraceWriter,
    TrackRow,
};

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env_model::{EnvironmentModel, EnvironmentSnapshot, MappingParams};
use crate::perception::{ObjectClass, PerceptionEngine, PerceptionParams};
use crate::plan::{plan_trajectory, BSpline, PlannerParams};
use crate::sim::{render_depth, EgoConfig, ScenarioConfig, Waypoint, YawMode};
use crate::{CameraPose, Error, Result, Vec3};

/// Loop rates of the closed-loop episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Depth frames per simulated second.
    pub sensor_hz: f64,
    /// Nominal replanning frequency; a predicted collision of the active
    /// trajectory forces an immediate extra replan.
    pub replan_hz: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            sensor_hz: 30.0,
            replan_hz: 10.0,
        }
    }
}

/// Configuration of the whole stack. Every field has a working default; a
/// TOML file may override any subset of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub perception: PerceptionParams,
    pub mapping: MappingParams,
    pub planner: PlannerParams,
    pub rates: RateConfig,
    /// Arrival tolerance around the goal, m.
    pub goal_tolerance: f64,
    /// Consecutive planner failures after which the episode is abandoned.
    pub max_plan_failures: usize,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rates.sensor_hz > 0.0) || !(self.rates.replan_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if !(self.goal_tolerance > 0.0) {
            return Err(Error::Config("goal_tolerance must be positive".into()));
        }
        if self.max_plan_failures == 0 {
            return Err(Error::Config("max_plan_failures must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            perception: PerceptionParams::default(),
            mapping: MappingParams::default(),
            planner: PlannerParams::default(),
            rates: RateConfig::default(),
            goal_tolerance: 0.3,
            max_plan_failures: 2,
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    /// The vehicle came within the goal tolerance.
    GoalReached,
    /// Ground truth says the vehicle hit an obstacle.
    Collision,
    /// The planner failed on consecutive attempts.
    PlannerInfeasible,
    /// The scenario horizon elapsed first.
    Timeout,
}

impl EpisodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpisodeStatus::GoalReached => "goal_reached",
            EpisodeStatus::Collision => "collision",
            EpisodeStatus::PlannerInfeasible => "planner_infeasible",
            EpisodeStatus::Timeout => "timeout",
        }
    }
}

/// Outcome of one episode.
///
/// Tracking errors average `|estimate - truth|` over every (frame, dynamic
/// track) pair whose estimate lies within 1 m of a ground-truth agent; the
/// two `*_ms` fields are wall-clock means and the only non-deterministic
/// content here — they never enter trace files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub status: EpisodeStatus,
    /// Mean position error of matched dynamic tracks, m.
    pub error_pos: f64,
    /// Mean velocity error of matched dynamic tracks, m/s.
    pub error_vel: f64,
    /// Number of (frame, track) samples behind the two errors.
    pub track_samples: usize,
    /// Arrival time at the goal, or the episode end time when not reached, s.
    pub t_arrive: f64,
    /// Length of the executed path, m.
    pub l_traj: f64,
    /// `l_traj / t_arrive`, m/s.
    pub v_mean: f64,
    /// Ground-truth collisions (0 or 1; a collision ends the episode).
    pub collision_count: usize,
    pub frames: usize,
    pub plans: usize,
    /// Replans forced by a predicted collision, outside the regular cadence.
    pub forced_replans: usize,
    /// Mean wall-clock time per planning attempt, ms.
    pub t_opt_ms: f64,
    /// Mean wall-clock perception + mapping time per frame, ms.
    pub t_perception_ms: f64,
}

impl RunMetrics {
    pub fn success(&self) -> bool {
        self.status == EpisodeStatus::GoalReached
    }

    pub(crate) fn trace_meta(&self, scenario: &ScenarioConfig) -> TraceMeta {
        TraceMeta {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            status: self.status,
            frames: self.frames,
            plans: self.plans,
            error_pos: self.error_pos,
            error_vel: self.error_vel,
            track_samples: self.track_samples,
            t_arrive: self.t_arrive,
            l_traj: self.l_traj,
            v_mean: self.v_mean,
            collision_count: self.collision_count,
        }
    }
}

/// Executed vehicle state, exact on the planned spline.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ego {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub yaw: f64,
}

struct ActivePlan {
    spline: BSpline,
    /// Episode time the spline starts at.
    t0: f64,
}

impl ActivePlan {
    /// State at absolute episode time `t`; the vehicle hovers at the endpoint
    /// once the spline is exhausted.
    fn state_at(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let s = t - self.t0;
        let d = self.spline.duration();
        if s >= d {
            (self.spline.position(d), Vec3::zeros(), Vec3::zeros())
        } else {
            let s = s.max(0.0);
            (
                self.spline.position(s),
                self.spline.velocity(s),
                self.spline.acceleration(s),
            )
        }
    }

    /// Whether the rest of the plan stays valid against a snapshot taken at
    /// absolute time `now`.
    fn clear_against(&self, now: f64, snap: &EnvironmentSnapshot, check_dt: f64) -> bool {
        let d = self.spline.duration();
        let s0 = (now - self.t0).clamp(0.0, d);
        if d - s0 < 1e-9 {
            return snap.valid_check(self.spline.position(d), 0.0);
        }
        let n = ((d - s0) / check_dt).ceil() as usize;
        for k in 0..=n {
            let s = (s0 + k as f64 * check_dt).min(d);
            if !snap.valid_check(self.spline.position(s), s - s0) {
                return false;
            }
        }
        true
    }
}

/// Fallback motion after a failed replan: constant full-authority
/// deceleration along the current velocity until rest, then hover. Flying on
/// along an invalidated plan would carry the vehicle deeper into whatever the
/// planner could not clear.
struct BrakeRamp {
    p0: Vec3,
    v0: Vec3,
    /// Episode time braking starts at.
    t0: f64,
    decel: f64,
}

impl BrakeRamp {
    fn state_at(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let s = self.v0.norm();
        if s < 1e-9 {
            return (self.p0, Vec3::zeros(), Vec3::zeros());
        }
        let dir = self.v0 / s;
        let dt = (t - self.t0).max(0.0);
        let t_stop = s / self.decel;
        if dt >= t_stop {
            let stop = self.p0 + dir * (s * s / (2.0 * self.decel));
            (stop, Vec3::zeros(), Vec3::zeros())
        } else {
            (
                self.p0 + self.v0 * dt - dir * (0.5 * self.decel * dt * dt),
                self.v0 - dir * (self.decel * dt),
                -dir * self.decel,
            )
        }
    }
}

fn initial_yaw(ego: &EgoConfig) -> f64 {
    match &ego.yaw {
        YawMode::Fixed { value } => *value,
        YawMode::FacePoint { target } => {
            (target.y - ego.start.y).atan2(target.x - ego.start.x)
        }
        YawMode::FollowVelocity => {
            let d = ego.goal - ego.start;
            if d.x.hypot(d.y) > 1e-9 {
                d.y.atan2(d.x)
            } else {
                0.0
            }
        }
    }
}

fn update_yaw(mode: &YawMode, pos: Vec3, vel: Vec3, last: f64) -> f64 {
    match mode {
        YawMode::Fixed { value } => *value,
        YawMode::FacePoint { target } => (target.y - pos.y).atan2(target.x - pos.x),
        YawMode::FollowVelocity => {
            if vel.x.hypot(vel.y) > 0.15 {
                vel.y.atan2(vel.x)
            } else {
                last
            }
        }
    }
}

/// Piecewise-linear waypoint schedule; holds the first/last point (zero
/// velocity) outside the time span.
fn script_state(script: &[Waypoint], t: f64) -> (Vec3, Vec3) {
    let first = script.first().expect("validated scripts are non-empty");
    let last = script.last().unwrap();
    if t <= first.t {
        return (first.pos, Vec3::zeros());
    }
    if t >= last.t {
        return (last.pos, Vec3::zeros());
    }
    for w in script.windows(2) {
        if t < w[1].t {
            let span = w[1].t - w[0].t;
            let v = (w[1].pos - w[0].pos) / span;
            return (w[0].pos + v * (t - w[0].t), v);
        }
    }
    (last.pos, Vec3::zeros())
}

/// Runs one closed-loop episode and returns its metrics. With a trace
/// directory, every frame, track, and plan is recorded as plain text.
///
/// Planner failures are part of the episode outcome
/// ([`EpisodeStatus::PlannerInfeasible`] after `max_plan_failures`
/// consecutive ones), not an `Err`; errors are reserved for invalid inputs
/// and I/O.
pub fn run_episode(
    scenario: &ScenarioConfig,
    config: &PipelineConfig,
    trace_dir: Option<&Path>,
) -> Result<RunMetrics> {
    scenario.validate()?;
    config.validate()?;
    let mut writer = trace_dir.map(TraceWriter::create).transpose()?;

    let dt_frame = 1.0 / config.rates.sensor_hz;
    let replan_dt = 1.0 / config.rates.replan_hz;
    let goal = scenario.ego.goal;
    let scripted = scenario.ego.script.is_some();

    let mut engine = PerceptionEngine::new(
        config.perception.clone(),
        scenario.camera.intrinsics(),
        scenario.camera.max_range,
    );
    let mut env = EnvironmentModel::new(
        scenario.bounds_min,
        scenario.bounds_max,
        scenario.ego.radius,
        config.mapping.clone(),
    );

    let mut ego = Ego {
        pos: scenario.ego.start,
        vel: Vec3::zeros(),
        acc: Vec3::zeros(),
        yaw: initial_yaw(&scenario.ego),
    };
    let mut plan: Option<ActivePlan> = None;
    let mut brake: Option<BrakeRamp> = None;
    let mut last_plan_t = f64::NEG_INFINITY;
    let mut failures = 0usize;

    let status;
    let t_arrive;
    let mut l_traj = 0.0;
    let mut err_pos = 0.0;
    let mut err_vel = 0.0;
    let mut track_samples = 0usize;
    let mut collision_count = 0usize;
    let (mut frames, mut plans, mut forced_replans) = (0usize, 0usize, 0usize);
    let (mut sum_perc, mut sum_opt, mut n_opt) = (0.0f64, 0.0f64, 0usize);

    let mut frame = 0usize;
    loop {
        let t = frame as f64 * dt_frame;
        if t > scenario.horizon + 1e-9 {
            status = EpisodeStatus::Timeout;
            t_arrive = scenario.horizon;
            break;
        }
        if scenario.check_collision_gt(ego.pos, scenario.ego.radius, t) {
            collision_count += 1;
            status = EpisodeStatus::Collision;
            t_arrive = t;
            break;
        }
        if !scripted && (ego.pos - goal).norm() <= config.goal_tolerance {
            status = EpisodeStatus::GoalReached;
            t_arrive = t;
            break;
        }

        // Sense and update the world model.
        let pose = CameraPose::from_yaw_pitch(ego.pos, ego.yaw, 0.0, t);
        let image = render_depth(scenario, t, &pose);
        let tick = Instant::now();
        let summary = engine.step(image);
        env.integrate_frame(&summary.filtered, &mut engine.tracks);
        sum_perc += tick.elapsed().as_secs_f64();
        frames += 1;

        // Tracking quality against ground truth (metrics only; the pipeline
        // itself never sees this).
        let truth = scenario.ground_truth_states(t);
        for tr in engine.tracks.iter().filter(|tr| tr.class == ObjectClass::Dynamic) {
            let nearest = truth.iter().min_by(|a, b| {
                let da = (a.position - tr.position()).norm();
                let db = (b.position - tr.position()).norm();
                da.total_cmp(&db)
            });
            if let Some(g) = nearest {
                let dp = (g.position - tr.position()).norm();
                if dp <= 1.0 {
                    err_pos += dp;
                    err_vel += (g.velocity - tr.velocity()).norm();
                    track_samples += 1;
                }
            }
        }

        // Replan on cadence, or immediately when the active trajectory stops
        // validating against the fresh environment view.
        let mut replanned = false;
        let mut abandoned = false;
        if !scripted {
            let snapshot = env.snapshot(&engine.tracks, t);
            let due = plan.is_none() || t - last_plan_t >= replan_dt - 1e-9;
            let endangered = plan
                .as_ref()
                .is_some_and(|p| !p.clear_against(t, &snapshot, config.planner.check_dt));
            if endangered && !due {
                forced_replans += 1;
            }
            if due || endangered {
                let tick = Instant::now();
                let attempt =
                    plan_trajectory(ego.pos, ego.vel, ego.acc, goal, &snapshot, &config.planner);
                sum_opt += tick.elapsed().as_secs_f64();
                n_opt += 1;
                last_plan_t = t;
                match attempt {
                    Ok(tp) => {
                        if let Some(w) = writer.as_mut() {
                            w.plan_row(plans, frame, t, &tp)?;
                        }
                        plan = Some(ActivePlan {
                            spline: tp.spline,
                            t0: t,
                        });
                        brake = None;
                        failures = 0;
                        plans += 1;
                        replanned = true;
                    }
                    Err(e @ (Error::StartInCollision | Error::Infeasible(_))) => {
                        // A predicted shell sweeping over the vehicle makes
                        // the start invalid without any true contact; that is
                        // a wait-it-out condition, not planner infeasibility.
                        // The same goes for attempts made while still braking
                        // off the speed of an abandoned plan. Everything else
                        // counts toward the consecutive-failure abort.
                        let swept = matches!(e, Error::StartInCollision)
                            && snapshot.grid.cell_of(ego.pos).is_some()
                            && !snapshot.grid.query_occupied(ego.pos, snapshot.inflate_cells);
                        let still_braking = brake.is_some() && ego.vel.norm() > 0.15;
                        if std::env::var("DYNNAV_DEBUG_PLAN").is_ok() {
                            eprintln!(
                                "[probe] t={t:.3} fail #{c} err={e:?} ego=({:.2},{:.2},{:.2}) vel={:.2} swept={swept} braking={still_braking}",
                                ego.pos.x,
                                ego.pos.y,
                                ego.pos.z,
                                ego.vel.norm(),
                                c = failures + 1,
                            );
                        }
                        // A failed attempt only matters when the vehicle has
                        // no valid motion left: cadence-due attempts on top of
                        // a still-healthy plan keep flying it.
                        if plan.is_none() || endangered {
                            if !swept && !still_braking {
                                failures += 1;
                                abandoned = failures >= config.max_plan_failures;
                            }
                            plan = None;
                            if brake.is_none() {
                                brake = Some(BrakeRamp {
                                    p0: ego.pos,
                                    v0: ego.vel,
                                    t0: t,
                                    decel: config.planner.search.a_max,
                                });
                            }
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        if let Some(w) = writer.as_mut() {
            w.frame_row(frame, t, &summary, &engine.tracks, replanned)?;
            w.ego_row(frame, t, &ego)?;
            w.track_rows(frame, t, &engine.tracks, &summary.clusters, &summary.assignments)?;
        }
        if abandoned {
            status = EpisodeStatus::PlannerInfeasible;
            t_arrive = t;
            break;
        }

        // Fly to the next tick.
        let t_next = t + dt_frame;
        let (p, v, a) = if let Some(script) = &scenario.ego.script {
            let (p, v) = script_state(script, t_next);
            (p, v, Vec3::zeros())
        } else if let Some(plan) = &plan {
            plan.state_at(t_next)
        } else if let Some(b) = &brake {
            b.state_at(t_next)
        } else {
            (ego.pos, Vec3::zeros(), Vec3::zeros())
        };
        l_traj += (p - ego.pos).norm();
        ego.yaw = update_yaw(&scenario.ego.yaw, p, v, ego.yaw);
        (ego.pos, ego.vel, ego.acc) = (p, v, a);
        frame += 1;
    }

    let metrics = RunMetrics {
        status,
        error_pos: err_pos / track_samples.max(1) as f64,
        error_vel: err_vel / track_samples.max(1) as f64,
        track_samples,
        t_arrive,
        l_traj,
        v_mean: if t_arrive > 0.0 { l_traj / t_arrive } else { 0.0 },
        collision_count,
        frames,
        plans,
        forced_replans,
        t_opt_ms: 1e3 * sum_opt / n_opt.max(1) as f64,
        t_perception_ms: 1e3 * sum_perc / frames.max(1) as f64,
    };
    if let Some(w) = writer {
        w.finish(&metrics.trace_meta(scenario), &env.grid)?;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{AgentScript, CameraModel};

    fn small_camera() -> CameraModel {
        CameraModel {
            width: 80,
            height: 60,
            fov_h_deg: 87.0,
            fov_v_deg: 58.0,
            max_range: 4.0,
            rate_hz: 30.0,
        }
    }

    fn empty_scenario(start: Vec3, goal: Vec3, horizon: f64) -> ScenarioConfig {
        ScenarioConfig {
            scenario_version: 1,
            name: "test".into(),
            seed: 7,
            bounds_min: Vec3::new(-5.0, -5.0, 0.0),
            bounds_max: Vec3::new(5.0, 5.0, 3.0),
            horizon,
            sensor_sigma: 0.0,
            ego: EgoConfig {
                start,
                goal,
                radius: 0.2,
                script: None,
                yaw: YawMode::FollowVelocity,
            },
            camera: small_camera(),
            statics: vec![],
            agents: vec![],
        }
    }

    fn crossing_agent(id: u32, from: Vec3, to: Vec3, t0: f64, t1: f64) -> AgentScript {
        AgentScript {
            id,
            half_axes: Vec3::new(0.3, 0.3, 0.4),
            waypoints: vec![Waypoint { t: t0, pos: from }, Waypoint { t: t1, pos: to }],
        }
    }

    #[test]
    fn config_toml_overrides_only_named_fields() {
        let cfg = PipelineConfig::from_toml_str(
            "[rates]\nreplan_hz = 5.0\n\n[planner]\nn_ctrl = 24\n\n[perception]\nvoxel = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.rates.replan_hz, 5.0);
        assert_eq!(cfg.rates.sensor_hz, 30.0);
        assert_eq!(cfg.planner.n_ctrl, 24);
        assert_eq!(cfg.perception.voxel, 0.2);
        assert_eq!(cfg.perception.dbscan_eps, PerceptionParams::default().dbscan_eps);
        assert_eq!(cfg.goal_tolerance, 0.3);

        let err = PipelineConfig::from_toml_str("[rates]\nreplan_hzz = 5.0\n");
        assert!(err.is_err(), "typos in config keys must be rejected");
    }

    #[test]
    fn config_default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.planner.search.v_max, cfg.planner.search.v_max);
        assert_eq!(back.mapping.resolution, cfg.mapping.resolution);
        assert_eq!(back.perception.chi2_gate, cfg.perception.chi2_gate);
    }

    #[test]
    fn goal_at_start_ends_immediately() {
        let p = Vec3::new(0.0, 0.0, 1.5);
        let sc = empty_scenario(p, p, 5.0);
        let m = run_episode(&sc, &PipelineConfig::default(), None).unwrap();
        assert_eq!(m.status, EpisodeStatus::GoalReached);
        assert_eq!(m.frames, 0);
        assert_eq!(m.t_arrive, 0.0);
    }

    #[test]
    fn free_space_episode_reaches_the_goal() {
        let sc = empty_scenario(Vec3::new(-2.0, 0.0, 1.5), Vec3::new(2.0, 0.0, 1.5), 12.0);
        let m = run_episode(&sc, &PipelineConfig::default(), None).unwrap();
        assert_eq!(m.status, EpisodeStatus::GoalReached, "metrics: {m:?}");
        assert!(m.t_arrive < 6.0, "took {} s", m.t_arrive);
        assert!(m.l_traj >= 3.6 && m.l_traj < 6.0, "path length {}", m.l_traj);
        assert!(m.v_mean > 0.5, "v_mean {}", m.v_mean);
        assert_eq!(m.collision_count, 0);
        assert!(m.plans >= 1);
    }

    #[test]
    fn scripted_ego_skips_planning_and_tracks_agents() {
        let mut sc = empty_scenario(Vec3::new(0.0, 0.0, 1.5), Vec3::new(0.0, 0.0, 1.5), 2.0);
        sc.ego.script = Some(vec![Waypoint {
            t: 0.0,
            pos: Vec3::new(0.0, 0.0, 1.5),
        }]);
        sc.ego.yaw = YawMode::Fixed { value: 0.0 };
        sc.agents = vec![crossing_agent(
            1,
            Vec3::new(2.5, -2.0, 1.5),
            Vec3::new(2.5, 2.0, 1.5),
            0.0,
            4.0,
        )];
        let m = run_episode(&sc, &PipelineConfig::default(), None).unwrap();
        assert_eq!(m.status, EpisodeStatus::Timeout);
        assert_eq!(m.plans, 0);
        assert_eq!(m.frames, 61, "2 s at 30 Hz, inclusive of both ends");
        assert!(m.track_samples > 10, "agent was never matched");
        assert!(m.error_pos < 0.2, "error_pos {}", m.error_pos);
    }

    #[test]
    fn traces_are_byte_identical_across_runs() {
        let mut sc = empty_scenario(Vec3::new(-1.5, 0.0, 1.5), Vec3::new(1.5, 0.0, 1.5), 6.0);
        sc.sensor_sigma = 0.01;
        sc.agents = vec![crossing_agent(
            1,
            Vec3::new(0.5, -2.5, 1.5),
            Vec3::new(0.5, 2.5, 1.5),
            0.0,
            5.0,
        )];
        let cfg = PipelineConfig::default();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = run_episode(&sc, &cfg, Some(dir_a.path())).unwrap();
        let mb = run_episode(&sc, &cfg, Some(dir_b.path())).unwrap();
        assert_eq!(ma.status, mb.status);
        for name in [
            "frames.csv",
            "ego.csv",
            "tracks.csv",
            "plans.csv",
            "splines.txt",
            "grid_final.txt",
            "meta.json",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert!(!a.is_empty(), "{name} is empty");
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let data = read_trace(dir_a.path()).unwrap();
        assert_eq!(data.frames.len(), ma.frames);
        assert_eq!(data.plans.len(), ma.plans);
        assert_eq!(data.splines.len(), ma.plans);
        assert_eq!(data.meta.unwrap().status, ma.status);
    }

    #[test]
    fn track_velocity_matches_position_finite_differences() {
        // A scripted observer stares at one constant-velocity agent; the
        // velocity column of the reconstructed track table must agree with
        // finite differences of its position column once the filter settles.
        let mut sc = empty_scenario(Vec3::new(0.0, 0.0, 1.5), Vec3::new(0.0, 0.0, 1.5), 3.0);
        sc.ego.script = Some(vec![Waypoint {
            t: 0.0,
            pos: Vec3::new(0.0, 0.0, 1.5),
        }]);
        sc.ego.yaw = YawMode::Fixed { value: 0.0 };
        sc.agents = vec![crossing_agent(
            1,
            Vec3::new(2.5, -1.8, 1.5),
            Vec3::new(2.5, 1.8, 1.5),
            0.0,
            6.0,
        )];
        let dir = tempfile::tempdir().unwrap();
        run_episode(&sc, &PipelineConfig::default(), Some(dir.path())).unwrap();
        let data = read_trace(dir.path()).unwrap();

        let mut ids: Vec<u64> = data.tracks.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        let longest = ids
            .iter()
            .copied()
            .max_by_key(|id| data.tracks.iter().filter(|r| r.id == *id).count())
            .expect("no tracks recorded");
        let rows: Vec<&TrackRow> = data.tracks.iter().filter(|r| r.id == longest).collect();
        assert!(rows.len() > 40, "track too short: {} rows", rows.len());
        let mut checked = 0usize;
        let mut worst: f64 = 0.0;
        for w in rows.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.t < 1.0 || b.frame != a.frame + 1 || b.status != "tracked" {
                continue;
            }
            let fd = (b.pos - a.pos) / (b.t - a.t);
            worst = worst.max((fd - b.vel).norm());
            checked += 1;
        }
        assert!(checked > 30, "not enough consecutive tracked frames");
        assert!(worst < 0.3, "velocity vs position FD disagree by {worst}");
    }

    #[test]
    fn empty_trace_directory_reads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let data = read_trace(dir.path()).unwrap();
        assert!(data.is_empty());
    }

    #[test]
    fn sealed_goal_is_reported_infeasible() {
        // A narrow tube arena with a wall across its full cross-section,
        // entirely inside the camera's first view: after one frame the map
        // provably separates start from goal, so planning must fail twice
        // and the episode must end as infeasible rather than time out.
        let mut sc = empty_scenario(Vec3::new(0.0, 0.0, 1.5), Vec3::new(2.2, 0.0, 1.5), 8.0);
        sc.bounds_min = Vec3::new(-0.5, -0.5, 1.0);
        sc.bounds_max = Vec3::new(2.5, 0.5, 2.0);
        sc.ego.radius = 0.1;
        sc.statics = vec![crate::sim::StaticPrimitive::Box {
            center: Vec3::new(1.0, 0.0, 1.5),
            dimensions: Vec3::new(0.2, 1.2, 1.2),
        }];
        let mut cfg = PipelineConfig::default();
        cfg.planner.search.max_nodes = 4000;
        let m = run_episode(&sc, &cfg, None).unwrap();
        assert_eq!(m.status, EpisodeStatus::PlannerInfeasible, "metrics: {m:?}");
        assert!(!m.success());
        assert!(m.t_arrive < 0.5, "gave up late: {} s", m.t_arrive);
    }
}
