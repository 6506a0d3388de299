//! Deterministic scenario simulation: static primitives, scripted moving
//! agents, analytic depth rendering and ground-truth queries.
//!
//! Rendering casts one ray per pixel through the pinhole model and intersects
//! it analytically with every primitive, so identical inputs always produce
//! identical images. Optional Gaussian depth noise is seeded from the
//! scenario seed and the frame time, never from global state.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::geom::{CameraIntrinsics, CameraPose, DepthImage, Vec3};
use crate::{Error, Result};

/// Axis-aligned static obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticPrimitive {
    /// Axis-aligned box given by its center and full edge lengths.
    Box { center: Vec3, dimensions: Vec3 },
    /// Vertical cylinder (axis along world z), with caps.
    Cylinder { center: Vec3, radius: f64, height: f64 },
}

impl StaticPrimitive {
    /// First intersection parameter `s > 0` of the ray `o + s d`, if any.
    /// `d` need not be normalized; the caller interprets `s` in its scale.
    pub fn raycast(&self, o: Vec3, d: Vec3) -> Option<f64> {
        match *self {
            StaticPrimitive::Box { center, dimensions } => {
                let half = dimensions * 0.5;
                let lo = center - half;
                let hi = center + half;
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < lo[k] || o[k] > hi[k] {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / d[k];
                        let (t0, t1) = ((lo[k] - o[k]) * inv, (hi[k] - o[k]) * inv);
                        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
                        tmin = tmin.max(t0);
                        tmax = tmax.min(t1);
                        if tmin > tmax {
                            return None;
                        }
                    }
                }
                if tmin > 1e-12 {
                    Some(tmin)
                } else if tmax > 1e-12 {
                    Some(tmax)
                } else {
                    None
                }
            }
            StaticPrimitive::Cylinder { center, radius, height } => {
                let z0 = center.z - height * 0.5;
                let z1 = center.z + height * 0.5;
                let mut best: Option<f64> = None;
                let mut consider = |s: f64| {
                    if s > 1e-12 && best.is_none_or(|b| s < b) {
                        best = Some(s);
                    }
                };
                // Lateral surface.
                let ox = o.x - center.x;
                let oy = o.y - center.y;
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = 2.0 * (ox * d.x + oy * d.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for s in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            let z = o.z + s * d.z;
                            if z >= z0 && z <= z1 {
                                consider(s);
                            }
                        }
                    }
                }
                // Caps.
                if d.z.abs() > 1e-15 {
                    for zc in [z0, z1] {
                        let s = (zc - o.z) / d.z;
                        let x = ox + s * d.x;
                        let y = oy + s * d.y;
                        if x * x + y * y <= radius * radius {
                            consider(s);
                        }
                    }
                }
                best
            }
        }
    }

    /// Whether `p` lies inside (or on) the primitive.
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            StaticPrimitive::Box { center, dimensions } => {
                let half = dimensions * 0.5;
                (0..3).all(|k| (p[k] - center[k]).abs() <= half[k])
            }
            StaticPrimitive::Cylinder { center, radius, height } => {
                let dx = p.x - center.x;
                let dy = p.y - center.y;
                dx * dx + dy * dy <= radius * radius
                    && (p.z - center.z).abs() <= height * 0.5
            }
        }
    }

    /// Euclidean distance from `p` to the solid (0 inside).
    pub fn distance(&self, p: Vec3) -> f64 {
        match *self {
            StaticPrimitive::Box { center, dimensions } => {
                let half = dimensions * 0.5;
                let mut d2 = 0.0;
                for k in 0..3 {
                    let excess = (p[k] - center[k]).abs() - half[k];
                    if excess > 0.0 {
                        d2 += excess * excess;
                    }
                }
                d2.sqrt()
            }
            StaticPrimitive::Cylinder { center, radius, height } => {
                let dr = ((p.x - center.x).powi(2) + (p.y - center.y).powi(2)).sqrt() - radius;
                let dz = (p.z - center.z).abs() - height * 0.5;
                match (dr > 0.0, dz > 0.0) {
                    (true, true) => (dr * dr + dz * dz).sqrt(),
                    (true, false) => dr,
                    (false, true) => dz,
                    (false, false) => 0.0,
                }
            }
        }
    }

    /// Axis-aligned bounds of the primitive as `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        match *self {
            StaticPrimitive::Box { center, dimensions } => {
                (center - dimensions * 0.5, center + dimensions * 0.5)
            }
            StaticPrimitive::Cylinder { center, radius, height } => (
                center - Vec3::new(radius, radius, height * 0.5),
                center + Vec3::new(radius, radius, height * 0.5),
            ),
        }
    }
}

/// One timed waypoint of an agent script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub pos: Vec3,
}

/// A moving agent modeled as an axis-aligned ellipsoid following a
/// piecewise-linear waypoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub id: u32,
    /// Ellipsoid half-axes (x, y, z).
    pub half_axes: Vec3,
    /// Waypoints with strictly increasing timestamps.
    pub waypoints: Vec<Waypoint>,
}

impl AgentScript {
    /// Position and velocity at time `t`. The schedule holds the first/last
    /// waypoint (zero velocity) outside its time span; within a segment the
    /// velocity is the segment slope.
    pub fn position_velocity(&self, t: f64) -> (Vec3, Vec3) {
        let wps = &self.waypoints;
        if wps.is_empty() {
            return (Vec3::zeros(), Vec3::zeros());
        }
        if t <= wps[0].t {
            return (wps[0].pos, Vec3::zeros());
        }
        if t >= wps[wps.len() - 1].t {
            return (wps[wps.len() - 1].pos, Vec3::zeros());
        }
        // Last segment whose start time is <= t.
        let i = match wps.binary_search_by(|w| w.t.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let a = &wps[i];
        let b = &wps[i + 1];
        let dt = b.t - a.t;
        let v = (b.pos - a.pos) / dt;
        (a.pos + v * (t - a.t), v)
    }

    /// First ray parameter `s > 0` where `o + s d` meets the agent ellipsoid
    /// centered at `center`.
    pub fn raycast_at(&self, center: Vec3, o: Vec3, d: Vec3) -> Option<f64> {
        let inv = Vec3::new(
            1.0 / self.half_axes.x,
            1.0 / self.half_axes.y,
            1.0 / self.half_axes.z,
        );
        let oc = (o - center).component_mul(&inv);
        let dc = d.component_mul(&inv);
        let a = dc.norm_squared();
        let b = 2.0 * oc.dot(&dc);
        let c = oc.norm_squared() - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 || a < 1e-15 {
            return None;
        }
        let sq = disc.sqrt();
        let s0 = (-b - sq) / (2.0 * a);
        let s1 = (-b + sq) / (2.0 * a);
        if s0 > 1e-12 {
            Some(s0)
        } else if s1 > 1e-12 {
            Some(s1)
        } else {
            None
        }
    }
}

/// Depth camera description; intrinsics are derived from the field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    /// Maximum sensing range in meters; surfaces further away yield no return.
    pub max_range: f64,
    pub rate_hz: f64,
}

impl CameraModel {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_fov_deg(self.width, self.height, self.fov_h_deg, self.fov_v_deg)
            .expect("camera model validated on construction")
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        // A 2x-downsampled wide FOV stereo depth module.
        Self {
            width: 320,
            height: 240,
            fov_h_deg: 87.0,
            fov_v_deg: 58.0,
            max_range: 4.0,
            rate_hz: 30.0,
        }
    }
}

/// How the (simulated) vehicle orients its camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum YawMode {
    /// Face the current horizontal velocity; keep the last yaw when hovering.
    FollowVelocity,
    /// Constant yaw in radians.
    Fixed { value: f64 },
    /// Always face a fixed world point.
    FacePoint { target: Vec3 },
}

impl Default for YawMode {
    fn default() -> Self {
        YawMode::FollowVelocity
    }
}

/// Ego vehicle description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoConfig {
    pub start: Vec3,
    pub goal: Vec3,
    /// Bounding-sphere radius used for inflation and collision judging.
    pub radius: f64,
    /// Optional scripted path; when present the planner is bypassed and the
    /// vehicle follows these waypoints (useful for perception-only runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<Waypoint>>,
    #[serde(default)]
    pub yaw: YawMode,
}

/// Full scenario description; serializable to/from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_version: u32,
    pub name: String,
    pub seed: u64,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
    /// Wall-time limit of the episode in simulated seconds.
    pub horizon: f64,
    /// Std-dev of Gaussian depth noise in meters (0 disables noise).
    #[serde(default)]
    pub sensor_sigma: f64,
    pub ego: EgoConfig,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub statics: Vec<StaticPrimitive>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentScript>,
}

/// Ground-truth state of one agent at a query time.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthAgent {
    pub id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub half_axes: Vec3,
}

impl ScenarioConfig {
    /// Checks structural validity: version, bounds, ego placement, camera,
    /// agent schedules.
    pub fn validate(&self) -> Result<()> {
        if self.scenario_version != 1 {
            return Err(Error::Scenario(format!(
                "unsupported scenario_version {}",
                self.scenario_version
            )));
        }
        for k in 0..3 {
            if !(self.bounds_min[k] < self.bounds_max[k]) {
                return Err(Error::Scenario("bounds_min must be below bounds_max".into()));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Scenario("horizon must be positive".into()));
        }
        if !(self.ego.radius > 0.0) {
            return Err(Error::Scenario("ego radius must be positive".into()));
        }
        for p in [self.ego.start, self.ego.goal] {
            if (0..3).any(|k| p[k] < self.bounds_min[k] || p[k] > self.bounds_max[k]) {
                return Err(Error::Scenario("ego start/goal outside bounds".into()));
            }
        }
        if self.camera.width == 0
            || self.camera.height == 0
            || !(self.camera.fov_h_deg > 0.0 && self.camera.fov_h_deg < 180.0)
            || !(self.camera.fov_v_deg > 0.0 && self.camera.fov_v_deg < 180.0)
            || !(self.camera.max_range > 0.0)
            || !(self.camera.rate_hz > 0.0)
        {
            return Err(Error::Scenario("invalid camera model".into()));
        }
        if self.sensor_sigma < 0.0 {
            return Err(Error::Scenario("sensor_sigma must be non-negative".into()));
        }
        let mut ids: Vec<u32> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(Error::Scenario("duplicate agent ids".into()));
        }
        for a in &self.agents {
            if a.waypoints.is_empty() {
                return Err(Error::Scenario(format!("agent {} has no waypoints", a.id)));
            }
            if !a.waypoints.windows(2).all(|w| w[0].t < w[1].t) {
                return Err(Error::Scenario(format!(
                    "agent {} waypoint times must strictly increase",
                    a.id
                )));
            }
            if (0..3).any(|k| !(a.half_axes[k] > 0.0)) {
                return Err(Error::Scenario(format!("agent {} has bad half_axes", a.id)));
            }
        }
        if let Some(script) = &self.ego.script {
            if script.is_empty() {
                return Err(Error::Scenario("ego script must not be empty".into()));
            }
            if !script.windows(2).all(|w| w[0].t < w[1].t) {
                return Err(Error::Scenario("ego script times must strictly increase".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(s).map_err(|e| Error::Scenario(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Ground-truth states of all agents at `time`.
    pub fn ground_truth_states(&self, time: f64) -> Vec<GroundTruthAgent> {
        self.agents
            .iter()
            .map(|a| {
                let (position, velocity) = a.position_velocity(time);
                GroundTruthAgent {
                    id: a.id,
                    position,
                    velocity,
                    half_axes: a.half_axes,
                }
            })
            .collect()
    }

    /// Ground-truth collision judge: the ego sphere of `radius` at `pos`
    /// intersects a static (exact distance test) or an agent ellipsoid
    /// (half-axes inflated by `radius`, center containment).
    pub fn check_collision_gt(&self, pos: Vec3, radius: f64, time: f64) -> bool {
        if self.statics.iter().any(|s| s.distance(pos) <= radius) {
            return true;
        }
        self.agents.iter().any(|a| {
            let (c, _) = a.position_velocity(time);
            let d = pos - c;
            let q = (d.x / (a.half_axes.x + radius)).powi(2)
                + (d.y / (a.half_axes.y + radius)).powi(2)
                + (d.z / (a.half_axes.z + radius)).powi(2);
            q <= 1.0
        })
    }

    /// Random benchmark world: an empty `[-10,10] x [-10,10] x [0,3]` m box
    /// with `n_agents` ellipsoidal agents bouncing between the walls at
    /// constant speed, and the ego tasked to cross from `(-9,0,1.5)` to
    /// `(9,0,1.5)`.
    pub fn random_dynamic(n_agents: usize, speed: f64, sigma: f64, seed: u64) -> ScenarioConfig {
        let bounds_min = Vec3::new(-10.0, -10.0, 0.0);
        let bounds_max = Vec3::new(10.0, 10.0, 3.0);
        let ego_start = Vec3::new(-9.0, 0.0, 1.5);
        let horizon = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agents = Vec::with_capacity(n_agents);
        for id in 0..n_agents {
            let half_axes = Vec3::new(
                rng.gen_range(0.2..0.4),
                rng.gen_range(0.2..0.4),
                rng.gen_range(0.6..1.1),
            );
            let z = half_axes.z + 0.05;
            // Keep clear of the walls and of the ego start.
            let margin = half_axes.x.max(half_axes.y) + 0.3;
            let (lo, hi) = (-10.0 + margin, 10.0 - margin);
            let pos = loop {
                let p = Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), z);
                if (p.xy() - ego_start.xy()).norm() > 2.0 {
                    break p;
                }
            };
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let waypoints = bounce_schedule(pos, theta, speed, lo, hi, horizon + 5.0);
            agents.push(AgentScript {
                id: id as u32,
                half_axes,
                waypoints,
            });
        }
        ScenarioConfig {
            scenario_version: 1,
            name: format!("random_dynamic_n{n_agents}_s{seed}"),
            seed,
            bounds_min,
            bounds_max,
            horizon,
            sensor_sigma: sigma,
            ego: EgoConfig {
                start: ego_start,
                goal: Vec3::new(9.0, 0.0, 1.5),
                radius: 0.3,
                script: None,
                yaw: YawMode::FollowVelocity,
            },
            camera: CameraModel::default(),
            statics: Vec::new(),
            agents,
        }
    }
}

/// Piecewise-linear schedule of a point bouncing inside `[lo, hi]^2` at
/// constant speed and height, starting at `pos` heading `theta`.
fn bounce_schedule(pos: Vec3, theta: f64, speed: f64, lo: f64, hi: f64, duration: f64) -> Vec<Waypoint> {
    let mut wps = vec![Waypoint { t: 0.0, pos }];
    if speed <= 0.0 {
        return wps;
    }
    let mut p = pos;
    let mut dir = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let mut t = 0.0;
    while t < duration {
        // Time until the first wall along each moving axis.
        let mut hit = f64::INFINITY;
        for k in 0..2 {
            let v = dir[k] * speed;
            if v > 1e-12 {
                hit = hit.min((hi - p[k]) / v);
            } else if v < -1e-12 {
                hit = hit.min((lo - p[k]) / v);
            }
        }
        if !hit.is_finite() {
            break;
        }
        let leg = hit.min(duration - t).max(1e-3);
        p += dir * speed * leg;
        t += leg;
        wps.push(Waypoint { t, pos: p });
        // Reflect on whichever walls were (numerically) reached.
        for k in 0..2 {
            if p[k] >= hi - 1e-9 || p[k] <= lo + 1e-9 {
                dir[k] = -dir[k];
            }
        }
    }
    wps
}

/// Renders the scene into a depth image from `pose` at simulated `time`.
///
/// Depth is the camera-frame z of the first surface along each pixel ray;
/// returns beyond the camera's `max_range` become no-return (0.0). With
/// `sensor_sigma > 0`, zero-mean Gaussian noise is added to returned depths,
/// seeded by the scenario seed and `time` only.
pub fn render_depth(scene: &ScenarioConfig, time: f64, pose: &CameraPose) -> DepthImage {
    let intr = scene.camera.intrinsics();
    let max_range = scene.camera.max_range;
    let width = intr.width;
    let height = intr.height;
    let mut img = DepthImage::new(width, height, *pose, time);
    let agent_centers: Vec<Vec3> = scene
        .agents
        .iter()
        .map(|a| a.position_velocity(time).0)
        .collect();
    let o = pose.translation;
    let base_seed = splitmix64(scene.seed ^ time.to_bits().rotate_left(17));

    let rows: Vec<(usize, &mut [f64])> = img.depth.chunks_mut(width).enumerate().collect();
    rows.into_par_iter().for_each(|(iy, row)| {
        let mut rng = (scene.sensor_sigma > 0.0)
            .then(|| ChaCha8Rng::seed_from_u64(splitmix64(base_seed.wrapping_add(iy as u64))));
        for (ix, out) in row.iter_mut().enumerate() {
            // Unnormalized camera ray with unit z: the parameter s equals the
            // camera-frame z (plane depth) of the hit point.
            let dir_cam = Vec3::new(
                (ix as f64 - intr.cx) / intr.fx,
                (iy as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let d = pose.rotation * dir_cam;
            let mut best = f64::INFINITY;
            for s in &scene.statics {
                if let Some(t) = s.raycast(o, d) {
                    best = best.min(t);
                }
            }
            for (a, &c) in scene.agents.iter().zip(&agent_centers) {
                if let Some(t) = a.raycast_at(c, o, d) {
                    best = best.min(t);
                }
            }
            if best <= max_range {
                let mut depth = best;
                if let Some(rng) = rng.as_mut() {
                    depth += scene.sensor_sigma * sample_standard_normal(rng);
                    depth = depth.max(1e-3);
                }
                *out = depth;
            }
        }
    });
    img
}

/// Box-Muller standard normal draw.
fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            let u2: f64 = rng.gen::<f64>();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// SplitMix64 hash step, used to derive independent per-row noise streams.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
