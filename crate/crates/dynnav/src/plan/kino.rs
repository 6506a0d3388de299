//! Kinodynamic front-end search.
//!
//! A* over motion primitives of a double integrator: each expansion applies a
//! constant acceleration from a small axis-aligned set for a fixed duration,
//! collision-checked against the environment snapshot *at the matching
//! prediction time*, so moving obstacles are avoided in space-time rather
//! than by their current footprint. Near the goal the search switches to the
//! closed-form boundary-value solution, which both terminates the search
//! exactly on the goal and keeps the cost near-optimal.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::env_model::EnvironmentSnapshot;
use crate::geom::Vec3;
use crate::plan::obvp;
use crate::{Error, Result};

/// Position and velocity of the vehicle.
#[derive(Debug, Clone, Copy)]
pub struct MotionState {
    pub pos: Vec3,
    pub vel: Vec3,
}

/// Search tuning knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Speed cap, m/s.
    pub v_max: f64,
    /// Acceleration magnitude of the primitive set, m/s².
    pub a_max: f64,
    /// Weight of elapsed time against control effort.
    pub rho: f64,
    /// Primitive durations, s.
    pub durations: Vec<f64>,
    /// State-space pruning bin sizes.
    pub pos_bin: f64,
    pub vel_bin: f64,
    /// Collision check spacing along primitives, s.
    pub check_dt: f64,
    /// Distance from the goal at which the analytic connection is attempted.
    pub expand_radius: f64,
    /// Node budget before giving up.
    pub max_nodes: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            a_max: 4.0,
            rho: 10.0,
            durations: vec![0.4, 0.8],
            pos_bin: 0.25,
            vel_bin: 0.5,
            check_dt: 0.1,
            expand_radius: 5.0,
            max_nodes: 40_000,
        }
    }
}

/// Per-segment control law of the search result.
#[derive(Debug, Clone, Copy)]
pub enum ControlLaw {
    /// Constant acceleration.
    Constant(Vec3),
    /// `u(s) = k (duration - s)`: the analytic goal connection.
    Tapered { k: Vec3 },
}

/// One piece of the piecewise-polynomial search trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    /// Start time relative to the search origin, s.
    pub t0: f64,
    pub duration: f64,
    pub p0: Vec3,
    pub v0: Vec3,
    pub law: ControlLaw,
}

impl Segment {
    /// State `s` seconds into the segment.
    pub fn state_at(&self, s: f64) -> (Vec3, Vec3) {
        match self.law {
            ControlLaw::Constant(u) => (
                self.p0 + self.v0 * s + u * (s * s / 2.0),
                self.v0 + u * s,
            ),
            ControlLaw::Tapered { k } => {
                let t = self.duration;
                (
                    self.p0 + self.v0 * s + k * (t * s * s / 2.0 - s * s * s / 6.0),
                    self.v0 + k * (t * s - s * s / 2.0),
                )
            }
        }
    }

    pub fn acceleration_at(&self, s: f64) -> Vec3 {
        match self.law {
            ControlLaw::Constant(u) => u,
            ControlLaw::Tapered { k } => k * (self.duration - s),
        }
    }
}

/// Output of the front-end search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub segments: Vec<Segment>,
    /// Accumulated `∫‖u‖² + ρ` cost.
    pub cost: f64,
    /// Whether the path ends with the analytic connection (it does whenever
    /// the goal was reached; kept for diagnostics).
    pub via_analytic: bool,
    /// Number of node expansions performed.
    pub expansions: usize,
}

impl SearchResult {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t0 + s.duration)
    }

    /// State at `tau` seconds after the search origin (clamped to the ends).
    pub fn state_at(&self, tau: f64) -> (Vec3, Vec3) {
        let Some(first) = self.segments.first() else {
            return (Vec3::zeros(), Vec3::zeros());
        };
        if tau <= first.t0 {
            return (first.p0, first.v0);
        }
        for seg in &self.segments {
            if tau <= seg.t0 + seg.duration {
                return seg.state_at(tau - seg.t0);
            }
        }
        let last = self.segments.last().unwrap();
        last.state_at(last.duration)
    }

    pub fn end_state(&self) -> MotionState {
        let (pos, vel) = self.state_at(self.duration());
        MotionState { pos, vel }
    }

    /// Uniformly spaced `(tau, position)` samples including both endpoints.
    pub fn sample(&self, dt: f64) -> Vec<(f64, Vec3)> {
        let dur = self.duration();
        let n = (dur / dt).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let t = dur * i as f64 / n as f64;
                (t, self.state_at(t).0)
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
struct Node {
    state: MotionState,
    t: f64,
    g: f64,
    parent: i32,
    /// Primitive that led here (unset for the root).
    edge: Option<(Vec3, f64)>,
}

struct HeapEntry {
    f: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the smallest f first,
        // ties broken toward the earlier insertion for determinism.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn bin_key(s: &MotionState, p: &SearchParams) -> ([i32; 3], [i32; 3]) {
    let q = |x: f64, b: f64| (x / b).floor() as i32;
    (
        [q(s.pos.x, p.pos_bin), q(s.pos.y, p.pos_bin), q(s.pos.z, p.pos_bin)],
        [q(s.vel.x, p.vel_bin), q(s.vel.y, p.vel_bin), q(s.vel.z, p.vel_bin)],
    )
}

/// Validates the analytic connection from `(p, v)` at time `t_base`: speed
/// cap along the arc plus time-synced collision checks. Returns the solution
/// when it is flyable.
fn try_analytic(
    state: &MotionState,
    t_base: f64,
    goal: Vec3,
    env: &EnvironmentSnapshot,
    p: &SearchParams,
) -> Option<obvp::ObvpSolution> {
    let sol = obvp::solve(state.pos, state.vel, goal, p.rho)?;
    let dt = p.check_dt.min(sol.duration / 10.0).max(1e-3);
    let n = (sol.duration / dt).ceil() as usize;
    for i in 0..=n {
        let s = sol.duration * i as f64 / n as f64;
        if sol.velocity(s).norm() > p.v_max + 1e-9 {
            return None;
        }
        if !env.valid_check(sol.position(s), t_base + s) {
            return None;
        }
    }
    Some(sol)
}

fn reconstruct(
    arena: &[Node],
    mut idx: usize,
    tail: Option<obvp::ObvpSolution>,
    cost: f64,
    expansions: usize,
) -> SearchResult {
    let mut rev = Vec::new();
    while let Some((u, dur)) = arena[idx].edge {
        let parent = arena[idx].parent as usize;
        rev.push(Segment {
            t0: arena[parent].t,
            duration: dur,
            p0: arena[parent].state.pos,
            v0: arena[parent].state.vel,
            law: ControlLaw::Constant(u),
        });
        idx = parent;
    }
    rev.reverse();
    let mut segments = rev;
    let via_analytic = tail.is_some();
    if let Some(sol) = tail {
        let t0 = segments.last().map_or(0.0, |s| s.t0 + s.duration);
        segments.push(Segment {
            t0,
            duration: sol.duration,
            p0: sol.p0,
            v0: sol.v0,
            law: ControlLaw::Tapered { k: sol.k },
        });
    }
    SearchResult {
        segments,
        cost,
        via_analytic,
        expansions,
    }
}

/// Searches for a dynamically feasible trajectory from `start` to `goal`
/// against the snapshot. Collision checks use the time along the candidate
/// trajectory as the obstacle prediction time.
pub fn search(
    start: MotionState,
    goal: Vec3,
    env: &EnvironmentSnapshot,
    p: &SearchParams,
) -> Result<SearchResult> {
    if !env.valid_check(start.pos, 0.0) {
        return Err(Error::StartInCollision);
    }
    // Degenerate: standing on the goal.
    if (start.pos - goal).norm() < 1e-9 && start.vel.norm() < 1e-9 {
        return Ok(SearchResult {
            segments: vec![Segment {
                t0: 0.0,
                duration: 0.0,
                p0: start.pos,
                v0: start.vel,
                law: ControlLaw::Constant(Vec3::zeros()),
            }],
            cost: 0.0,
            via_analytic: false,
            expansions: 0,
        });
    }

    let mut arena = vec![Node {
        state: start,
        t: 0.0,
        g: 0.0,
        parent: -1,
        edge: None,
    }];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(HeapEntry {
        f: obvp::heuristic(start.pos, start.vel, goal, p.rho),
        seq,
        idx: 0,
    });
    let mut best_g: HashMap<([i32; 3], [i32; 3]), f64> = HashMap::new();
    best_g.insert(bin_key(&start, p), 0.0);
    let mut expansions = 0usize;

    let accels: Vec<Vec3> = {
        let mut v = Vec::with_capacity(27);
        for &x in &[-p.a_max, 0.0, p.a_max] {
            for &y in &[-p.a_max, 0.0, p.a_max] {
                for &z in &[-p.a_max, 0.0, p.a_max] {
                    v.push(Vec3::new(x, y, z));
                }
            }
        }
        v
    };

    while let Some(entry) = heap.pop() {
        let node = arena[entry.idx];
        // Lazy deletion: a better route to this bin has been found since.
        if node.g > *best_g.get(&bin_key(&node.state, p)).unwrap_or(&f64::INFINITY) + 1e-9 {
            continue;
        }
        if (node.state.pos - goal).norm() <= p.expand_radius {
            if let Some(sol) = try_analytic(&node.state, node.t, goal, env, p) {
                let total = node.g + sol.cost;
                return Ok(reconstruct(&arena, entry.idx, Some(sol), total, expansions));
            }
            if (node.state.pos - goal).norm() < 1e-9 && node.state.vel.norm() < 1e-9 {
                return Ok(reconstruct(&arena, entry.idx, None, node.g, expansions));
            }
        }
        expansions += 1;
        if expansions > p.max_nodes {
            return Err(Error::Infeasible(format!(
                "search exhausted after {expansions} expansions"
            )));
        }
        for &u in &accels {
            for &dur in &p.durations {
                let vel = node.state.vel + u * dur;
                if vel.norm() > p.v_max + 1e-9 {
                    continue;
                }
                let pos = node.state.pos + node.state.vel * dur + u * (dur * dur / 2.0);
                // Time-synced collision checks along the primitive.
                let steps = (dur / p.check_dt).round().max(1.0) as usize;
                let mut blocked = false;
                for m in 1..=steps {
                    let s = dur * m as f64 / steps as f64;
                    let ps = node.state.pos + node.state.vel * s + u * (s * s / 2.0);
                    if !env.valid_check(ps, node.t + s) {
                        blocked = true;
                        break;
                    }
                }
                if blocked {
                    continue;
                }
                let succ = MotionState { pos, vel };
                let g = node.g + (u.norm_squared() + p.rho) * dur;
                let key = bin_key(&succ, p);
                if *best_g.get(&key).unwrap_or(&f64::INFINITY) <= g + 1e-9 {
                    continue;
                }
                best_g.insert(key, g);
                arena.push(Node {
                    state: succ,
                    t: node.t + dur,
                    g,
                    parent: entry.idx as i32,
                    edge: Some((u, dur)),
                });
                seq += 1;
                heap.push(HeapEntry {
                    f: g + obvp::heuristic(pos, vel, goal, p.rho),
                    seq,
                    idx: arena.len() - 1,
                });
            }
        }
    }
    Err(Error::Infeasible("search space exhausted without reaching the goal".into()))
}
