//! Trajectory objective over B-spline control points with analytic gradients.
//!
//! The total cost blends smoothness (squared acceleration and jerk control
//! points), dynamical feasibility (cubic hinge on speed and acceleration
//! bounds), static clearance (half-space anchors generated from grid
//! collisions, no distance field required), and dynamic clearance (cubic
//! hinge on the predicted obstacle ellipsoids). Every term exposes its exact
//! gradient so the optimizer never needs finite differences.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::env_model::OccupancyGrid;
use crate::geom::{Mat3, Vec3};

/// Term weights. The collision weights are doubled by the outer loop when a
/// refinement round still collides.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub smooth: f64,
    pub feas: f64,
    pub coll: f64,
    pub dynamic: f64,
}

impl Default for Weights {
    fn default() -> Self {
        // The smoothness sums run over un-normalized acceleration and jerk
        // control points, so at the default 0.1 s knot spacing J_s sits in
        // the hundreds-to-thousands for an ordinary dodge while the clearance
        // hinges peak near 1. The clearance weights must beat J_s for
        // sub-meter violations or the optimizer smooths straight through
        // obstacles, and the feasibility weight must stay within an order of
        // magnitude of them or dodges get bought with impossible
        // accelerations that poison the next replan's boundary conditions.
        Self {
            smooth: 1.0,
            feas: 1.0e4,
            coll: 1.0e5,
            dynamic: 1.0e5,
        }
    }
}

/// A half-space constraint attached to one control point: the signed
/// distance `(Q - point) · dir` must stay non-negative.
#[derive(Debug, Clone, Copy)]
pub struct AnchorPair {
    pub ctrl_index: usize,
    pub point: Vec3,
    /// Unit direction from the obstacle toward free space.
    pub dir: Vec3,
}

/// Constant-velocity obstacle in quadratic form.
#[derive(Debug, Clone)]
pub struct DynObstacle {
    /// Center at the trajectory start time.
    pub center: Vec3,
    pub vel: Vec3,
    pub theta: Mat3,
}

/// Inputs that stay fixed during one optimization round.
#[derive(Debug, Clone)]
pub struct CostParams {
    pub weights: Weights,
    pub v_max: f64,
    pub a_max: f64,
    /// Knot spacing of the spline being optimized.
    pub dt: f64,
    /// Control points pinned at each end.
    pub n_fixed: usize,
    /// Axis-aligned box the curve must stay inside (already shrunk by any
    /// safety margin). Without it nothing stops the optimizer from buying
    /// clearance by dipping below the floor or past a wall — positions the
    /// validity check rejects but no other term can see.
    pub bounds: Option<(Vec3, Vec3)>,
}

/// Cost value broken down by term (already weighted).
#[derive(Debug, Clone, Copy, Default)]
pub struct CostReport {
    pub total: f64,
    pub smooth: f64,
    pub feas: f64,
    pub coll: f64,
    pub dynamic: f64,
}

#[inline]
fn hinge_cubed(x: f64) -> (f64, f64) {
    // (g(x), g'(x)) with g(x) = max(x, 0)^3.
    let h = x.max(0.0);
    (h * h * h, 3.0 * h * h)
}

/// Evaluates the full objective and writes the gradient (zeroed on the fixed
/// control points at both ends).
pub fn cost_and_grad(
    control: &[Vec3],
    anchors: &[AnchorPair],
    obstacles: &[DynObstacle],
    p: &CostParams,
    grad: &mut [Vec3],
) -> CostReport {
    let n = control.len();
    debug_assert_eq!(grad.len(), n);
    grad.iter_mut().for_each(|g| *g = Vec3::zeros());
    let dt = p.dt;
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    let w = &p.weights;

    // Smoothness: squared acceleration and jerk control points.
    let mut j_s = 0.0;
    for i in 0..n.saturating_sub(2) {
        let a = (control[i + 2] - 2.0 * control[i + 1] + control[i]) / dt2;
        j_s += a.norm_squared();
        let c = 2.0 * w.smooth / dt2;
        grad[i] += a * c;
        grad[i + 1] -= a * (2.0 * c);
        grad[i + 2] += a * c;
    }
    for i in 0..n.saturating_sub(3) {
        let j = (control[i + 3] - 3.0 * control[i + 2] + 3.0 * control[i + 1] - control[i]) / dt3;
        j_s += j.norm_squared();
        let c = 2.0 * w.smooth / dt3;
        grad[i] -= j * c;
        grad[i + 1] += j * (3.0 * c);
        grad[i + 2] -= j * (3.0 * c);
        grad[i + 3] += j * c;
    }

    // Feasibility: hinge on ‖V_i‖² and ‖A_i‖² bounds.
    let mut j_f = 0.0;
    let v2 = p.v_max * p.v_max;
    let a2 = p.a_max * p.a_max;
    for i in 0..n - 1 {
        let v = (control[i + 1] - control[i]) / dt;
        let (val, slope) = hinge_cubed(v.norm_squared() - v2);
        j_f += val;
        if slope > 0.0 {
            let g = v * (2.0 * slope * w.feas / dt);
            grad[i + 1] += g;
            grad[i] -= g;
        }
    }
    for i in 0..n.saturating_sub(2) {
        let a = (control[i + 2] - 2.0 * control[i + 1] + control[i]) / dt2;
        let (val, slope) = hinge_cubed(a.norm_squared() - a2);
        j_f += val;
        if slope > 0.0 {
            let g = a * (2.0 * slope * w.feas / dt2);
            grad[i] += g;
            grad[i + 1] -= 2.0 * g;
            grad[i + 2] += g;
        }
    }

    // Static clearance: push control points to the free side of each anchor.
    let mut j_c = 0.0;
    for an in anchors {
        let d = (control[an.ctrl_index] - an.point).dot(&an.dir);
        let (val, slope) = hinge_cubed(-d);
        j_c += val;
        if slope > 0.0 {
            grad[an.ctrl_index] -= an.dir * (slope * w.coll);
        }
    }

    // Dynamic clearance against predicted ellipsoid positions: control point
    // i is matched with its Greville abscissa (i−1)·dt — the curve parameter
    // where its basis function peaks — so the hinge pushes against the
    // obstacle where it actually is when the vehicle passes, not a knot
    // interval early.
    let mut j_d = 0.0;
    let free = p.n_fixed..n - p.n_fixed;
    for i in free {
        let t_i = (i as f64 - 1.0) * dt;
        for ob in obstacles {
            let x = control[i] - ob.center - ob.vel * t_i;
            let q = (x.transpose() * ob.theta * x)[(0, 0)];
            let (val, slope) = hinge_cubed(1.0 - q);
            j_d += val;
            if slope > 0.0 {
                grad[i] -= (ob.theta * x) * (2.0 * slope * w.dynamic);
            }
        }
    }

    // Freeze both ends.
    for i in 0..p.n_fixed.min(n) {
        grad[i] = Vec3::zeros();
        grad[n - 1 - i] = Vec3::zeros();
    }

    let report = CostReport {
        smooth: w.smooth * j_s,
        feas: w.feas * j_f,
        coll: w.coll * j_c,
        dynamic: w.dynamic * j_d,
        total: w.smooth * j_s + w.feas * j_f + w.coll * j_c + w.dynamic * j_d,
    };
    report
}

// ---------------------------------------------------------------------------
// Anchor construction
// ---------------------------------------------------------------------------

struct AStarEntry {
    f: f64,
    seq: u64,
    cell: [usize; 3],
}

impl PartialEq for AStarEntry {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.seq == other.seq
    }
}
impl Eq for AStarEntry {}
impl PartialOrd for AStarEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for AStarEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// 6-connected A* between two grid cells through non-occupied space.
/// Returns the world-space polyline of cell centers, or `None`.
fn grid_guide(
    grid: &OccupancyGrid,
    inflate: usize,
    from: [usize; 3],
    to: [usize; 3],
) -> Option<Vec<Vec3>> {
    let free = |c: [usize; 3]| !grid.query_occupied(grid.center_of(c), inflate);
    if !free(to) {
        return None;
    }
    let h = |c: [usize; 3]| {
        let d = |a: usize, b: usize| a.abs_diff(b) as f64;
        (d(c[0], to[0]) + d(c[1], to[1]) + d(c[2], to[2])) * grid.resolution
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut best: HashMap<[usize; 3], f64> = HashMap::new();
    let mut came: HashMap<[usize; 3], [usize; 3]> = HashMap::new();
    best.insert(from, 0.0);
    heap.push(AStarEntry {
        f: h(from),
        seq,
        cell: from,
    });
    let mut pops = 0usize;
    while let Some(e) = heap.pop() {
        pops += 1;
        if pops > 60_000 {
            return None;
        }
        if e.cell == to {
            let mut path = vec![grid.center_of(to)];
            let mut cur = to;
            while let Some(&prev) = came.get(&cur) {
                path.push(grid.center_of(prev));
                cur = prev;
            }
            path.reverse();
            return Some(path);
        }
        let g_here = best[&e.cell];
        const STEPS: [[i64; 3]; 6] = [
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [0, 0, 1],
            [0, 0, -1],
        ];
        for s in STEPS {
            let mut nc = [0usize; 3];
            let mut ok = true;
            for k in 0..3 {
                let v = e.cell[k] as i64 + s[k];
                if v < 0 || v >= grid.dims[k] as i64 {
                    ok = false;
                    break;
                }
                nc[k] = v as usize;
            }
            if !ok || !free(nc) {
                continue;
            }
            let g = g_here + grid.resolution;
            if best.get(&nc).is_none_or(|&b| g < b - 1e-12) {
                best.insert(nc, g);
                came.insert(nc, e.cell);
                seq += 1;
                heap.push(AStarEntry {
                    f: g + h(nc),
                    seq,
                    cell: nc,
                });
            }
        }
    }
    None
}

/// Point at `frac` of the arclength along a polyline.
fn along(path: &[Vec3], frac: f64) -> Vec3 {
    if path.len() < 2 {
        return path.first().copied().unwrap_or_else(Vec3::zeros);
    }
    let total: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if total < 1e-12 {
        return path[0];
    }
    let mut remaining = frac.clamp(0.0, 1.0) * total;
    for w in path.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if remaining <= seg {
            return w[0] + (w[1] - w[0]) * (remaining / seg.max(1e-12));
        }
        remaining -= seg;
    }
    *path.last().unwrap()
}

/// Builds anchor pairs for every run of colliding free control points. Each
/// colliding point is paired with a surface exit point found by marching
/// toward a detour path computed on the grid, displaced one extra cell into
/// free space so the optimum sits strictly clear of the inflated obstacle.
pub fn build_anchors(
    control: &[Vec3],
    n_fixed: usize,
    grid: &OccupancyGrid,
    inflate: usize,
) -> Vec<AnchorPair> {
    let n = control.len();
    let colliding: Vec<bool> = control
        .iter()
        .map(|q| grid.query_occupied(*q, inflate))
        .collect();
    let mut anchors = Vec::new();
    let mut i = n_fixed;
    while i < n - n_fixed {
        if !colliding[i] {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n - n_fixed && colliding[i] {
            i += 1;
        }
        let run_end = i; // exclusive
        // Nearest collision-free control points bracketing the run.
        let before = (0..run_start).rev().find(|&k| !colliding[k]);
        let after = (run_end..n).find(|&k| !colliding[k]);
        let (Some(b), Some(a)) = (before, after) else {
            continue;
        };
        let guide = match (grid.cell_of(control[b]), grid.cell_of(control[a])) {
            (Some(cb), Some(ca)) => grid_guide(grid, inflate, cb, ca),
            _ => None,
        };
        for k in run_start..run_end {
            let frac = (k - b) as f64 / (a - b) as f64;
            let target = match &guide {
                Some(path) => along(path, frac),
                // Fallback: aim at the bracketing free points directly.
                None => control[b] + (control[a] - control[b]) * frac,
            };
            let to_target = target - control[k];
            let dist = to_target.norm();
            if dist < 1e-9 {
                continue;
            }
            let dir = to_target / dist;
            // March to the first free sample: the inflated surface exit.
            let step = grid.resolution / 4.0;
            let mut exit = target;
            let mut s = step;
            while s < dist {
                let cand = control[k] + dir * s;
                if !grid.query_occupied(cand, inflate) {
                    exit = cand;
                    break;
                }
                s += step;
            }
            anchors.push(AnchorPair {
                ctrl_index: k,
                point: exit + dir * grid.resolution,
                dir,
            });
        }
    }
    anchors
}
