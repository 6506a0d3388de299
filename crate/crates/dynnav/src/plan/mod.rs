//! Hierarchical trajectory planning.
//!
//! A kinodynamic front-end search finds a feasible piecewise-polynomial
//! trajectory through the environment snapshot; a B-spline back-end then
//! fits and refines it with an unconstrained optimizer, trading smoothness
//! against feasibility margins and clearance from both static cells and
//! predicted moving obstacles. The refined spline is what the vehicle flies.

pub mod bspline;
pub mod cost;
pub mod kino;
pub mod lbfgs;
pub mod obvp;

pub use bspline::{fit_initial, with_endpoints, BSpline};
pub use cost::{build_anchors, cost_and_grad, AnchorPair, CostParams, CostReport, DynObstacle, Weights};
pub use kino::{search, MotionState, SearchParams, SearchResult};
pub use lbfgs::{minimize, LbfgsParams};

use crate::env_model::EnvironmentSnapshot;
use crate::geom::Vec3;
use crate::{Error, Result};

/// Knobs for the full planning stack.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub search: SearchParams,
    /// Control points of the refined spline.
    pub n_ctrl: usize,
    pub weights: Weights,
    pub lbfgs: LbfgsParams,
    /// Refinement rounds before declaring the problem infeasible.
    pub max_outer: usize,
    /// Splines are never built shorter than this, s.
    pub min_duration: f64,
    /// Spacing of the final dense collision check, s.
    pub check_dt: f64,
    /// Extra obstacle inflation (m) seen only by the refinement objective.
    /// The penalty's zero-cost region then clears the collision check's
    /// surface by a real distance; without it the cubic hinge's gradient
    /// vanishes exactly where the check flips, and the optimizer stalls a
    /// hair inside the obstacle. Kept modest: every extra centimeter here is
    /// clearance the vehicle must buy with real acceleration, and a demand
    /// beyond the acceleration cap turns near-misses into infeasibilities.
    pub opt_margin: f64,
    /// Knot spacing of the refined spline, s. With `n_ctrl` points the
    /// refinement covers a receding window of `(n_ctrl - 3) * ctrl_dt`
    /// seconds of the searched path; the remainder is guidance for the next
    /// replan. Keeping the spacing fixed (rather than stretching it over the
    /// whole path) keeps the committed boundary spans short, so the
    /// optimizer can still bend the trajectory fractions of a second ahead.
    pub ctrl_dt: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            search: SearchParams::default(),
            n_ctrl: 20,
            weights: Weights::default(),
            lbfgs: LbfgsParams::default(),
            max_outer: 6,
            min_duration: 0.4,
            check_dt: 0.05,
            opt_margin: 0.1,
            ctrl_dt: 0.1,
        }
    }
}

/// A flyable refined trajectory. Times are relative to the snapshot stamp.
#[derive(Debug, Clone)]
pub struct TrajectoryPlan {
    pub spline: BSpline,
    /// Cost reported by the front-end search.
    pub search_cost: f64,
    /// Final objective breakdown.
    pub report: CostReport,
    /// Refinement rounds actually used.
    pub outer_iterations: usize,
    /// Node expansions in the front-end search.
    pub search_expansions: usize,
}

impl TrajectoryPlan {
    pub fn duration(&self) -> f64 {
        self.spline.duration()
    }
}

fn pack(control: &[Vec3], n_fixed: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * (control.len() - 2 * n_fixed));
    for q in &control[n_fixed..control.len() - n_fixed] {
        x.extend_from_slice(&[q.x, q.y, q.z]);
    }
    x
}

fn unpack(x: &[f64], control: &mut [Vec3], n_fixed: usize) {
    for (k, q) in control[n_fixed..].iter_mut().take(x.len() / 3).enumerate() {
        *q = Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
    }
}

/// Dense space-time collision check of a spline against the snapshot.
/// Returns the first violating time, if any.
fn first_violation(spline: &BSpline, env: &EnvironmentSnapshot, check_dt: f64) -> Option<f64> {
    let dur = spline.duration();
    let n = (dur / check_dt).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = dur * i as f64 / n as f64;
        if !env.valid_check(spline.position(t), t) {
            return Some(t);
        }
    }
    None
}

/// Plans from `(start_pos, start_vel, start_acc)` to `goal` against the
/// snapshot. Times are relative to the snapshot stamp; the caller executes
/// the spline starting there.
pub fn plan_trajectory(
    start_pos: Vec3,
    start_vel: Vec3,
    start_acc: Vec3,
    goal: Vec3,
    env: &EnvironmentSnapshot,
    params: &PlannerParams,
) -> Result<TrajectoryPlan> {
    let start = MotionState {
        pos: start_pos,
        vel: start_vel,
    };
    let coarse = kino::search(start, goal, env, &params.search)?;
    let duration = coarse.duration().max(params.min_duration);
    let n_ctrl = params.n_ctrl.max(8);
    // Refine a receding window of the searched path: short paths are covered
    // whole (the knots squeeze together), long ones are truncated at the
    // window so the knot spacing never stretches.
    let dt = params.ctrl_dt.min(duration / (n_ctrl - 3) as f64);
    let horizon = duration.min((n_ctrl - 3) as f64 * dt);

    // Fit the spline to the search result (clamped past its end, which only
    // matters when the duration floor kicked in).
    let n_samples = 2 * n_ctrl;
    let samples: Vec<(f64, Vec3)> = (0..=n_samples)
        .map(|i| {
            let t = horizon * i as f64 / n_samples as f64;
            (t, coarse.state_at(t).0)
        })
        .collect();
    let (end_pos, end_vel) = coarse.state_at(horizon);
    // The boundary derivatives become frozen control points, so an infeasible
    // start state would plant an unremovable feasibility violation whose
    // enormous hinge gradient on the first free control point derails the
    // whole optimization. Executed plans respect the caps only softly;
    // saturate here so one overshoot cannot compound across replans.
    let clamp = |v: Vec3, cap: f64| {
        let n = v.norm();
        if n > cap {
            v * (cap / n)
        } else {
            v
        }
    };
    let start_bd = (
        start_pos,
        clamp(start_vel, params.search.v_max),
        clamp(start_acc, params.search.a_max),
    );
    let end_bd = (end_pos, clamp(end_vel, params.search.v_max), Vec3::zeros());
    let fitted = bspline::fit_initial(&samples, start_bd, end_bd, n_ctrl, dt)?;

    // The objective sees each ellipsoid grown by `opt_margin` beyond what
    // the collision check uses, so "zero penalty" means "clear with room".
    let obstacles: Vec<DynObstacle> = env
        .ellipsoids
        .iter()
        .map(|e| {
            let grow = e.inflation + params.opt_margin;
            let d = crate::geom::Mat3::from_diagonal(&Vec3::new(
                1.0 / (e.half_axes.x + grow).powi(2),
                1.0 / (e.half_axes.y + grow).powi(2),
                1.0 / (e.half_axes.z + grow).powi(2),
            ));
            DynObstacle {
                center: e.center,
                vel: e.velocity,
                theta: e.rotation.transpose() * d * e.rotation,
            }
        })
        .collect();

    // The searched path was collision-checked, so its fit usually passes the
    // dense check on its own; remember that, so a refinement that talks
    // itself into a corner cannot abort an episode the fit could fly.
    let fit_ok = first_violation(&fitted, env, params.check_dt).is_none();

    let n_fixed = bspline::DEGREE;
    let mut control = fitted.control.clone();
    let mut weights = params.weights.clone();
    let mut anchors = build_anchors(&control, n_fixed, &env.grid, env.inflate_cells);
    let mut last_report = CostReport::default();

    for outer in 0..params.max_outer {
        let cp = CostParams {
            weights: weights.clone(),
            v_max: params.search.v_max,
            a_max: params.search.a_max,
            dt,
            n_fixed,
        };
        let template = control.clone();
        let x0 = pack(&control, n_fixed);
        let mut grad_buf = vec![Vec3::zeros(); control.len()];
        let mut trial = template.clone();
        let outcome = lbfgs::minimize(
            |x, g| {
                unpack(x, &mut trial, n_fixed);
                let rep = cost_and_grad(&trial, &anchors, &obstacles, &cp, &mut grad_buf);
                for (k, gq) in grad_buf[n_fixed..trial.len() - n_fixed].iter().enumerate() {
                    g[3 * k] = gq.x;
                    g[3 * k + 1] = gq.y;
                    g[3 * k + 2] = gq.z;
                }
                rep.total
            },
            x0,
            &params.lbfgs,
        );
        unpack(&outcome.x, &mut control, n_fixed);
        let spline = BSpline::new(control.clone(), dt)?;
        let mut scratch = vec![Vec3::zeros(); control.len()];
        let cp_report = CostParams {
            weights: weights.clone(),
            ..cp
        };
        last_report = cost_and_grad(&control, &anchors, &obstacles, &cp_report, &mut scratch);

        let viol = first_violation(&spline, env, params.check_dt);
        if viol.is_none() {
            return Ok(TrajectoryPlan {
                spline,
                search_cost: coarse.cost,
                report: last_report,
                outer_iterations: outer + 1,
                search_expansions: coarse.expansions,
            });
        }
        if std::env::var("DYNNAV_DEBUG_PLAN").is_ok() {
            let tv = viol.unwrap();
            let p = spline.position(tv);
            let kind = if env.grid.cell_of(p).is_none() {
                "oob".to_string()
            } else if env.grid.query_occupied(p, env.inflate_cells) {
                "grid".to_string()
            } else {
                let qs: Vec<String> = env
                    .ellipsoids
                    .iter()
                    .filter(|e| e.contains(p, tv))
                    .map(|e| format!("id{} q={:.3}", e.track_id, e.quadratic_form(p, tv)))
                    .collect();
                format!("dyn[{}]", qs.join(", "))
            };
            eprintln!(
                "[refine] round {outer}: viol at t={tv:.2}/{horizon:.2} (fixed-end from {:.2}) pos=({:.2},{:.2},{:.2}) {kind} smooth={:.1} feas={:.1} coll={:.1} dyn={:.1} iters={} conv={}",
                horizon - 3.0 * dt,
                p.x,
                p.y,
                p.z,
                last_report.smooth,
                last_report.feas,
                last_report.coll,
                last_report.dynamic,
                outcome.iterations,
                outcome.converged,
            );
        }
        // Still colliding: raise the clearance weights and collect fresh
        // anchors around the current shape.
        weights.coll *= 2.0;
        weights.dynamic *= 2.0;
        anchors.extend(build_anchors(&control, n_fixed, &env.grid, env.inflate_cells));
    }
    if fit_ok {
        // Every refinement round failed the check, but the unrefined fit
        // passes it. Fly the rougher curve instead of aborting.
        let mut scratch = vec![Vec3::zeros(); fitted.control.len()];
        let cp = CostParams {
            weights: params.weights.clone(),
            v_max: params.search.v_max,
            a_max: params.search.a_max,
            dt,
            n_fixed,
        };
        let report = cost_and_grad(&fitted.control, &[], &obstacles, &cp, &mut scratch);
        return Ok(TrajectoryPlan {
            spline: fitted,
            search_cost: coarse.cost,
            report,
            outer_iterations: params.max_outer,
            search_expansions: coarse.expansions,
        });
    }
    Err(Error::Infeasible(format!(
        "refinement failed after {} rounds (residual cost {:.3})",
        params.max_outer, last_report.total
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{MappingParams, MovingEllipsoid, OccupancyGrid};
    use crate::geom::Mat3;
    use approx::assert_relative_eq;

    fn empty_env() -> EnvironmentSnapshot {
        EnvironmentSnapshot {
            stamp: 0.0,
            grid: OccupancyGrid::from_bounds(
                Vec3::new(-12.0, -12.0, 0.0),
                Vec3::new(12.0, 12.0, 4.0),
                &MappingParams::default(),
            ),
            ellipsoids: vec![],
            inflate_cells: 3,
            prediction_horizon: 3.0,
        }
    }

    /// A plan is one receding window: it must start exactly at the request,
    /// stay collision-free and under the speed cap throughout, actually go
    /// somewhere, and never outlast the window. Whether "somewhere" is toward
    /// the goal depends on the scene (a wall detour may retreat first), so
    /// goal progress is asserted by the tests that expect a direct shot.
    fn assert_plan_sane(plan: &TrajectoryPlan, start: Vec3, env: &EnvironmentSnapshot, params: &PlannerParams) {
        let sp = &plan.spline;
        assert_relative_eq!(sp.position(0.0), start, epsilon = 1e-6);
        let window = (params.n_ctrl.max(8) - 3) as f64 * params.ctrl_dt;
        assert!(
            sp.duration() <= window + 1e-9,
            "window overrun: {} > {window}",
            sp.duration()
        );
        let end = sp.position(sp.duration());
        assert!(
            (end - start).norm() > 0.3,
            "plan barely moves: {} m over {} s",
            (end - start).norm(),
            sp.duration()
        );
        let n = (sp.duration() / 0.02).ceil() as usize;
        for i in 0..=n {
            let t = sp.duration() * i as f64 / n as f64;
            assert!(env.valid_check(sp.position(t), t), "collision at t = {t}");
            assert!(
                sp.velocity(t).norm() <= params.search.v_max * 1.05 + 1e-6,
                "overspeed {} at t = {t}",
                sp.velocity(t).norm()
            );
        }
    }

    #[test]
    fn free_space_plan_is_smooth_and_tracks_the_straight_line() {
        let env = empty_env();
        let params = PlannerParams::default();
        let start = Vec3::new(-3.0, 0.0, 1.5);
        let goal = Vec3::new(3.0, 0.0, 1.5);
        let plan = plan_trajectory(start, Vec3::zeros(), Vec3::zeros(), goal, &env, &params).unwrap();
        assert_plan_sane(&plan, start, &env, &params);
        assert_eq!(plan.outer_iterations, 1, "free space should need one round");
        let end = plan.spline.position(plan.spline.duration());
        assert!(
            (end - goal).norm() < (start - goal).norm() - 0.3,
            "no progress toward the goal"
        );
        // The goal is axis-aligned, so the chord is the optimal path and any
        // lateral deviation is invented by the search or the refinement.
        // (A diagonal goal would not track its chord: each axis runs its own
        // time-optimal profile, which legitimately leaves the straight line.)
        let dir = (goal - start).normalize();
        let sp = &plan.spline;
        let steps = 50;
        for i in 0..=steps {
            let t = sp.duration() * i as f64 / steps as f64;
            let rel = sp.position(t) - start;
            let off_line = (rel - dir * rel.dot(&dir)).norm();
            assert!(off_line < 0.05, "drifts {off_line} m off the line at t = {t}");
        }
        // Boundary derivatives are preserved by the refinement.
        assert_relative_eq!(plan.spline.velocity(0.0), Vec3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn wall_is_avoided_after_refinement() {
        let mut env = empty_env();
        for y in -40..40 {
            for z in 0..40 {
                let c = env
                    .grid
                    .cell_of(Vec3::new(0.05, y as f64 * 0.1 + 0.05, z as f64 * 0.1 + 0.05))
                    .unwrap();
                env.grid.set_log_odds(c, 3.0);
            }
        }
        let params = PlannerParams::default();
        let start = Vec3::new(-3.0, 0.0, 1.5);
        let goal = Vec3::new(3.0, 0.0, 1.5);
        let plan = plan_trajectory(start, Vec3::zeros(), Vec3::zeros(), goal, &env, &params).unwrap();
        assert_plan_sane(&plan, start, &env, &params);
    }

    #[test]
    fn crossing_obstacle_is_dodged_in_spacetime() {
        let mut env = empty_env();
        env.ellipsoids.push(MovingEllipsoid::new(
            0,
            Vec3::new(0.0, -3.0, 1.5),
            Vec3::new(0.0, 1.5, 0.0),
            Vec3::new(0.4, 0.4, 1.0),
            0.4,
            Mat3::identity(),
            0.0,
        ));
        let params = PlannerParams::default();
        let start = Vec3::new(-3.0, 0.0, 1.5);
        let goal = Vec3::new(3.0, 0.0, 1.5);
        let plan = plan_trajectory(start, Vec3::zeros(), Vec3::zeros(), goal, &env, &params).unwrap();
        assert_plan_sane(&plan, start, &env, &params);
        let end = plan.spline.position(plan.spline.duration());
        assert!(
            (end - goal).norm() < (start - goal).norm() - 0.3,
            "no progress toward the goal"
        );
    }

    #[test]
    fn moving_start_state_is_respected() {
        let env = empty_env();
        let params = PlannerParams::default();
        let start = Vec3::new(0.0, 0.0, 1.5);
        let vel = Vec3::new(1.2, 0.3, 0.0);
        let acc = Vec3::new(0.5, 0.0, 0.0);
        let plan = plan_trajectory(start, vel, acc, Vec3::new(4.0, 2.0, 1.5), &env, &params).unwrap();
        assert_relative_eq!(plan.spline.position(0.0), start, epsilon = 1e-9);
        assert_relative_eq!(plan.spline.velocity(0.0), vel, epsilon = 1e-9);
        assert_relative_eq!(plan.spline.acceleration(0.0), acc, epsilon = 1e-7);
    }

    #[test]
    fn enclosed_goal_propagates_infeasibility() {
        let mut env = empty_env();
        for x in 0..20 {
            for y in 0..20 {
                for z in 0..20 {
                    let pt = Vec3::new(
                        3.0 + x as f64 * 0.1 - 1.0 + 0.05,
                        y as f64 * 0.1 - 1.0 + 0.05,
                        0.5 + z as f64 * 0.1 + 0.05,
                    );
                    if let Some(c) = env.grid.cell_of(pt) {
                        env.grid.set_log_odds(c, 3.0);
                    }
                }
            }
        }
        let params = PlannerParams {
            search: SearchParams {
                max_nodes: 3000,
                ..SearchParams::default()
            },
            ..PlannerParams::default()
        };
        let err = plan_trajectory(
            Vec3::new(-3.0, 0.0, 1.5),
            Vec3::zeros(),
            Vec3::zeros(),
            Vec3::new(3.0, 0.0, 1.5),
            &env,
            &params,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }
}
