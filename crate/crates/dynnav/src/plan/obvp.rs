//! Closed-form optimal boundary value problem for a double integrator.
//!
//! Minimizes `∫‖u‖² dt + ρT` from `(p0, v0)` to a fixed final position with
//! free final velocity and free duration. The optimal control is linear in
//! time, `u(t) = k (T - t)`, and the optimal duration is a root of a quartic
//! solved exactly through the companion-matrix eigenvalues.

use nalgebra::{Complex, Matrix4};

use crate::geom::Vec3;

/// Solved two-point boundary problem: duration, accumulated cost, and the
/// control-law coefficient.
#[derive(Debug, Clone, Copy)]
pub struct ObvpSolution {
    pub duration: f64,
    pub cost: f64,
    /// `u(t) = k (T - t)`.
    pub k: Vec3,
    pub p0: Vec3,
    pub v0: Vec3,
}

impl ObvpSolution {
    pub fn position(&self, t: f64) -> Vec3 {
        let tt = t * t;
        self.p0 + self.v0 * t + self.k * (self.duration * tt / 2.0 - tt * t / 6.0)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.v0 + self.k * (self.duration * t - t * t / 2.0)
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        self.k * (self.duration - t)
    }
}

/// Cost of reaching `pg` from `(p0, v0)` in exactly `t` seconds with the
/// linear control law (the inner minimization of the free-duration problem).
pub fn cost_given_t(p0: Vec3, v0: Vec3, pg: Vec3, rho: f64, t: f64) -> f64 {
    let d = pg - p0;
    let e = d - v0 * t;
    3.0 * e.norm_squared() / t.powi(3) + rho * t
}

fn solution_for_t(p0: Vec3, v0: Vec3, pg: Vec3, rho: f64, t: f64) -> ObvpSolution {
    let dp = pg - p0 - v0 * t;
    ObvpSolution {
        duration: t,
        cost: cost_given_t(p0, v0, pg, rho, t),
        k: dp * (3.0 / t.powi(3)),
        p0,
        v0,
    }
}

/// Solves the free-duration problem. Returns `None` only for the degenerate
/// already-there case (`pg == p0`, `v0 == 0`), where the optimal duration is
/// zero and no motion is needed.
pub fn solve(p0: Vec3, v0: Vec3, pg: Vec3, rho: f64) -> Option<ObvpSolution> {
    let d = pg - p0;
    if d.norm() < 1e-12 && v0.norm() < 1e-12 {
        return None;
    }
    // Stationary points of J(T) = 3 ‖D - v0 T‖² / T³ + ρT are roots of
    //   ρ T⁴ - 3 ‖v0‖² T² + 12 (D·v0) T - 9 ‖D‖² = 0.
    let c2 = -3.0 * v0.norm_squared() / rho;
    let c1 = 12.0 * d.dot(&v0) / rho;
    let c0 = -9.0 * d.norm_squared() / rho;
    // Companion matrix of T⁴ + 0·T³ + c2 T² + c1 T + c0.
    let companion = Matrix4::new(
        0.0, 0.0, 0.0, -c0, //
        1.0, 0.0, 0.0, -c1, //
        0.0, 1.0, 0.0, -c2, //
        0.0, 0.0, 1.0, 0.0,
    );
    let eigs = companion.complex_eigenvalues();
    let quartic = |t: f64| ((rho * t * t + c2 * rho) * t + c1 * rho) * t + c0 * rho;
    let quartic_d = |t: f64| (4.0 * rho * t * t + 2.0 * c2 * rho) * t + c1 * rho;
    let mut best: Option<ObvpSolution> = None;
    for e in eigs.iter() {
        let Complex { re, im } = *e;
        if im.abs() > 1e-6 * (1.0 + re.abs()) || re <= 1e-9 {
            continue;
        }
        // Newton polish against rounding in the eigenvalue solve.
        let mut t = re;
        for _ in 0..8 {
            let f = quartic(t);
            let fd = quartic_d(t);
            if fd.abs() < 1e-300 {
                break;
            }
            let step = f / fd;
            t -= step;
            if step.abs() < 1e-14 * (1.0 + t.abs()) {
                break;
            }
        }
        if t <= 1e-9 || !t.is_finite() {
            continue;
        }
        let cand = solution_for_t(p0, v0, pg, rho, t);
        if best.as_ref().is_none_or(|b| cand.cost < b.cost) {
            best = Some(cand);
        }
    }
    best.or_else(|| {
        // Numerical fallback: coarse scan plus golden-section refinement.
        let scale = (d.norm() / rho.max(1e-9)).cbrt().max(v0.norm() / rho.max(1e-9)).max(0.1);
        let mut best_t = scale;
        let mut best_c = f64::INFINITY;
        for i in 1..=400 {
            let t = scale * 0.02 * i as f64;
            let c = cost_given_t(p0, v0, pg, rho, t);
            if c < best_c {
                best_c = c;
                best_t = t;
            }
        }
        Some(solution_for_t(p0, v0, pg, rho, best_t))
    })
}

/// Optimal free-space cost-to-go, used as the search heuristic. Zero at the
/// goal with zero velocity.
pub fn heuristic(p: Vec3, v: Vec3, goal: Vec3, rho: f64) -> f64 {
    match solve(p, v, goal, rho) {
        Some(s) => s.cost,
        None => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The closed-form optimal duration must beat (or tie) a dense scan over
    /// durations, and satisfy the boundary conditions exactly.
    #[test]
    fn closed_form_matches_dense_duration_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let p0 = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0));
            let pg = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..3.0));
            let v0 = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
            if (pg - p0).norm() < 1e-3 {
                continue;
            }
            let rho = rng.gen_range(1.0..50.0);
            let sol = solve(p0, v0, pg, rho).unwrap();
            // Dense scan with refinement around the best sample.
            let mut best = f64::INFINITY;
            let mut best_t = 0.0;
            for i in 1..4000 {
                let t = i as f64 * 0.005;
                let c = cost_given_t(p0, v0, pg, rho, t);
                if c < best {
                    best = c;
                    best_t = t;
                }
            }
            for i in -100i32..=100 {
                let t = best_t + i as f64 * 1e-4;
                if t > 1e-6 {
                    best = best.min(cost_given_t(p0, v0, pg, rho, t));
                }
            }
            assert!(
                sol.cost <= best + 1e-6,
                "closed form {} worse than scan {} (p0={p0:?} v0={v0:?} pg={pg:?} rho={rho})",
                sol.cost,
                best
            );
            assert_relative_eq!(sol.cost, best, epsilon = 1e-3, max_relative = 1e-3);
            // Boundary conditions.
            assert_relative_eq!(sol.position(0.0), p0, epsilon = 1e-9);
            assert_relative_eq!(sol.velocity(0.0), v0, epsilon = 1e-9);
            assert_relative_eq!(sol.position(sol.duration), pg, epsilon = 1e-7);
            // Terminal control is zero (free final velocity transversality).
            assert_relative_eq!(sol.acceleration(sol.duration).norm(), 0.0, epsilon = 1e-9);
        }
    }

    /// The reported cost must equal the integral of ‖u‖² plus the time term.
    #[test]
    fn cost_equals_control_integral() {
        let p0 = Vec3::new(0.0, 0.0, 1.0);
        let v0 = Vec3::new(1.0, -0.5, 0.0);
        let pg = Vec3::new(4.0, 2.0, 1.5);
        let rho = 10.0;
        let sol = solve(p0, v0, pg, rho).unwrap();
        let n = 200_000;
        let dt = sol.duration / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) * dt;
            integral += sol.acceleration(t).norm_squared() * dt;
        }
        assert_relative_eq!(sol.cost, integral + rho * sol.duration, epsilon = 1e-4, max_relative = 1e-6);
    }

    #[test]
    fn degenerate_cases() {
        // Already at the goal at rest: nothing to do.
        assert!(solve(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), 10.0).is_none());
        // At the goal but moving: optimal stop exists with finite duration.
        let sol = solve(Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), 10.0).unwrap();
        assert!(sol.duration > 0.0);
        assert_relative_eq!(sol.position(sol.duration), Vec3::zeros(), epsilon = 1e-9);
        // Heuristic is zero only at rest on the goal.
        assert_eq!(heuristic(Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), 10.0), 0.0);
        assert!(heuristic(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros(), 10.0) > 0.0);
    }

    /// Pushing ρ up shortens the optimal duration (time gets more expensive).
    #[test]
    fn duration_decreases_with_rho() {
        let p0 = Vec3::zeros();
        let v0 = Vec3::zeros();
        let pg = Vec3::new(5.0, 0.0, 0.0);
        let mut last = f64::INFINITY;
        for rho in [1.0, 5.0, 25.0, 125.0] {
            let sol = solve(p0, v0, pg, rho).unwrap();
            assert!(sol.duration < last);
            last = sol.duration;
        }
    }
}
