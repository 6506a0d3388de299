//! Uniform cubic B-spline trajectories.
//!
//! A trajectory is a clamped-by-construction uniform cubic B-spline: `n`
//! control points with knot spacing `dt` span a duration of `(n - 3) dt`.
//! Derivatives are again B-splines whose control points are finite
//! differences of the originals, which is what makes control-point bounds
//! usable as conservative trajectory bounds (convex hull property).

use nalgebra::{DMatrix, DVector};

use crate::geom::Vec3;
use crate::{Error, Result};

/// Spline degree (cubic).
pub const DEGREE: usize = 3;

/// Uniform cubic B-spline curve in 3-D.
#[derive(Debug, Clone)]
pub struct BSpline {
    pub control: Vec<Vec3>,
    /// Knot spacing, s.
    pub dt: f64,
}

fn basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        (1.0 - s).powi(3) / 6.0,
        (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
        (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
        s3 / 6.0,
    ]
}

fn basis_d1(s: f64) -> [f64; 4] {
    let s2 = s * s;
    [
        -(1.0 - s) * (1.0 - s) / 2.0,
        (3.0 * s2 - 4.0 * s) / 2.0,
        (-3.0 * s2 + 2.0 * s + 1.0) / 2.0,
        s2 / 2.0,
    ]
}

fn basis_d2(s: f64) -> [f64; 4] {
    [1.0 - s, 3.0 * s - 2.0, -3.0 * s + 1.0, s]
}

impl BSpline {
    pub fn new(control: Vec<Vec3>, dt: f64) -> Result<Self> {
        if control.len() < DEGREE + 1 {
            return Err(Error::Infeasible(format!(
                "spline needs at least {} control points, got {}",
                DEGREE + 1,
                control.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Infeasible(format!("non-positive knot spacing {dt}")));
        }
        Ok(Self { control, dt })
    }

    pub fn duration(&self) -> f64 {
        (self.control.len() - DEGREE) as f64 * self.dt
    }

    /// Span index and local parameter for a (clamped) trajectory time.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n_span = self.control.len() - DEGREE;
        let u = (t / self.dt).clamp(0.0, n_span as f64);
        let j = (u.floor() as usize).min(n_span - 1);
        (j, u - j as f64)
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let (j, s) = self.locate(t);
        let b = basis(s);
        self.control[j] * b[0]
            + self.control[j + 1] * b[1]
            + self.control[j + 2] * b[2]
            + self.control[j + 3] * b[3]
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        let (j, s) = self.locate(t);
        let b = basis_d1(s);
        (self.control[j] * b[0]
            + self.control[j + 1] * b[1]
            + self.control[j + 2] * b[2]
            + self.control[j + 3] * b[3])
            / self.dt
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        let (j, s) = self.locate(t);
        let b = basis_d2(s);
        (self.control[j] * b[0]
            + self.control[j + 1] * b[1]
            + self.control[j + 2] * b[2]
            + self.control[j + 3] * b[3])
            / (self.dt * self.dt)
    }

    /// Control points of the velocity spline: `V_i = (Q_{i+1} - Q_i) / dt`.
    pub fn velocity_points(&self) -> Vec<Vec3> {
        self.control
            .windows(2)
            .map(|w| (w[1] - w[0]) / self.dt)
            .collect()
    }

    /// Control points of the acceleration spline.
    pub fn acceleration_points(&self) -> Vec<Vec3> {
        let dt2 = self.dt * self.dt;
        self.control
            .windows(3)
            .map(|w| (w[2] - 2.0 * w[1] + w[0]) / dt2)
            .collect()
    }

    /// Control points of the jerk spline.
    pub fn jerk_points(&self) -> Vec<Vec3> {
        let dt3 = self.dt * self.dt * self.dt;
        self.control
            .windows(4)
            .map(|w| (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]) / dt3)
            .collect()
    }
}

/// The three control points that pin position, velocity and acceleration at
/// a curve endpoint.
pub fn endpoint_controls(p: Vec3, v: Vec3, a: Vec3, dt: f64) -> [Vec3; 3] {
    let q_mid = p - a * (dt * dt / 6.0);
    let sum = 6.0 * p - 4.0 * q_mid;
    let diff = 2.0 * dt * v;
    [(sum - diff) / 2.0, q_mid, (sum + diff) / 2.0]
}

/// Builds a spline whose first and last three control points realize the
/// given boundary states exactly, with `inner` in between.
pub fn with_endpoints(
    start: (Vec3, Vec3, Vec3),
    goal: (Vec3, Vec3, Vec3),
    inner: &[Vec3],
    dt: f64,
) -> Result<BSpline> {
    let s = endpoint_controls(start.0, start.1, start.2, dt);
    let g = endpoint_controls(goal.0, goal.1, goal.2, dt);
    let mut control = Vec::with_capacity(6 + inner.len());
    control.extend_from_slice(&s);
    control.extend_from_slice(inner);
    control.extend_from_slice(&g);
    BSpline::new(control, dt)
}

/// Least-squares fit of a spline with `n_ctrl` control points to trajectory
/// samples `(t, p)`, with both boundary states pinned exactly. Sample times
/// must lie in `[0, (n_ctrl - 3) dt]`.
pub fn fit_initial(
    samples: &[(f64, Vec3)],
    start: (Vec3, Vec3, Vec3),
    goal: (Vec3, Vec3, Vec3),
    n_ctrl: usize,
    dt: f64,
) -> Result<BSpline> {
    if n_ctrl < 8 {
        return Err(Error::Infeasible(format!(
            "fit needs at least 8 control points, got {n_ctrl}"
        )));
    }
    let n_free = n_ctrl - 6;
    let sc = endpoint_controls(start.0, start.1, start.2, dt);
    let gc = endpoint_controls(goal.0, goal.1, goal.2, dt);
    let fixed_lo = &sc;
    let fixed_hi = &gc;
    // Assemble the free-column basis matrix and fixed-contribution residual.
    let m = samples.len();
    let mut a = DMatrix::<f64>::zeros(m, n_free);
    let mut rhs = [DVector::<f64>::zeros(m), DVector::zeros(m), DVector::zeros(m)];
    let probe = BSpline {
        control: vec![Vec3::zeros(); n_ctrl],
        dt,
    };
    for (row, &(t, p)) in samples.iter().enumerate() {
        let (j, s) = probe.locate(t);
        let b = basis(s);
        let mut fixed = Vec3::zeros();
        for (k, &bk) in b.iter().enumerate() {
            let col = j + k;
            if col < 3 {
                fixed += fixed_lo[col] * bk;
            } else if col >= n_ctrl - 3 {
                fixed += fixed_hi[col - (n_ctrl - 3)] * bk;
            } else {
                a[(row, col - 3)] += bk;
            }
        }
        let r = p - fixed;
        rhs[0][row] = r.x;
        rhs[1][row] = r.y;
        rhs[2][row] = r.z;
    }
    let mut ata = &a.transpose() * &a;
    for i in 0..n_free {
        ata[(i, i)] += 1e-9;
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Infeasible("singular spline fit".into()))?;
    let mut inner = vec![Vec3::zeros(); n_free];
    for (axis, b) in rhs.iter().enumerate() {
        let atb = &a.transpose() * b;
        let x = chol.solve(&atb);
        for (i, q) in inner.iter_mut().enumerate() {
            q[axis] = x[i];
        }
    }
    with_endpoints(start, goal, &inner, dt)
}
