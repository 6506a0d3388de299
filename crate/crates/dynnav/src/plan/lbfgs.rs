//! Limited-memory BFGS with a weak-Wolfe line search.
//!
//! Small, dependency-free unconstrained minimizer: two-loop recursion over a
//! short history of curvature pairs plus a bracketing bisection line search.
//! Deterministic for a given objective and starting point.

/// Optimizer knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsParams {
    /// Number of curvature pairs retained.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease falls below this.
    pub f_tol: f64,
    /// Armijo (sufficient decrease) constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_iters: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iters: 120,
            grad_tol: 1e-7,
            f_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_iters: 40,
        }
    }
}

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Minimizes `f` starting from `x0`. The objective writes the gradient into
/// its second argument and returns the value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, p: &LbfgsParams) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if n == 0 {
        return LbfgsOutcome {
            x,
            f: fx,
            iterations: 0,
            converged: true,
        };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    for iter in 0..p.max_iters {
        if inf_norm(&g) <= p.grad_tol {
            return LbfgsOutcome {
                x,
                f: fx,
                iterations: iter,
                converged: true,
            };
        }
        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alphas[i] = a;
            for (dk, yk) in d.iter_mut().zip(&y_hist[i]) {
                *dk -= a * yk;
            }
        }
        if m > 0 {
            let last = m - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            if gamma.is_finite() && gamma > 0.0 {
                for dk in d.iter_mut() {
                    *dk *= gamma;
                }
            }
        }
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            for (dk, sk) in d.iter_mut().zip(&s_hist[i]) {
                *dk += (alphas[i] - b) * sk;
            }
        }
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // Not a descent direction: drop the memory and fall back to
            // steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
            if !(dg < 0.0) {
                return LbfgsOutcome {
                    x,
                    f: fx,
                    iterations: iter,
                    converged: true,
                };
            }
        }

        // Weak-Wolfe line search by bracketing bisection. With curvature
        // memory the two-loop direction is well scaled and a unit step is the
        // right first try; without it (first iteration, or after a reset) the
        // raw gradient can be huge, so start at a step that moves x by O(1).
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut alpha = if s_hist.is_empty() {
            (1.0 / inf_norm(&d).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut xt = vec![0.0; n];
        let mut gt = vec![0.0; n];
        let mut ft = fx;
        let mut accepted = false;
        for _ in 0..p.max_line_iters {
            for k in 0..n {
                xt[k] = x[k] + alpha * d[k];
            }
            ft = f(&xt, &mut gt);
            if !ft.is_finite() || ft > fx + p.c1 * alpha * dg {
                hi = alpha;
                alpha = 0.5 * (lo + hi);
            } else if dot(&gt, &d) < p.c2 * dg {
                lo = alpha;
                alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
            } else {
                accepted = true;
                break;
            }
        }
        if !accepted {
            // Keep the best Armijo point if any; otherwise give up.
            if !(ft.is_finite() && ft < fx) {
                return LbfgsOutcome {
                    x,
                    f: fx,
                    iterations: iter,
                    converged: false,
                };
            }
        }

        // Curvature pair.
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * inf_norm(&s).max(1e-300) * inf_norm(&y).max(1e-300) {
            if s_hist.len() == p.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        let prev = fx;
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        if (prev - fx).abs() <= p.f_tol * (1.0 + fx.abs()) {
            return LbfgsOutcome {
                x,
                f: fx,
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    LbfgsOutcome {
        x,
        f: fx,
        iterations: p.max_iters,
        converged: false,
    }
}
