//! Augmented-Lagrangian solver for inequality-constrained problems with
//! box bounds, using a box-projected L-BFGS inner loop.

use crate::linalg::{dot, norm_inf};

use super::{SolveReport, SolveStatus};

/// Problem interface: objective with analytic gradient, inequality
/// constraints c(x) <= 0 with a Jacobian-transpose product, and variable
/// box bounds.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Returns f(x); fills the gradient when requested.
    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64;
    fn constraints(&self, x: &[f64], out: &mut [f64]);
    /// grad = J(x)^T w
    fn constraints_vjp(&self, x: &[f64], w: &[f64], grad: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct NlpOptions {
    pub tol: f64,
    /// Stationarity tolerance; defaults to `tol` via `resolved_dual_tol`.
    pub dual_tol: Option<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl NlpOptions {
    fn resolved_dual_tol(&self) -> f64 {
        self.dual_tol.unwrap_or(self.tol)
    }
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            tol: 1e-4,
            dual_tol: None,
            max_outer: 30,
            max_inner: 200,
        }
    }
}

/// Multiplier estimates carried between successive solves of a slowly
/// changing problem. Reusing them skips most of the outer loop.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualWarmStart {
    pub lambda: Vec<f64>,
    pub mu: f64,
}

const MU_INIT: f64 = 10.0;
const MU_GROWTH: f64 = 10.0;
const MU_MAX: f64 = 1e8;
const LBFGS_MEMORY: usize = 16;

struct Workspace<'a> {
    problem: &'a dyn NlpProblem,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lambda: Vec<f64>,
    mu: f64,
    c_buf: Vec<f64>,
}

impl<'a> Workspace<'a> {
    /// Augmented objective value only (PHR form).
    fn eval_value(&mut self, x: &[f64]) -> f64 {
        let m = self.problem.num_constraints();
        let mut f = self.problem.objective(x, None);
        if m == 0 {
            return f;
        }
        self.problem.constraints(x, &mut self.c_buf);
        for i in 0..m {
            let t = self.lambda[i] + self.mu * self.c_buf[i];
            if t > 0.0 {
                f += (t * t - self.lambda[i] * self.lambda[i]) / (2.0 * self.mu);
            } else {
                f -= self.lambda[i] * self.lambda[i] / (2.0 * self.mu);
            }
        }
        f
    }

    fn eval_with_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.problem.num_constraints();
        let mut f = self.problem.objective(x, Some(grad));
        if m == 0 {
            return f;
        }
        self.problem.constraints(x, &mut self.c_buf);
        let mut w = vec![0.0; m];
        for i in 0..m {
            let t = self.lambda[i] + self.mu * self.c_buf[i];
            if t > 0.0 {
                f += (t * t - self.lambda[i] * self.lambda[i]) / (2.0 * self.mu);
                w[i] = t;
            } else {
                f -= self.lambda[i] * self.lambda[i] / (2.0 * self.mu);
            }
        }
        let n = x.len();
        let mut jtw = vec![0.0; n];
        self.problem.constraints_vjp(x, &w, &mut jtw);
        for i in 0..n {
            grad[i] += jtw[i];
        }
        f
    }

    fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn projected_gradient_norm(&self, x: &[f64], grad: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let step = (x[i] - grad[i]).clamp(self.lower[i], self.upper[i]) - x[i];
            worst = worst.max(step.abs());
        }
        worst
    }
}

/// Box-projected L-BFGS descent on the augmented objective.
/// Returns (f, projected gradient norm, inner iterations used).
fn inner_minimize(
    ws: &mut Workspace,
    x: &mut Vec<f64>,
    inner_tol: f64,
    max_inner: usize,
) -> (f64, f64, usize) {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut f = ws.eval_with_grad(x, &mut grad);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    let mut steepest_retry = false;

    while iters < max_inner {
        let pg = ws.projected_gradient_norm(x, &grad);
        if pg <= inner_tol {
            return (f, pg, iters);
        }
        iters += 1;

        // Restrict the quasi-Newton model to the free subspace: coordinates
        // pinned at a bound with the gradient pushing outward are dropped so
        // that projection does not corrupt the curvature pairs.
        let eps_act = 1e-10;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                !((x[i] - ws.lower[i] <= eps_act && grad[i] > 0.0)
                    || (ws.upper[i] - x[i] <= eps_act && grad[i] < 0.0))
            })
            .collect();
        let gf: Vec<f64> = (0..n).map(|i| if free[i] { grad[i] } else { 0.0 }).collect();

        // two-loop recursion on the free gradient
        let mut d: Vec<f64> = gf.iter().map(|g| -g).collect();
        if steepest_retry {
            steepest_retry = false;
        } else {
            let k = s_hist.len();
            let mut alphas = vec![0.0; k];
            for i in (0..k).rev() {
                let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
                let a = rho * dot(&s_hist[i], &d);
                alphas[i] = a;
                for j in 0..n {
                    d[j] -= a * y_hist[i][j];
                }
            }
            if k > 0 {
                let gamma =
                    dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
                for dj in &mut d {
                    *dj *= gamma;
                }
            }
            for i in 0..k {
                let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
                let b = rho * dot(&y_hist[i], &d);
                for j in 0..n {
                    d[j] += (alphas[i] - b) * s_hist[i][j];
                }
            }
            for j in 0..n {
                if !free[j] {
                    d[j] = 0.0;
                }
            }
            if dot(&d, &gf) >= 0.0 {
                // not a descent direction; fall back to steepest descent
                d.copy_from_slice(&gf);
                for dj in &mut d {
                    *dj = -*dj;
                }
                s_hist.clear();
                y_hist.clear();
            }
        }

        // Armijo backtracking on the projected path: sufficient decrease is
        // measured against the gradient along the step that survives
        // projection, not the raw direction. The absolute slack keeps the
        // test meaningful when the required decrease approaches the
        // floating-point noise floor of f (ill-conditioned late iterations
        // otherwise stall on a knife edge).
        let mut alpha = 1.0;
        let f0 = f;
        let slack = 1e-12 * (1.0 + f0.abs());
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        for _ in 0..40 {
            for j in 0..n {
                x_new[j] = x[j] + alpha * d[j];
            }
            ws.project(&mut x_new);
            let step: Vec<f64> = (0..n).map(|j| x_new[j] - x[j]).collect();
            if norm_inf(&step) == 0.0 {
                break;
            }
            let g_step = dot(&grad, &step);
            if g_step >= 0.0 {
                alpha *= 0.5;
                continue;
            }
            let f_new = ws.eval_value(&x_new);
            if f_new <= f0 + 1e-4 * g_step + slack {
                accepted = true;
                f = f_new;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if !s_hist.is_empty() {
                // stale curvature pairs can produce a direction the line
                // search cannot use; drop them and retry from steepest descent
                s_hist.clear();
                y_hist.clear();
                steepest_retry = true;
                continue;
            }
            let pg = ws.projected_gradient_norm(x, &grad);
            return (f, pg, iters);
        }

        let mut grad_new = vec![0.0; n];
        let f_check = ws.eval_with_grad(&x_new, &mut grad_new);
        f = f_check;
        let s: Vec<f64> = (0..n).map(|j| x_new[j] - x[j]).collect();
        let yv: Vec<f64> = (0..n).map(|j| grad_new[j] - grad[j]).collect();
        let sy = dot(&s, &yv);
        let sn = dot(&s, &s).sqrt();
        let yn = dot(&yv, &yv).sqrt();
        if sy > 1e-10 * sn * yn {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        *x = x_new.clone();
        grad = grad_new;
    }
    let pg = ws.projected_gradient_norm(x, &grad);
    (f, pg, iters)
}

pub fn solve_nlp(
    problem: &dyn NlpProblem,
    init: &[f64],
    opts: NlpOptions,
) -> (Vec<f64>, SolveReport) {
    let (x, report, _) = solve_nlp_warm(problem, init, opts, None);
    (x, report)
}

pub fn solve_nlp_warm(
    problem: &dyn NlpProblem,
    init: &[f64],
    opts: NlpOptions,
    warm: Option<&DualWarmStart>,
) -> (Vec<f64>, SolveReport, DualWarmStart) {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    assert_eq!(init.len(), n);
    let (lower, upper) = problem.bounds();

    let warm_ok = warm.map_or(false, |w| w.lambda.len() == m);
    let mut ws = Workspace {
        problem,
        lower,
        upper,
        lambda: if warm_ok {
            warm.unwrap().lambda.clone()
        } else {
            vec![0.0; m]
        },
        // a stale huge penalty would cripple the inner loop
        mu: if warm_ok {
            warm.unwrap().mu.clamp(MU_INIT, 1e4)
        } else {
            MU_INIT
        },
        c_buf: vec![0.0; m],
    };

    let mut x = init.to_vec();
    ws.project(&mut x);

    let mut total_iters = 0;
    let mut status = SolveStatus::MaxIter;
    let dual_tol = opts.resolved_dual_tol();
    let mut inner_tol = if m == 0 || warm_ok {
        dual_tol
    } else {
        1e-2_f64.max(dual_tol)
    };
    let mut prev_viol = f64::INFINITY;
    let mut pg = f64::INFINITY;
    let mut viol = f64::INFINITY;

    let mut best = (x.clone(), f64::INFINITY, f64::INFINITY);

    for _outer in 0..opts.max_outer {
        let (_, pg_now, used) = inner_minimize(&mut ws, &mut x, inner_tol, opts.max_inner);
        total_iters += used;
        pg = pg_now;

        if m > 0 {
            problem.constraints(&x, &mut ws.c_buf);
            viol = ws.c_buf.iter().fold(0.0_f64, |a, &c| a.max(c));
        } else {
            viol = 0.0;
        }

        if viol.max(0.0) + pg < best.1 + best.2 {
            best = (x.clone(), viol.max(0.0), pg);
        }

        if viol <= opts.tol && pg <= dual_tol {
            status = SolveStatus::Converged;
            break;
        }

        if m > 0 {
            for i in 0..m {
                ws.lambda[i] = (ws.lambda[i] + ws.mu * ws.c_buf[i]).max(0.0);
            }
            // grow the penalty only while actually infeasible
            let v_now = viol.max(0.0);
            if v_now > opts.tol && v_now > 0.25 * prev_viol && ws.mu < MU_MAX {
                ws.mu *= MU_GROWTH;
            }
            prev_viol = v_now;
        }
        inner_tol = (inner_tol * 0.1).max(dual_tol * 0.1);
    }

    let objective = problem.objective(&x, None);
    let report = SolveReport {
        status,
        iterations: total_iters,
        primal_residual: viol.max(0.0),
        dual_residual: pg,
        objective,
    };
    let duals = DualWarmStart {
        lambda: ws.lambda,
        mu: ws.mu,
    };
    (x, report, duals)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Simple {
        n: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        f: fn(&[f64], Option<&mut [f64]>) -> f64,
        m: usize,
        c: fn(&[f64], &mut [f64]),
        vjp: fn(&[f64], &[f64], &mut [f64]),
    }

    impl NlpProblem for Simple {
        fn num_vars(&self) -> usize {
            self.n
        }
        fn num_constraints(&self) -> usize {
            self.m
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (self.lower.clone(), self.upper.clone())
        }
        fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
            (self.f)(x, grad)
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            (self.c)(x, out)
        }
        fn constraints_vjp(&self, x: &[f64], w: &[f64], grad: &mut [f64]) {
            (self.vjp)(x, w, grad)
        }
    }

    fn no_c(_: &[f64], _: &mut [f64]) {}
    fn no_vjp(_: &[f64], _: &[f64], g: &mut [f64]) {
        g.fill(0.0);
    }

    #[test]
    fn unconstrained_quadratic_hits_minimizer() {
        let p = Simple {
            n: 2,
            lower: vec![-100.0; 2],
            upper: vec![100.0; 2],
            f: |x, grad| {
                let f = (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2);
                if let Some(g) = grad {
                    g[0] = 2.0 * (x[0] - 3.0);
                    g[1] = 4.0 * (x[1] + 1.0);
                }
                f
            },
            m: 0,
            c: no_c,
            vjp: no_vjp,
        };
        let (x, report) = solve_nlp(&p, &[0.0, 0.0], NlpOptions { tol: 1e-8, ..Default::default() });
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((x[0] - 3.0).abs() < 1e-6);
        assert!((x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_inequality() {
        // min (x-2)^2 s.t. x <= 1
        let p = Simple {
            n: 1,
            lower: vec![-100.0],
            upper: vec![100.0],
            f: |x, grad| {
                if let Some(g) = grad {
                    g[0] = 2.0 * (x[0] - 2.0);
                }
                (x[0] - 2.0).powi(2)
            },
            m: 1,
            c: |x, out| out[0] = x[0] - 1.0,
            vjp: |_, w, g| g[0] = w[0],
        };
        let (x, report) = solve_nlp(&p, &[0.0], NlpOptions::default());
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((x[0] - 1.0).abs() < 1e-4, "x {}", x[0]);
    }

    #[test]
    fn rosenbrock_reaches_optimum() {
        let p = Simple {
            n: 2,
            lower: vec![-10.0; 2],
            upper: vec![10.0; 2],
            f: |x, grad| {
                let (a, b) = (1.0, 100.0);
                let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
                if let Some(g) = grad {
                    g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
                    g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
                }
                f
            },
            m: 0,
            c: no_c,
            vjp: no_vjp,
        };
        let (x, _) = solve_nlp(
            &p,
            &[-1.2, 1.0],
            NlpOptions { tol: 1e-8, max_inner: 500, ..Default::default() },
        );
        assert!((x[0] - 1.0).abs() < 1e-3, "x0 {}", x[0]);
        assert!((x[1] - 1.0).abs() < 1e-3, "x1 {}", x[1]);
    }

    #[test]
    fn converged_implies_feasible() {
        let p = Simple {
            n: 2,
            lower: vec![-10.0; 2],
            upper: vec![10.0; 2],
            f: |x, grad| {
                if let Some(g) = grad {
                    g[0] = 2.0 * x[0];
                    g[1] = 2.0 * x[1];
                }
                x[0] * x[0] + x[1] * x[1]
            },
            m: 1,
            c: |x, out| out[0] = 1.0 - x[0] - x[1],
            vjp: |_, w, g| {
                g[0] = -w[0];
                g[1] = -w[0];
            },
        };
        let opts = NlpOptions::default();
        let (x, report) = solve_nlp(&p, &[0.0, 0.0], opts);
        if report.status == SolveStatus::Converged {
            assert!(1.0 - x[0] - x[1] <= opts.tol);
        }
        assert!((x[0] - 0.5).abs() < 1e-3);
        assert!((x[1] - 0.5).abs() < 1e-3);
    }
}
