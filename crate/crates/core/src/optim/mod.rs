//! Dense quadratic-program and augmented-Lagrangian nonlinear-program
//! solvers used by lateral tube fitting and the MPC.

mod nlp;
mod qp;

pub use nlp::{solve_nlp, solve_nlp_warm, DualWarmStart, NlpOptions, NlpProblem};
pub use qp::{solve_qp, QpOptions, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Compare analytic gradients and constraint Jacobian-vector products
/// against central finite differences; returns the worst relative error.
pub fn check_gradient(problem: &dyn NlpProblem, point: &[f64], eps: f64) -> f64 {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    assert_eq!(point.len(), n);

    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| (a - b).abs() / f64::max(1.0, a.abs().max(b.abs()));

    let mut grad = vec![0.0; n];
    problem.objective(point, Some(&mut grad));
    let mut x = point.to_vec();
    for i in 0..n {
        let h = eps * (1.0 + point[i].abs());
        x[i] = point[i] + h;
        let fp = problem.objective(&x, None);
        x[i] = point[i] - h;
        let fm = problem.objective(&x, None);
        x[i] = point[i];
        worst = worst.max(rel(grad[i], (fp - fm) / (2.0 * h)));
    }

    if m > 0 {
        // probe J^T w for a few deterministic weight vectors
        let mut cp = vec![0.0; m];
        let mut cm = vec![0.0; m];
        for probe in 0..3u64 {
            let w: Vec<f64> = (0..m)
                .map(|i| {
                    // cheap deterministic pseudo-random weights in [-1, 1]
                    let h = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(probe * 1442695040888963407);
                    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect();
            let mut jtw = vec![0.0; n];
            problem.constraints_vjp(point, &w, &mut jtw);
            for i in 0..n {
                let h = eps * (1.0 + point[i].abs());
                x[i] = point[i] + h;
                problem.constraints(&x, &mut cp);
                x[i] = point[i] - h;
                problem.constraints(&x, &mut cm);
                x[i] = point[i];
                let fd: f64 = (0..m).map(|j| w[j] * (cp[j] - cm[j])).sum::<f64>() / (2.0 * h);
                worst = worst.max(rel(jtw[i], fd));
            }
        }
    }
    worst
}
