//! Dense operator-splitting QP solver with active-set polishing.
//!
//!   minimize   0.5 x' H x + g' x
//!   subject to lower <= A x <= upper

use crate::linalg::{lu_solve, norm_inf, Cholesky, Mat};

use super::{SolveReport, SolveStatus};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: Mat,
    pub g: Vec<f64>,
    pub a: Mat,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.g.len();
        if self.h.rows != n || self.h.cols != n {
            return Err("H dimension mismatch".into());
        }
        if self.a.cols != n || self.a.rows != self.lower.len() || self.a.rows != self.upper.len() {
            return Err("A/bounds dimension mismatch".into());
        }
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-9 {
                    return Err("H not symmetric".into());
                }
            }
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err("lower > upper".into());
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.h.matvec(x);
        0.5 * crate::linalg::dot(x, &hx) + crate::linalg::dot(&self.g, x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

const SIGMA: f64 = 1e-6;
const RHO_INIT: f64 = 1.0;

fn factor_kkt(problem: &QpProblem, rho: f64) -> Option<Cholesky> {
    let mut k = problem.h.clone();
    k.add_diag(SIGMA);
    if problem.a.rows > 0 {
        let mut ata = problem.a.gram();
        ata.scale(rho);
        k.add_assign(&ata);
    }
    Cholesky::new_with_jitter(&k)
}

pub fn solve_qp(problem: &QpProblem, opts: QpOptions) -> (Vec<f64>, SolveReport) {
    problem.validate().expect("invalid QP problem");
    let n = problem.g.len();
    let m = problem.a.rows;

    if m == 0 {
        let mut h = problem.h.clone();
        h.add_diag(SIGMA);
        let chol = Cholesky::new_with_jitter(&h).expect("H not factorizable");
        let x = chol.solve(&problem.g.iter().map(|v| -v).collect::<Vec<_>>());
        let report = SolveReport {
            status: SolveStatus::Converged,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: problem.objective(&x),
        };
        return (x, report);
    }

    let mut rho = RHO_INIT;
    let mut chol = factor_kkt(problem, rho).expect("KKT not factorizable");

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];

    let mut r_prim = f64::INFINITY;
    let mut r_dual = f64::INFINITY;
    let mut best_prim = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        // x-update: (H + sigma I + rho A'A) x = sigma x - g + A'(rho z - y)
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = SIGMA * x[i] - problem.g[i];
        }
        let w: Vec<f64> = (0..m).map(|i| rho * z[i] - y[i]).collect();
        let atw = problem.a.matvec_t(&w);
        for i in 0..n {
            rhs[i] += atw[i];
        }
        x = chol.solve(&rhs);

        let ax = problem.a.matvec(&x);
        let z_prev = z.clone();
        for i in 0..m {
            z[i] = (ax[i] + y[i] / rho).clamp(problem.lower[i], problem.upper[i]);
            y[i] += rho * (ax[i] - z[i]);
        }

        let diff: Vec<f64> = (0..m).map(|i| ax[i] - z[i]).collect();
        r_prim = norm_inf(&diff);
        let dz: Vec<f64> = (0..m).map(|i| z[i] - z_prev[i]).collect();
        r_dual = rho * norm_inf(&problem.a.matvec_t(&dz));

        if r_prim <= opts.tol && r_dual <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }

        if r_prim < best_prim * 0.999 {
            best_prim = r_prim;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if stagnant > 200 && r_prim > 1e3 * opts.tol {
            status = SolveStatus::Infeasible;
            break;
        }

        // adaptive rho on residual imbalance
        if iter % 25 == 24 {
            if r_prim > 10.0 * r_dual && rho < 1e6 {
                rho *= 10.0;
                chol = factor_kkt(problem, rho).expect("KKT not factorizable");
            } else if r_dual > 10.0 * r_prim && rho > 1e-6 {
                rho /= 10.0;
                chol = factor_kkt(problem, rho).expect("KKT not factorizable");
            }
        }
    }

    if status == SolveStatus::Converged {
        if let Some(polished) = polish(problem, &x, opts.tol) {
            x = polished;
            let ax = problem.a.matvec(&x);
            let viol = (0..m)
                .map(|i| (problem.lower[i] - ax[i]).max(ax[i] - problem.upper[i]).max(0.0))
                .fold(0.0_f64, f64::max);
            r_prim = viol;
        }
    }

    let report = SolveReport {
        status,
        iterations,
        primal_residual: r_prim,
        dual_residual: r_dual,
        objective: problem.objective(&x),
    };
    (x, report)
}

/// Re-solve the equality-constrained KKT system on the detected active set
/// and keep the result when it is feasible and no worse.
fn polish(problem: &QpProblem, x: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = problem.g.len();
    let m = problem.a.rows;
    let ax = problem.a.matvec(x);
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if ax[i] - problem.lower[i] < 10.0 * tol {
            active.push((i, problem.lower[i]));
        } else if problem.upper[i] - ax[i] < 10.0 * tol {
            active.push((i, problem.upper[i]));
        }
    }
    let k = active.len();
    let mut kkt = Mat::zeros(n + k, n + k);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = problem.h[(i, j)];
        }
    }
    for (row, &(ci, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + row, j)] = problem.a[(ci, j)];
            kkt[(j, n + row)] = problem.a[(ci, j)];
        }
    }
    let mut rhs = vec![0.0; n + k];
    for i in 0..n {
        rhs[i] = -problem.g[i];
    }
    for (row, &(_, b)) in active.iter().enumerate() {
        rhs[n + row] = b;
    }
    let sol = lu_solve(&kkt, &rhs)?;
    let cand = sol[..n].to_vec();
    let axc = problem.a.matvec(&cand);
    for i in 0..m {
        if axc[i] < problem.lower[i] - tol || axc[i] > problem.upper[i] + tol {
            return None;
        }
    }
    if problem.objective(&cand) <= problem.objective(x) + tol {
        Some(cand)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn active_bound_scalar() {
        // min x^2 s.t. x >= 1
        let p = QpProblem {
            h: mat(&[&[2.0]]),
            g: vec![0.0],
            a: mat(&[&[1.0]]),
            lower: vec![1.0],
            upper: vec![1e20],
        };
        let (x, report) = solve_qp(&p, QpOptions::default());
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((x[0] - 1.0).abs() < 1e-6, "x {}", x[0]);
    }

    #[test]
    fn box_projection_of_origin() {
        // H = I, g = 0, box [1,2] x [-5,-3]
        let p = QpProblem {
            h: Mat::identity(2),
            g: vec![0.0, 0.0],
            a: Mat::identity(2),
            lower: vec![1.0, -5.0],
            upper: vec![2.0, -3.0],
        };
        let (x, report) = solve_qp(&p, QpOptions::default());
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((x[0] - 1.0).abs() < 1e-6);
        assert!((x[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let p = QpProblem {
            h: mat(&[&[4.0, 1.0], &[1.0, 3.0]]),
            g: vec![-1.0, -2.0],
            a: Mat::zeros(0, 2),
            lower: vec![],
            upper: vec![],
        };
        let (x, _) = solve_qp(&p, QpOptions::default());
        // solve H x = -g directly
        let sol = lu_solve(&p.h, &[1.0, 2.0]).unwrap();
        assert!((x[0] - sol[0]).abs() < 1e-5);
        assert!((x[1] - sol[1]).abs() < 1e-5);
    }

    #[test]
    fn detects_infeasible_equality_pair() {
        // x = 0 and x = 1 simultaneously
        let p = QpProblem {
            h: mat(&[&[2.0]]),
            g: vec![0.0],
            a: mat(&[&[1.0], &[1.0]]),
            lower: vec![0.0, 1.0],
            upper: vec![0.0, 1.0],
        };
        let (_, report) = solve_qp(&p, QpOptions::default());
        assert_eq!(report.status, SolveStatus::Infeasible);
    }

    #[test]
    fn deterministic_repeat() {
        let p = QpProblem {
            h: mat(&[&[3.0, 0.5], &[0.5, 2.0]]),
            g: vec![1.0, -4.0],
            a: mat(&[&[1.0, 1.0], &[1.0, -1.0]]),
            lower: vec![-1.0, -2.0],
            upper: vec![1.5, 2.0],
        };
        let (x1, r1) = solve_qp(&p, QpOptions::default());
        let (x2, r2) = solve_qp(&p, QpOptions::default());
        assert_eq!(x1, x2);
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(r1.objective.to_bits(), r2.objective.to_bits());
    }
}
