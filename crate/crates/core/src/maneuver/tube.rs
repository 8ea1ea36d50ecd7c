//! Lateral tube fitting: one small QP per timestep and side, maximizing the
//! corridor while staying clear of every sample.

use super::{AgentSample, LateralTube, TubeStep, WrapperConfig};
use crate::geometry::{Baseline, SplinePoint};
use crate::linalg::Mat;
use crate::optim::{solve_qp, QpOptions, QpProblem};

/// Hard profiles keep at least this clearance from each sample.
const SAMPLE_CLEARANCE: f64 = 1e-3;
const BIG: f64 = 1e19;

/// Linear-interpolation weights of `p` on the knot grid.
fn knot_weights(p: f64, p0: f64, dp: f64, k: usize) -> (usize, f64) {
    let u = ((p - p0) / dp).clamp(0.0, (k - 1) as f64);
    let mut i = u as usize;
    if i >= k - 1 {
        i = k - 2;
    }
    (i, u - i as f64)
}

/// Maximize one side's knot values subject to sample clearances and a
/// +-max_ray clamp. `side` is +1 for the left profile, -1 for the right.
pub(crate) fn solve_side(
    samples: &[(f64, f64)],
    k: usize,
    p0: f64,
    dp: f64,
    side: f64,
    max_ray: f64,
    c_tube: f64,
) -> Vec<f64> {
    if samples.is_empty() {
        return vec![side * max_ray; k];
    }
    // H = 2 c R1' R1 with R1 the first-difference matrix
    let mut r1 = Mat::zeros(k - 1, k);
    for i in 0..k - 1 {
        r1[(i, i)] = -1.0;
        r1[(i, i + 1)] = 1.0;
    }
    let mut h = r1.gram();
    h.scale(2.0 * c_tube);
    let g = vec![-side; k];

    let m = samples.len();
    let mut a = Mat::zeros(m + k, k);
    let mut lower = vec![0.0; m + k];
    let mut upper = vec![0.0; m + k];
    let mut extreme = side * max_ray;
    for (row, &(p, n)) in samples.iter().enumerate() {
        let (i, frac) = knot_weights(p, p0, dp, k);
        a[(row, i)] = 1.0 - frac;
        a[(row, i + 1)] = frac;
        if side > 0.0 {
            lower[row] = -BIG;
            upper[row] = n - SAMPLE_CLEARANCE;
            extreme = extreme.min(n - 1.0);
        } else {
            lower[row] = n + SAMPLE_CLEARANCE;
            upper[row] = BIG;
            extreme = extreme.max(n + 1.0);
        }
    }
    for i in 0..k {
        a[(m + i, i)] = 1.0;
        lower[m + i] = (-max_ray).min(extreme);
        upper[m + i] = max_ray.max(extreme);
    }

    let problem = QpProblem { h, g, a, lower, upper };
    let (mut values, _report) = solve_qp(&problem, QpOptions::default());

    // push residual solver slack out of the profile so every sample keeps
    // its full clearance
    for _ in 0..3 {
        let mut moved = false;
        for &(p, n) in samples {
            let (i, frac) = knot_weights(p, p0, dp, k);
            let val = (1.0 - frac) * values[i] + frac * values[i + 1];
            let excess = side * (val - (n - side * SAMPLE_CLEARANCE));
            if excess > 0.0 {
                values[i] -= side * excess;
                values[i + 1] -= side * excess;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    values
}

pub fn fit_lateral_tube(
    lateral_dynamic: &[Vec<AgentSample>],
    static_samples: &[SplinePoint],
    baseline: &Baseline,
    horizon_steps: usize,
    config: &WrapperConfig,
) -> LateralTube {
    let (lo, hi) = baseline.domain();
    let k = (((hi - lo) / config.tube_knot_spacing).ceil() as usize + 1).max(2);
    let dp = (hi - lo) / (k - 1) as f64;

    let statics: Vec<(f64, f64)> = static_samples.iter().map(|s| (s.p, s.n)).collect();
    // most steps carry no dynamic samples and share one static-only solve
    let mut static_only: Option<(Vec<f64>, Vec<f64>)> = None;

    let mut steps = Vec::with_capacity(horizon_steps + 1);
    for t in 0..=horizon_steps {
        let dynamic = lateral_dynamic.get(t).map_or(&[][..], |v| &v[..]);
        let (left_hard, right_hard) = if dynamic.is_empty() {
            if static_only.is_none() {
                static_only = Some(solve_both(&statics, k, lo, dp, config));
            }
            static_only.clone().unwrap()
        } else {
            let mut all = statics.clone();
            all.extend(dynamic.iter().map(|s| (s.point.p, s.point.n)));
            solve_both(&all, k, lo, dp, config)
        };
        steps.push(finish_step(left_hard, right_hard, config.soft_margin));
    }

    LateralTube {
        knot_p0: lo,
        knot_dp: dp,
        steps,
    }
}

fn solve_both(
    samples: &[(f64, f64)],
    k: usize,
    p0: f64,
    dp: f64,
    config: &WrapperConfig,
) -> (Vec<f64>, Vec<f64>) {
    let left: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, n)| n > 0.0).collect();
    let right: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, n)| n <= 0.0).collect();
    let lh = solve_side(&left, k, p0, dp, 1.0, config.max_ray, config.tube_reg);
    let rh = solve_side(&right, k, p0, dp, -1.0, config.max_ray, config.tube_reg);
    (lh, rh)
}

/// Enforce the knot-wise ordering invariant and derive the soft profiles.
fn finish_step(mut left_hard: Vec<f64>, mut right_hard: Vec<f64>, margin: f64) -> TubeStep {
    let k = left_hard.len();
    let mut left_soft = vec![0.0; k];
    let mut right_soft = vec![0.0; k];
    for i in 0..k {
        if left_hard[i] < right_hard[i] {
            let mid = 0.5 * (left_hard[i] + right_hard[i]);
            left_hard[i] = mid;
            right_hard[i] = mid;
        }
        let mut ls = left_hard[i] - margin;
        let mut rs = right_hard[i] + margin;
        if ls < rs {
            let mid = 0.5 * (ls + rs);
            ls = mid;
            rs = mid;
        }
        left_soft[i] = ls;
        right_soft[i] = rs;
    }
    TubeStep {
        left_hard,
        left_soft,
        right_hard,
        right_soft,
    }
}
