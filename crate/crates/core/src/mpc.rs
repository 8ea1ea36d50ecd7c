//! Curvilinear kinematic-bicycle MPC over a maneuver: single shooting on
//! the control sequence, reverse-mode gradients through the rollout, and an
//! augmented-Lagrangian outer solve.

use serde::{Deserialize, Serialize};

use crate::geometry::Baseline;
use crate::maneuver::{LateralTube, Maneuver, TubeLine};
use crate::optim::{solve_nlp_warm, DualWarmStart, NlpOptions, NlpProblem, SolveReport, SolveStatus};
use crate::vehicle::{AvPose, VehicleGeometry};

/// Offset factor 1 - n*kappa below which the state sits past the center of
/// curvature and the curvilinear frame degenerates.
const SINGULAR_OFFSET: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum MpcError {
    #[error("offset factor 1 - n*kappa = {factor:.4} at p = {p:.3} is singular")]
    SingularOffset { p: f64, factor: f64 },
    #[error("solver failed: status {:?}, violation {:.3e}", solution.report.status, solution.report.primal_residual)]
    SolverFailed { solution: Box<MpcSolution> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcState {
    pub p: f64,
    pub n: f64,
    /// Heading relative to the baseline tangent.
    pub omega: f64,
    pub v: f64,
    pub a: f64,
    /// Steering angle.
    pub beta: f64,
}

impl MpcState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.p, self.n, self.omega, self.v, self.a, self.beta]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        MpcState {
            p: x[0],
            n: x[1],
            omega: x[2],
            v: x[3],
            a: x[4],
            beta: x[5],
        }
    }

    /// Project a Cartesian pose into the baseline frame.
    pub fn from_pose(pose: &AvPose, baseline: &Baseline) -> Self {
        let proj = baseline.project_point([pose.x, pose.y]).point;
        let t = baseline.eval_tangent(baseline.clamp_to_domain(proj.p)).unwrap();
        let mut omega = pose.heading - t[1].atan2(t[0]);
        while omega > std::f64::consts::PI {
            omega -= 2.0 * std::f64::consts::PI;
        }
        while omega < -std::f64::consts::PI {
            omega += 2.0 * std::f64::consts::PI;
        }
        MpcState {
            p: proj.p,
            n: proj.n,
            omega,
            v: pose.v,
            a: pose.a,
            beta: pose.steering,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcControl {
    /// Jerk, m/s^3.
    pub j: f64,
    /// Steering change per step, radians.
    pub dbeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcParams {
    pub vehicle: VehicleGeometry,
    pub beta_max: f64,
    pub j_min: f64,
    pub j_max: f64,
    pub dbeta_max: f64,
    pub v_max: f64,
    /// Target speed when tracking references are absent.
    pub v_limit: f64,
    pub w_track: f64,
    pub w_n: f64,
    pub w_omega: f64,
    pub w_j: f64,
    pub w_dbeta: f64,
    pub w_soft: f64,
    pub w_speed: f64,
    /// Quadratic hinge keeping planned speed/slip inside their boxes. The
    /// executed dynamics clamp those states; the planning model instead
    /// integrates them raw and pays this penalty, which keeps the solver's
    /// objective smooth where the clamp would introduce a kink.
    pub w_state_box: f64,
    /// Deceleration commanded by the braking fallback, m/s^2.
    pub brake_decel: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        MpcParams {
            vehicle: VehicleGeometry::default(),
            beta_max: 0.6,
            j_min: -8.0,
            j_max: 8.0,
            dbeta_max: 0.05,
            v_max: 15.0,
            v_limit: 10.0,
            w_track: 1.0,
            w_n: 0.5,
            w_omega: 1.0,
            w_j: 0.05,
            w_dbeta: 20.0,
            w_soft: 50.0,
            w_speed: 0.2,
            w_state_box: 50.0,
            brake_decel: -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub states: Vec<MpcState>,
    pub controls: Vec<MpcControl>,
    pub report: SolveReport,
    /// (x, y, heading) per state, derived from the baseline frame.
    pub cartesian: Vec<[f64; 3]>,
    /// Final multiplier estimates, reused to warm-start the next cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duals: Option<DualWarmStart>,
}

// state indices
const IP: usize = 0;
const IN: usize = 1;
const IW: usize = 2;
const IV: usize = 3;
const IA: usize = 4;
const IB: usize = 5;

#[derive(Clone)]
struct StepJac {
    a: [[f64; 6]; 6],
    b: [[f64; 2]; 6],
}

impl StepJac {
    fn zero() -> Self {
        StepJac {
            a: [[0.0; 6]; 6],
            b: [[0.0; 2]; 6],
        }
    }
}

/// One explicit-Euler step. Returns the next state and the raw offset
/// factor 1 - n*kappa (saturated at SINGULAR_OFFSET for the update itself).
/// When `clamp_states` is false the speed and slip boxes are not enforced;
/// the planning model uses this raw variant plus a hinge penalty so the
/// solver never sees the clamp kink, while executed dynamics keep the clamp.
fn step(
    x: &[f64; 6],
    u: &[f64; 2],
    dt: f64,
    baseline: &Baseline,
    params: &MpcParams,
    clamp_states: bool,
    mut jac: Option<&mut StepJac>,
) -> ([f64; 6], f64) {
    let fd = baseline.frame_derivatives(x[IP]);
    let (g, gp, kappa, kp) = (fd.g, fd.g_prime, fd.kappa, fd.kappa_prime);
    let (sin_w, cos_w) = x[IW].sin_cos();
    let v = x[IV];
    let d_raw = 1.0 - x[IN] * kappa;
    let saturated = d_raw <= SINGULAR_OFFSET;
    let d = d_raw.max(SINGULAR_OFFSET);

    let sdot = v * cos_w / d;
    let pdot = sdot / g;
    let ndot = v * sin_w;
    let tan_b = x[IB].tan();
    let wdot = v * tan_b / params.vehicle.wheelbase - kappa * sdot;

    let v_next_raw = v + dt * x[IA];
    let v_clamped = clamp_states && (v_next_raw < 0.0 || v_next_raw > params.v_max);
    let b_next_raw = x[IB] + u[1];
    let b_clamped = clamp_states && b_next_raw.abs() > params.beta_max;

    let next = [
        x[IP] + dt * pdot,
        x[IN] + dt * ndot,
        x[IW] + dt * wdot,
        if clamp_states {
            v_next_raw.clamp(0.0, params.v_max)
        } else {
            v_next_raw
        },
        x[IA] + dt * u[0],
        if clamp_states {
            b_next_raw.clamp(-params.beta_max, params.beta_max)
        } else {
            b_next_raw
        },
    ];

    if let Some(j) = jac.as_deref_mut() {
        *j = StepJac::zero();
        // d/dp and d/dn of the offset factor (zero when saturated)
        let (dd_dp, dd_dn) = if saturated {
            (0.0, 0.0)
        } else {
            (-x[IN] * kp, -kappa)
        };
        let ds_dp = -sdot / d * dd_dp;
        let ds_dn = -sdot / d * dd_dn;
        let ds_dw = -v * sin_w / d;
        let ds_dv = cos_w / d;

        let dp_dp = (ds_dp * g - sdot * gp) / (g * g);
        let dp_dn = ds_dn / g;
        let dp_dw = ds_dw / g;
        let dp_dv = ds_dv / g;

        let dw_dp = -kp * sdot - kappa * ds_dp;
        let dw_dn = -kappa * ds_dn;
        let dw_dw = -kappa * ds_dw;
        let dw_dv = tan_b / params.vehicle.wheelbase - kappa * ds_dv;
        let cos_b = x[IB].cos();
        let dw_db = v / (params.vehicle.wheelbase * cos_b * cos_b);

        j.a[IP] = [1.0 + dt * dp_dp, dt * dp_dn, dt * dp_dw, dt * dp_dv, 0.0, 0.0];
        j.a[IN] = [0.0, 1.0, dt * v * cos_w, dt * sin_w, 0.0, 0.0];
        j.a[IW] = [dt * dw_dp, dt * dw_dn, 1.0 + dt * dw_dw, dt * dw_dv, 0.0, dt * dw_db];
        if !v_clamped {
            j.a[IV][IV] = 1.0;
            j.a[IV][IA] = dt;
        }
        j.a[IA][IA] = 1.0;
        j.b[IA][0] = dt;
        if !b_clamped {
            j.a[IB][IB] = 1.0;
            j.b[IB][1] = 1.0;
        }
    }

    (next, d_raw)
}

/// Explicit-Euler transition of the curvilinear bicycle. Errors when the
/// lateral offset reaches the local center of curvature.
pub fn dynamics_step(
    x: &MpcState,
    u: &MpcControl,
    dt: f64,
    baseline: &Baseline,
    params: &MpcParams,
) -> Result<MpcState, MpcError> {
    let (next, d_raw) = step(&x.to_array(), &[u.j, u.dbeta], dt, baseline, params, true, None);
    if d_raw <= SINGULAR_OFFSET {
        return Err(MpcError::SingularOffset {
            p: x.p,
            factor: d_raw,
        });
    }
    Ok(MpcState::from_array(next))
}

/// Four signed clearance residuals (front-left, front-right, rear-left,
/// rear-right); r <= 0 iff the corner stays inside the given tube lines.
/// Optionally fills d(row)/d(p, n, omega).
fn corner_rows(
    x: &[f64; 6],
    tube: &LateralTube,
    t: usize,
    left: TubeLine,
    right: TubeLine,
    veh: &VehicleGeometry,
    baseline: &Baseline,
    mut grads: Option<&mut [[f64; 3]; 4]>,
) -> [f64; 4] {
    let fd = baseline.frame_derivatives(x[IP]);
    let (g, gp) = (fd.g, fd.g_prime);
    let (sin_w, cos_w) = x[IW].sin_cos();
    let hw = 0.5 * veh.width;
    let (fl, rl) = (veh.front_length, veh.rear_length);

    let p_f = x[IP] + fl * cos_w / g;
    let p_r = x[IP] - rl * cos_w / g;
    let (lf, lf_s) = tube.eval(t, left, p_f);
    let (rf, rf_s) = tube.eval(t, right, p_f);
    let (lr, lr_s) = tube.eval(t, left, p_r);
    let (rr, rr_s) = tube.eval(t, right, p_r);

    let rows = [
        x[IN] + hw + fl * sin_w - lf,
        hw - x[IN] - fl * sin_w + rf,
        x[IN] + hw - rl * sin_w - lr,
        hw - x[IN] + rl * sin_w + rr,
    ];

    if let Some(gr) = grads.as_deref_mut() {
        let dpf_dp = 1.0 - fl * cos_w * gp / (g * g);
        let dpf_dw = -fl * sin_w / g;
        let dpr_dp = 1.0 + rl * cos_w * gp / (g * g);
        let dpr_dw = rl * sin_w / g;
        gr[0] = [-lf_s * dpf_dp, 1.0, fl * cos_w - lf_s * dpf_dw];
        gr[1] = [rf_s * dpf_dp, -1.0, -fl * cos_w + rf_s * dpf_dw];
        gr[2] = [-lr_s * dpr_dp, 1.0, -rl * cos_w - lr_s * dpr_dw];
        gr[3] = [rr_s * dpr_dp, -1.0, rl * cos_w + rr_s * dpr_dw];
    }
    rows
}

/// Hard-tube footprint residuals for one state (<= 0 feasible).
pub fn footprint_constraints(
    x: &MpcState,
    tube: &LateralTube,
    t: usize,
    vehicle: &VehicleGeometry,
    baseline: &Baseline,
) -> [f64; 4] {
    corner_rows(
        &x.to_array(),
        tube,
        t,
        TubeLine::LeftHard,
        TubeLine::RightHard,
        vehicle,
        baseline,
        None,
    )
}

/// Rows per horizon state: 4 hard footprint + lower/upper station bounds.
const ROWS_PER_STATE: usize = 6;

struct MpcProblem<'a> {
    maneuver: &'a Maneuver,
    x0: [f64; 6],
    params: &'a MpcParams,
    /// Bound progress converted to station once, per timestep.
    s_lower: Vec<f64>,
    s_upper: Vec<f64>,
    /// Last rollout, keyed by the control vector: objective, constraints,
    /// and the Jacobian product are all queried at the same iterate.
    cache: std::cell::RefCell<Option<RolloutCache>>,
}

struct RolloutCache {
    z: Vec<f64>,
    want_jac: bool,
    states: Vec<[f64; 6]>,
    jacs: Vec<StepJac>,
}

impl<'a> MpcProblem<'a> {
    fn new(maneuver: &'a Maneuver, x0: &MpcState, params: &'a MpcParams) -> Self {
        let b = &maneuver.baseline;
        MpcProblem {
            maneuver,
            x0: x0.to_array(),
            params,
            s_lower: maneuver.bounds.p_lower.iter().map(|&p| b.station_of_clamped(p)).collect(),
            s_upper: maneuver.bounds.p_upper.iter().map(|&p| b.station_of_clamped(p)).collect(),
            cache: std::cell::RefCell::new(None),
        }
    }

    fn rollout_cached(&self, z: &[f64], want_jac: bool) -> (Vec<[f64; 6]>, Vec<StepJac>) {
        {
            let cache = self.cache.borrow();
            if let Some(c) = cache.as_ref() {
                if c.z == z && (c.want_jac || !want_jac) {
                    return (c.states.clone(), c.jacs.clone());
                }
            }
        }
        let (states, jacs) = self.rollout(z, want_jac);
        *self.cache.borrow_mut() = Some(RolloutCache {
            z: z.to_vec(),
            want_jac,
            states: states.clone(),
            jacs: jacs.clone(),
        });
        (states, jacs)
    }

    fn horizon(&self) -> usize {
        self.maneuver.horizon_steps
    }

    /// Per-variable scale normalizing each control box to roughly [-1, 1].
    /// Steering-rate columns carry curvature several orders of magnitude
    /// above the jerk columns; without this the inner solver cannot reach
    /// the gradient tolerance in double precision.
    fn var_scale(&self, i: usize) -> f64 {
        if i % 2 == 0 {
            1.0
        } else {
            self.params.dbeta_max
        }
    }

    fn unscale_z(&self, z_hat: &[f64]) -> Vec<f64> {
        z_hat
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.var_scale(i))
            .collect()
    }

    fn rollout(&self, z: &[f64], want_jac: bool) -> (Vec<[f64; 6]>, Vec<StepJac>) {
        let n = self.horizon();
        let mut states = Vec::with_capacity(n + 1);
        let mut jacs = if want_jac {
            vec![StepJac::zero(); n]
        } else {
            Vec::new()
        };
        states.push(self.x0);
        for k in 0..n {
            let u = [z[2 * k], z[2 * k + 1]];
            let (next, _) = step(
                states.last().unwrap(),
                &u,
                self.maneuver.dt,
                &self.maneuver.baseline,
                self.params,
                false,
                if want_jac { Some(&mut jacs[k]) } else { None },
            );
            states.push(next);
        }
        (states, jacs)
    }

    /// Bumper progress offsets and the longitudinal residual pair for one
    /// state, with optional d/d(p, omega) rows.
    fn longitudinal_rows(
        &self,
        x: &[f64; 6],
        t: usize,
        mut grads: Option<&mut [[f64; 2]; 2]>,
    ) -> [f64; 2] {
        let b = &self.maneuver.baseline;
        let veh = &self.params.vehicle;
        let fd = b.frame_derivatives(x[IP]);
        let (g, gp) = (fd.g, fd.g_prime);
        let (sin_w, cos_w) = x[IW].sin_cos();
        let p_f = x[IP] + veh.front_length * cos_w / g;
        let p_r = x[IP] - veh.rear_length * cos_w / g;
        let rows = [
            self.s_lower[t] - b.station_of_clamped(p_r),
            b.station_of_clamped(p_f) - self.s_upper[t],
        ];
        if let Some(gr) = grads.as_deref_mut() {
            let dpf_dp = 1.0 - veh.front_length * cos_w * gp / (g * g);
            let dpf_dw = -veh.front_length * sin_w / g;
            let dpr_dp = 1.0 + veh.rear_length * cos_w * gp / (g * g);
            let dpr_dw = veh.rear_length * sin_w / g;
            let sr = b.station_slope(p_r);
            let sf = b.station_slope(p_f);
            gr[0] = [-sr * dpr_dp, -sr * dpr_dw];
            gr[1] = [sf * dpf_dp, sf * dpf_dw];
        }
        rows
    }

    /// Whether the horizon-end upper bound is an actual constraint rather
    /// than the baseline simply running out. Braking for the latter is
    /// wrong: the sketch only covers the horizon and extends on replan.
    fn terminal_bound_real(&self) -> bool {
        let b = &self.maneuver.baseline;
        let (_, hi) = b.domain();
        self.s_upper[self.horizon()] < b.station_of_clamped(hi) - 1e-6
    }

    /// Terminal stopping row: the last state must be able to come to rest
    /// before the upper bound under the fallback deceleration, which keeps
    /// the plan from reaching the bound at speed right at the horizon end.
    /// c = v^2 - 2*|brake_decel|*(s_upper_N - s_front) <= 0
    fn terminal_stop_row(&self, x: &[f64; 6], grads: Option<&mut [f64; 3]>) -> f64 {
        if !self.terminal_bound_real() {
            if let Some(gr) = grads {
                *gr = [0.0; 3];
            }
            return -1.0;
        }
        let b = &self.maneuver.baseline;
        let veh = &self.params.vehicle;
        let decel = self.params.brake_decel.abs();
        let n = self.horizon();
        let fd = b.frame_derivatives(x[IP]);
        let (g, gp) = (fd.g, fd.g_prime);
        let (sin_w, cos_w) = x[IW].sin_cos();
        let p_f = x[IP] + veh.front_length * cos_w / g;
        let row = x[IV] * x[IV] - 2.0 * decel * (self.s_upper[n] - b.station_of_clamped(p_f));
        if let Some(gr) = grads {
            let dpf_dp = 1.0 - veh.front_length * cos_w * gp / (g * g);
            let dpf_dw = -veh.front_length * sin_w / g;
            let sf = b.station_slope(p_f);
            gr[0] = 2.0 * decel * sf * dpf_dp;
            gr[1] = 2.0 * decel * sf * dpf_dw;
            gr[2] = 2.0 * x[IV];
        }
        row
    }

    /// Stage/terminal state cost and its gradient for state k (1..=N).
    fn state_cost(&self, x: &[f64; 6], k: usize, gx: Option<&mut [f64; 6]>) -> f64 {
        let p = self.params;
        let m = self.maneuver;
        let terminal = k == m.horizon_steps;
        let mut cost = 0.0;
        let mut grad = [0.0; 6];

        if m.tracking.present {
            let w = if terminal { 10.0 * p.w_track } else { p.w_track };
            let ep = x[IP] - m.tracking.p_ref[k];
            let ev = x[IV] - m.tracking.v_ref[k];
            let ea = x[IA] - m.tracking.a_ref[k];
            cost += w * (ep * ep + ev * ev + ea * ea);
            grad[IP] += 2.0 * w * ep;
            grad[IV] += 2.0 * w * ev;
            grad[IA] += 2.0 * w * ea;
        } else {
            let ev = x[IV] - p.v_limit;
            cost += p.w_speed * ev * ev;
            grad[IV] += 2.0 * p.w_speed * ev;
        }

        cost += p.w_n * x[IN] * x[IN] + p.w_omega * x[IW] * x[IW];
        grad[IN] += 2.0 * p.w_n * x[IN];
        grad[IW] += 2.0 * p.w_omega * x[IW];

        // quadratic hinge standing in for the speed/slip clamps of the
        // executed dynamics (the planning rollout integrates them raw)
        let v_out = x[IV].min(0.0) + (x[IV] - p.v_max).max(0.0);
        cost += p.w_state_box * v_out * v_out;
        grad[IV] += 2.0 * p.w_state_box * v_out;
        let b_out = (x[IB] + p.beta_max).min(0.0) + (x[IB] - p.beta_max).max(0.0);
        cost += p.w_state_box * b_out * b_out;
        grad[IB] += 2.0 * p.w_state_box * b_out;

        let mut soft_g = [[0.0; 3]; 4];
        let rows = corner_rows(
            x,
            &m.tube,
            k,
            TubeLine::LeftSoft,
            TubeLine::RightSoft,
            &p.vehicle,
            &m.baseline,
            Some(&mut soft_g),
        );
        for (r, gr) in rows.iter().zip(&soft_g) {
            if *r > 0.0 {
                cost += p.w_soft * r * r;
                let s = 2.0 * p.w_soft * r;
                grad[IP] += s * gr[0];
                grad[IN] += s * gr[1];
                grad[IW] += s * gr[2];
            }
        }

        if let Some(g) = gx {
            *g = grad;
        }
        cost
    }
}

impl<'a> NlpProblem for MpcProblem<'a> {
    fn num_vars(&self) -> usize {
        2 * self.horizon()
    }

    fn num_constraints(&self) -> usize {
        // six rows per state plus the terminal stopping row
        ROWS_PER_STATE * self.horizon() + 1
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.horizon();
        let mut lower = Vec::with_capacity(2 * n);
        let mut upper = Vec::with_capacity(2 * n);
        let sj = self.var_scale(0);
        let sb = self.var_scale(1);
        for _ in 0..n {
            lower.push(self.params.j_min / sj);
            lower.push(-1.0);
            upper.push(self.params.j_max / sj);
            upper.push(self.params.dbeta_max / sb);
        }
        (lower, upper)
    }

    fn objective(&self, z_hat: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let z = self.unscale_z(z_hat);
        let z = z.as_slice();
        let n = self.horizon();
        let p = self.params;
        let want_grad = grad.is_some();
        let (states, jacs) = self.rollout_cached(z, want_grad);

        let mut cost = 0.0;
        let mut gx = vec![[0.0; 6]; n + 1];
        for k in 1..=n {
            cost += self.state_cost(
                &states[k],
                k,
                if want_grad { Some(&mut gx[k]) } else { None },
            );
        }
        for k in 0..n {
            cost += p.w_j * z[2 * k] * z[2 * k] + p.w_dbeta * z[2 * k + 1] * z[2 * k + 1];
        }

        if let Some(g) = grad {
            let mut lam = gx[n];
            for k in (0..n).rev() {
                let jac = &jacs[k];
                g[2 * k] = 2.0 * p.w_j * z[2 * k];
                g[2 * k + 1] = 2.0 * p.w_dbeta * z[2 * k + 1];
                for i in 0..6 {
                    g[2 * k] += jac.b[i][0] * lam[i];
                    g[2 * k + 1] += jac.b[i][1] * lam[i];
                }
                if k > 0 {
                    let mut prev = gx[k];
                    for j in 0..6 {
                        for i in 0..6 {
                            prev[j] += jac.a[i][j] * lam[i];
                        }
                    }
                    lam = prev;
                }
            }
            for (i, gi) in g.iter_mut().enumerate() {
                *gi *= self.var_scale(i);
            }
        }
        cost
    }

    fn constraints(&self, z_hat: &[f64], out: &mut [f64]) {
        let z = self.unscale_z(z_hat);
        let z = z.as_slice();
        let n = self.horizon();
        let (states, _) = self.rollout_cached(z, false);
        for k in 1..=n {
            let base = ROWS_PER_STATE * (k - 1);
            let hard = corner_rows(
                &states[k],
                &self.maneuver.tube,
                k,
                TubeLine::LeftHard,
                TubeLine::RightHard,
                &self.params.vehicle,
                &self.maneuver.baseline,
                None,
            );
            out[base..base + 4].copy_from_slice(&hard);
            let long = self.longitudinal_rows(&states[k], k, None);
            out[base + 4] = long[0];
            out[base + 5] = long[1];
        }
        out[ROWS_PER_STATE * n] = self.terminal_stop_row(&states[n], None);
    }

    fn constraints_vjp(&self, z_hat: &[f64], w: &[f64], grad: &mut [f64]) {
        let z = self.unscale_z(z_hat);
        let z = z.as_slice();
        let n = self.horizon();
        let (states, jacs) = self.rollout_cached(z, true);

        // per-state weighted constraint gradient C_k^T w_k
        let mut cx = vec![[0.0; 6]; n + 1];
        for k in 1..=n {
            let base = ROWS_PER_STATE * (k - 1);
            let mut hard_g = [[0.0; 3]; 4];
            corner_rows(
                &states[k],
                &self.maneuver.tube,
                k,
                TubeLine::LeftHard,
                TubeLine::RightHard,
                &self.params.vehicle,
                &self.maneuver.baseline,
                Some(&mut hard_g),
            );
            for (r, gr) in hard_g.iter().enumerate() {
                let wi = w[base + r];
                cx[k][IP] += wi * gr[0];
                cx[k][IN] += wi * gr[1];
                cx[k][IW] += wi * gr[2];
            }
            let mut long_g = [[0.0; 2]; 2];
            self.longitudinal_rows(&states[k], k, Some(&mut long_g));
            for (r, gr) in long_g.iter().enumerate() {
                let wi = w[base + 4 + r];
                cx[k][IP] += wi * gr[0];
                cx[k][IW] += wi * gr[1];
            }
        }
        {
            let mut stop_g = [0.0; 3];
            self.terminal_stop_row(&states[n], Some(&mut stop_g));
            let wi = w[ROWS_PER_STATE * n];
            cx[n][IP] += wi * stop_g[0];
            cx[n][IW] += wi * stop_g[1];
            cx[n][IV] += wi * stop_g[2];
        }

        grad.fill(0.0);
        let mut lam = cx[n];
        for k in (0..n).rev() {
            let jac = &jacs[k];
            for i in 0..6 {
                grad[2 * k] += jac.b[i][0] * lam[i];
                grad[2 * k + 1] += jac.b[i][1] * lam[i];
            }
            if k > 0 {
                let mut prev = cx[k];
                for j in 0..6 {
                    for i in 0..6 {
                        prev[j] += jac.a[i][j] * lam[i];
                    }
                }
                lam = prev;
            }
        }
        for (i, gi) in grad.iter_mut().enumerate() {
            *gi *= self.var_scale(i);
        }
    }
}

/// Map a baseline-frame state back to a Cartesian pose.
pub fn state_to_pose(state: &MpcState, baseline: &Baseline) -> AvPose {
    let p = baseline.clamp_to_domain(state.p);
    let c = baseline.eval(p).unwrap();
    let t = baseline.eval_tangent(p).unwrap();
    AvPose {
        x: c[0] - t[1] * state.n,
        y: c[1] + t[0] * state.n,
        heading: t[1].atan2(t[0]) + state.omega,
        v: state.v,
        a: state.a,
        steering: state.beta,
    }
}

fn build_solution(
    problem: &MpcProblem,
    z: &[f64],
    report: SolveReport,
) -> MpcSolution {
    let n = problem.horizon();
    let (raw, _) = problem.rollout(z, false);
    let b = &problem.maneuver.baseline;
    let states: Vec<MpcState> = raw.iter().map(|&x| MpcState::from_array(x)).collect();
    let cartesian = states
        .iter()
        .map(|s| {
            let pose = state_to_pose(s, b);
            [pose.x, pose.y, pose.heading]
        })
        .collect();
    let controls = (0..n)
        .map(|k| MpcControl {
            j: z[2 * k],
            dbeta: z[2 * k + 1],
        })
        .collect();
    MpcSolution {
        states,
        controls,
        report,
        cartesian,
        duals: None,
    }
}

/// Solve the maneuver from `x0`. A warm start shifts the previous control
/// sequence (replanning usually happens well inside one plan step, so the
/// previous grid is still the best guess) and reuses its multipliers.
pub fn solve(
    maneuver: &Maneuver,
    x0: &MpcState,
    params: &MpcParams,
    warm_start: Option<&MpcSolution>,
) -> Result<MpcSolution, MpcError> {
    let problem = MpcProblem::new(maneuver, x0, params);
    let n = problem.horizon();
    let mut z0 = vec![0.0; 2 * n];
    if let Some(prev) = warm_start {
        for k in 0..n {
            if let Some(u) = prev.controls.get(k) {
                z0[2 * k] = u.j / problem.var_scale(0);
                z0[2 * k + 1] = u.dbeta / problem.var_scale(1);
            }
        }
    }
    let (z_hat, report, duals) = solve_nlp_warm(
        &problem,
        &z0,
        NlpOptions {
            // feasibility stays tight; stationarity past 1e-3 buys nothing
            // at control granularity but costs most of the iterations
            dual_tol: Some(1e-3),
            ..NlpOptions::default()
        },
        warm_start.and_then(|w| w.duals.as_ref()),
    );
    let z = problem.unscale_z(&z_hat);
    let mut solution = build_solution(&problem, &z, report);
    solution.duals = Some(duals);
    if solution.report.status == SolveStatus::Converged {
        Ok(solution)
    } else {
        Err(MpcError::SolverFailed {
            solution: Box::new(solution),
        })
    }
}

/// Open-loop fallback when the solver fails: hold the steering and ramp
/// acceleration to `brake_decel` as fast as the jerk bounds allow.
pub fn braking_fallback(maneuver: &Maneuver, x0: &MpcState, params: &MpcParams) -> MpcSolution {
    let problem = MpcProblem::new(maneuver, x0, params);
    let n = problem.horizon();
    let mut z = vec![0.0; 2 * n];
    let mut a = x0.a;
    for k in 0..n {
        let j = ((params.brake_decel - a) / maneuver.dt).clamp(params.j_min, params.j_max);
        z[2 * k] = j;
        a += j * maneuver.dt;
    }
    let report = SolveReport {
        status: SolveStatus::Infeasible,
        iterations: 0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        objective: f64::INFINITY,
    };
    build_solution(&problem, &z, report)
}
