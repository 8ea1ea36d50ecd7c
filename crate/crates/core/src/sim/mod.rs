//! Deterministic closed-loop simulator: replayed non-reactive agents,
//! ground-truth oracle predictions, and safety/comfort/progress metrics.

pub mod generators;
mod metrics;

pub use metrics::{compute_metrics, threshold_accel, threshold_decel, MetricEvent, MetricsReport};

use serde::{Deserialize, Serialize};

use crate::geometry::{Sketch, Waypoint};
use crate::maneuver::{
    extract_maneuver, AgentPrediction, Maneuver, MapRaster, Scene, WrapperConfig, WrapperMode,
};
use crate::mpc::{
    braking_fallback, dynamics_step, solve, state_to_pose, MpcControl, MpcError, MpcParams,
    MpcSolution, MpcState,
};
use crate::planners::{astar_path, idm_rollout, synthetic_sketch, IdmParams, SyntheticKind};
use crate::vehicle::AvPose;

/// One timestamped pose of a replayed agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// A non-reactive agent: a convex body-frame footprint replayed along
/// timestamped poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    /// convex polygon in the agent body frame
    pub footprint: Vec<[f64; 2]>,
    pub samples: Vec<TrackSample>,
}

impl AgentTrack {
    /// Pose at time `t`, linearly interpolated and clamped to the ends.
    pub fn pose_at(&self, t: f64) -> TrackSample {
        let s = &self.samples;
        if t <= s[0].t {
            return s[0];
        }
        if t >= s[s.len() - 1].t {
            return s[s.len() - 1];
        }
        let i = s.partition_point(|smp| smp.t <= t).min(s.len() - 1);
        let (a, b) = (s[i - 1], s[i]);
        let f = (t - a.t) / (b.t - a.t);
        let mut dh = b.heading - a.heading;
        while dh > std::f64::consts::PI {
            dh -= 2.0 * std::f64::consts::PI;
        }
        while dh < -std::f64::consts::PI {
            dh += 2.0 * std::f64::consts::PI;
        }
        TrackSample {
            t,
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            heading: a.heading + f * dh,
        }
    }

    pub fn hull_at(&self, t: f64) -> Vec<[f64; 2]> {
        let pose = self.pose_at(t);
        let (s, c) = pose.heading.sin_cos();
        self.footprint
            .iter()
            .map(|[lx, ly]| [pose.x + lx * c - ly * s, pose.y + lx * s + ly * c])
            .collect()
    }
}

/// A complete closed-loop scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub map: MapRaster,
    pub av_init: AvPose,
    /// reference polyline toward the goal
    pub route: Vec<Waypoint>,
    pub agents: Vec<AgentTrack>,
    /// seconds
    pub duration: f64,
    /// Hz
    pub sim_rate: f64,
    /// seconds of ground-truth replay before closing the loop
    pub warmup: f64,
}

/// Ground-truth "oracle" predictions: each agent's future track sampled on
/// the horizon grid, holding the last pose past the end.
pub fn oracle_predict(
    scenario: &Scenario,
    t: f64,
    horizon: usize,
    dt: f64,
) -> Vec<AgentPrediction> {
    scenario
        .agents
        .iter()
        .map(|a| AgentPrediction {
            agent_id: a.agent_id,
            hulls: (0..=horizon).map(|k| a.hull_at(t + k as f64 * dt)).collect(),
        })
        .collect()
}

/// Project a point onto a polyline; returns (arc length, unsigned lateral
/// distance).
pub(crate) fn project_polyline(route: &[Waypoint], x: f64, y: f64) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    let mut acc = 0.0;
    for pair in route.windows(2) {
        let dx = pair[1].x - pair[0].x;
        let dy = pair[1].y - pair[0].y;
        let len2 = dx * dx + dy * dy;
        let f = if len2 > 0.0 {
            (((x - pair[0].x) * dx + (y - pair[0].y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let px = pair[0].x + f * dx;
        let py = pair[0].y + f * dy;
        let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        if d < best.1 {
            best = (acc + f * len2.sqrt(), d);
        }
        acc += len2.sqrt();
    }
    best
}

fn polyline_point(route: &[Waypoint], s: f64) -> (f64, f64, f64) {
    let mut acc = 0.0;
    for pair in route.windows(2) {
        let dx = pair[1].x - pair[0].x;
        let dy = pair[1].y - pair[0].y;
        let len = (dx * dx + dy * dy).sqrt();
        let is_last = std::ptr::eq(pair.as_ptr(), &route[route.len() - 2]);
        if s <= acc + len || is_last {
            let f = if len > 0.0 { (s - acc) / len } else { 0.0 };
            return (pair[0].x + f * dx, pair[0].y + f * dy, dy.atan2(dx));
        }
        acc += len;
    }
    let last = route[route.len() - 1];
    (last.x, last.y, 0.0)
}

/// Sketch source driven each cycle.
#[derive(Debug, Clone)]
pub enum Planner {
    Idm(IdmParams),
    Astar,
    Synthetic(SyntheticKind),
    /// recorded sketches, one per cycle (last one repeats)
    Fixture(Vec<Sketch>),
}

impl Planner {
    fn sketch(
        &self,
        scenario: &Scenario,
        scene: &Scene,
        av: &AvPose,
        cycle: usize,
        config: &WrapperConfig,
        params: &MpcParams,
    ) -> Option<Sketch> {
        match self {
            Planner::Idm(idm) => {
                let (s_av, _) = project_polyline(&scenario.route, av.x, av.y);
                // rebase the route at the AV's projection
                let mut route = vec![Waypoint::new(av.x, av.y)];
                let mut acc = 0.0;
                for pair in scenario.route.windows(2) {
                    let len = ((pair[1].x - pair[0].x).powi(2)
                        + (pair[1].y - pair[0].y).powi(2))
                    .sqrt();
                    acc += len;
                    if acc > s_av + 0.5 {
                        route.push(pair[1]);
                    }
                }
                if route.len() < 2 {
                    let (x, y, th) = polyline_point(&scenario.route, s_av + 20.0);
                    let _ = th;
                    route.push(Waypoint::new(x.max(av.x + 1.0), y));
                }
                // nearest agent ahead in the route corridor becomes the lead
                let mut lead: Option<(f64, usize)> = None;
                for (ai, agent) in scene.agents.iter().enumerate() {
                    let hull = &agent.hulls[0];
                    let n = hull.len() as f64;
                    let (cx, cy) = hull
                        .iter()
                        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
                    let (s_a, d) = project_polyline(&scenario.route, cx / n, cy / n);
                    if d < 2.5 && s_a > s_av && lead.map(|(s, _)| s_a < s).unwrap_or(true) {
                        lead = Some((s_a, ai));
                    }
                }
                // roll out well past the MPC horizon so the baseline never
                // ends inside the plan (an active domain-end bound in free
                // flow both throttles progress and stalls the solver)
                let steps = 2 * config.horizon_steps;
                let track: Option<Vec<(f64, f64)>> = lead.map(|(s_a, ai)| {
                    let agent = &scene.agents[ai];
                    let gap0 =
                        (s_a - s_av - params.vehicle.front_length - 2.0).max(0.1);
                    (0..steps)
                        .map(|k| {
                            let h0 = &agent.hulls[k.min(agent.hulls.len() - 1)];
                            let h1 = &agent.hulls[(k + 1).min(agent.hulls.len() - 1)];
                            let c = |h: &Vec<[f64; 2]>| {
                                let n = h.len() as f64;
                                let (sx, sy) = h
                                    .iter()
                                    .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
                                (sx / n, sy / n)
                            };
                            let (x0, y0) = c(h0);
                            let (x1, y1) = c(h1);
                            let v = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() / config.dt;
                            (gap0, v)
                        })
                        .collect()
                });
                Some(idm_rollout(
                    av.v,
                    track.as_deref(),
                    &route,
                    idm,
                    steps,
                    config.dt,
                ))
            }
            Planner::Astar => {
                let goal = scenario.route.last().unwrap();
                let goal_heading = {
                    let n = scenario.route.len();
                    let a = &scenario.route[n - 2];
                    (goal.y - a.y).atan2(goal.x - a.x)
                };
                // static obstacles only: block agents that never move
                let mut map = scenario.map.clone();
                let statics: Vec<Vec<[f64; 2]>> = scenario
                    .agents
                    .iter()
                    .filter(|a| {
                        a.samples.windows(2).all(|w| {
                            (w[1].x - w[0].x).abs() < 1e-9 && (w[1].y - w[0].y).abs() < 1e-9
                        })
                    })
                    .map(|a| a.hull_at(0.0))
                    .collect();
                crate::planners::block_hulls(&mut map, &statics);
                astar_path(&map, (av.x, av.y, av.heading), (goal.x, goal.y, goal_heading)).ok()
            }
            Planner::Synthetic(kind) => Some(synthetic_sketch(*kind, scene, av)),
            Planner::Fixture(sketches) => {
                Some(sketches[cycle.min(sketches.len() - 1)].clone())
            }
        }
    }
}

/// One simulation cycle's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimCycle {
    pub t: f64,
    pub av: AvPose,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch: Option<Sketch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<Maneuver>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<MpcSolution>,
    pub solver_failed: bool,
    pub warmup: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario_id: String,
    pub mode: WrapperMode,
    pub cycles: Vec<SimCycle>,
    pub solver_fail_count: usize,
}

/// Ground-truth AV pose during warmup: constant-speed advance along the
/// route from the initial pose.
pub fn warmup_pose(scenario: &Scenario, t: f64) -> AvPose {
    let (s0, _) = project_polyline(&scenario.route, scenario.av_init.x, scenario.av_init.y);
    let s = s0 + scenario.av_init.v * t;
    let (x, y, heading) = polyline_point(&scenario.route, s);
    AvPose {
        x,
        y,
        heading,
        v: scenario.av_init.v,
        a: 0.0,
        steering: 0.0,
    }
}

/// Run the wrapper in closed loop at `sim_rate`. During warmup the AV
/// replays ground truth; afterwards each cycle runs
/// planner -> extract_maneuver -> solve -> first control through the
/// bicycle model. On solver failure the braking fallback is applied and
/// the cycle is flagged.
pub fn run_closed_loop(
    scenario: &Scenario,
    planner: &Planner,
    config: &WrapperConfig,
    params: &MpcParams,
) -> SimLog {
    let dt_sim = 1.0 / scenario.sim_rate;
    let n_cycles = (scenario.duration * scenario.sim_rate).round() as usize;
    let mut av = scenario.av_init;
    let mut warm: Option<MpcSolution> = None;
    let mut cycles = Vec::with_capacity(n_cycles);
    let mut solver_fail_count = 0;

    for cycle in 0..n_cycles {
        let t = cycle as f64 * dt_sim;
        if t < scenario.warmup {
            av = warmup_pose(scenario, t);
            cycles.push(SimCycle {
                t,
                av,
                sketch: None,
                maneuver: None,
                solution: None,
                solver_failed: false,
                warmup: true,
            });
            continue;
        }

        let scene = Scene {
            map: Some(scenario.map.clone()),
            agents: oracle_predict(scenario, t, config.horizon_steps, config.dt),
        };
        let sketch = planner.sketch(scenario, &scene, &av, cycle, config, params);
        let mut solver_failed = false;
        let mut maneuver_out = None;
        let mut solution_out = None;

        let step_result = sketch.as_ref().and_then(|sk| {
            extract_maneuver(sk, &scene, &av, &params.vehicle, config).ok()
        });

        match step_result {
            Some(maneuver) => {
                let x0 = MpcState::from_pose(&av, &maneuver.baseline);
                let solution = match solve(&maneuver, &x0, params, warm.as_ref()) {
                    Ok(s) => s,
                    Err(MpcError::SolverFailed { .. }) | Err(_) => {
                        solver_failed = true;
                        braking_fallback(&maneuver, &x0, params)
                    }
                };
                // execute the first control over one sim step; the steering
                // rate is the plan's per-step delta spread over maneuver.dt
                let u = MpcControl {
                    j: solution.controls[0].j,
                    dbeta: solution.controls[0].dbeta * dt_sim / maneuver.dt,
                };
                if let Ok(next) = dynamics_step(&x0, &u, dt_sim, &maneuver.baseline, params) {
                    av = state_to_pose(&next, &maneuver.baseline);
                } else {
                    solver_failed = true;
                    av = coast_brake(&av, dt_sim, params);
                }
                warm = Some(solution.clone());
                maneuver_out = Some(maneuver);
                solution_out = Some(solution);
            }
            None => {
                // no usable sketch or extraction failed: brake in place
                solver_failed = true;
                warm = None;
                av = coast_brake(&av, dt_sim, params);
            }
        }
        if solver_failed {
            solver_fail_count += 1;
        }
        cycles.push(SimCycle {
            t,
            av,
            sketch,
            maneuver: maneuver_out,
            solution: solution_out,
            solver_failed,
            warmup: false,
        });
    }

    SimLog {
        scenario_id: scenario.id.clone(),
        mode: config.mode,
        cycles,
        solver_fail_count,
    }
}

/// Straight-line braking used when no maneuver is available.
fn coast_brake(av: &AvPose, dt: f64, params: &MpcParams) -> AvPose {
    let a = params.brake_decel;
    let v_new = (av.v + a * dt).max(0.0);
    let ds = 0.5 * (av.v + v_new) * dt;
    AvPose {
        x: av.x + ds * av.heading.cos(),
        y: av.y + ds * av.heading.sin(),
        heading: av.heading,
        v: v_new,
        a: if v_new > 0.0 { a } else { 0.0 },
        steering: av.steering,
    }
}
