//! Safety/comfort/progress metrics over a closed-loop log: collision,
//! off-road, and harsh-acceleration episode counts plus distance traveled.

use serde::{Deserialize, Serialize};

use crate::mpc::MpcParams;

use super::{Scenario, SimLog};

/// Seconds of non-violation below which two violations merge into one
/// episode.
const DEBOUNCE_S: f64 = 1.0;

/// Distance below which an episode counts as stuck.
const STUCK_DIST_M: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub kind: String,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coll: usize,
    pub road: usize,
    pub accel: usize,
    pub dist: f64,
    pub stuck: bool,
    pub events: Vec<MetricEvent>,
}

/// Harsh-deceleration threshold: 2.5 m/s^2 below 10 m/s, 1.5 above
/// 20 m/s, linear in between.
pub fn threshold_decel(v: f64) -> f64 {
    if v <= 10.0 {
        2.5
    } else if v >= 20.0 {
        1.5
    } else {
        2.5 + (v - 10.0) / 10.0 * (1.5 - 2.5)
    }
}

/// Harsh-acceleration threshold: 2.0 m/s^2 below 10 m/s, 1.0 above
/// 15 m/s, linear in between.
pub fn threshold_accel(v: f64) -> f64 {
    if v <= 10.0 {
        2.0
    } else if v >= 15.0 {
        1.0
    } else {
        2.0 + (v - 10.0) / 5.0 * (1.0 - 2.0)
    }
}

fn polygon_orientation(poly: &[[f64; 2]]) -> f64 {
    let mut area = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        area += a[0] * b[1] - b[0] * a[1];
    }
    area.signum()
}

/// Signed penetration depth of `point` into convex `poly`: positive
/// inside, negative outside (distance to the nearest edge line).
fn depth_in_convex(point: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let orient = polygon_orientation(poly);
    let mut depth = f64::INFINITY;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let len = (ex * ex + ey * ey).sqrt();
        if len < 1e-12 {
            continue;
        }
        // inward normal for the polygon's winding
        let (nx, ny) = (-ey / len * orient, ex / len * orient);
        let d = (point[0] - a[0]) * nx + (point[1] - a[1]) * ny;
        depth = depth.min(d);
    }
    depth
}

fn project_onto(poly: &[[f64; 2]], ax: f64, ay: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in poly {
        let d = p[0] * ax + p[1] * ay;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis overlap test for two convex polygons.
pub(crate) fn convex_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let (ax, ay) = (-(q[1] - p[1]), q[0] - p[0]);
            let len = (ax * ax + ay * ay).sqrt();
            if len < 1e-12 {
                continue;
            }
            let (alo, ahi) = project_onto(a, ax / len, ay / len);
            let (blo, bhi) = project_onto(b, ax / len, ay / len);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Deepest-penetration contact point between two overlapping convex
/// polygons (approximated by the deepest contained vertex).
fn contact_point(a: &[[f64; 2]], b: &[[f64; 2]]) -> [f64; 2] {
    let mut best: Option<(f64, [f64; 2])> = None;
    for &v in b {
        let d = depth_in_convex(v, a);
        if d > 0.0 && best.map(|(bd, _)| d > bd).unwrap_or(true) {
            best = Some((d, v));
        }
    }
    for &v in a {
        let d = depth_in_convex(v, b);
        if d > 0.0 && best.map(|(bd, _)| d > bd).unwrap_or(true) {
            best = Some((d, v));
        }
    }
    if let Some((_, p)) = best {
        return p;
    }
    // edge-cross overlap without vertex containment: centroid midpoint
    let c = |poly: &[[f64; 2]]| {
        let n = poly.len() as f64;
        let (sx, sy) = poly.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        (sx / n, sy / n)
    };
    let (ax, ay) = c(a);
    let (bx, by) = c(b);
    [0.5 * (ax + bx), 0.5 * (ay + by)]
}

struct Debouncer {
    count: usize,
    last_violation: Option<f64>,
}

impl Debouncer {
    fn new() -> Self {
        Debouncer { count: 0, last_violation: None }
    }

    /// Returns true when this violation opens a new episode.
    fn violate(&mut self, t: f64) -> bool {
        let new_episode = match self.last_violation {
            Some(prev) => t - prev >= DEBOUNCE_S,
            None => true,
        };
        if new_episode {
            self.count += 1;
        }
        self.last_violation = Some(t);
        new_episode
    }
}

/// Compute the paper-style metrics for a closed-loop log. Only
/// post-warmup cycles are scored.
pub fn compute_metrics(log: &SimLog, scenario: &Scenario, params: &MpcParams) -> MetricsReport {
    let mut events = Vec::new();
    let mut coll: Vec<(u64, Debouncer)> = scenario
        .agents
        .iter()
        .map(|a| (a.agent_id, Debouncer::new()))
        .collect();
    let mut road = Debouncer::new();
    let mut accel = Debouncer::new();
    let mut dist = 0.0;
    let mut prev: Option<[f64; 2]> = None;

    for cycle in log.cycles.iter().filter(|c| !c.warmup) {
        let av = &cycle.av;
        if let Some(p) = prev {
            dist += ((av.x - p[0]).powi(2) + (av.y - p[1]).powi(2)).sqrt();
        }
        prev = Some([av.x, av.y]);

        let rect = params.vehicle.corners(av.x, av.y, av.heading);
        for (agent, (id, deb)) in scenario.agents.iter().zip(coll.iter_mut()) {
            let hull = agent.hull_at(cycle.t);
            if !convex_overlap(&rect, &hull) {
                continue;
            }
            let contact = contact_point(&rect, &hull);
            // front-half test in the AV body frame; rear contacts excluded
            let lx = (contact[0] - av.x) * av.heading.cos()
                + (contact[1] - av.y) * av.heading.sin();
            if lx <= 0.0 {
                continue;
            }
            if deb.violate(cycle.t) {
                events.push(MetricEvent {
                    kind: "collision".into(),
                    t: cycle.t,
                    agent_id: Some(*id),
                });
            }
        }

        if rect.iter().any(|c| !scenario.map.is_drivable(c[0], c[1])) && road.violate(cycle.t) {
            events.push(MetricEvent { kind: "off-road".into(), t: cycle.t, agent_id: None });
        }

        let limit = if av.a >= 0.0 {
            threshold_accel(av.v)
        } else {
            threshold_decel(av.v)
        };
        if av.a.abs() > limit && accel.violate(cycle.t) {
            events.push(MetricEvent { kind: "harsh-accel".into(), t: cycle.t, agent_id: None });
        }
    }

    MetricsReport {
        coll: coll.iter().map(|(_, d)| d.count).sum(),
        road: road.count,
        accel: accel.count,
        dist,
        stuck: dist < STUCK_DIST_M,
        events,
    }
}
