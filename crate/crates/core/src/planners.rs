//! Sketch producers that exercise the wrapper: IDM rollouts along a route,
//! grid A* paths, and deliberately bad synthetic sketches.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{Sketch, Waypoint};
use crate::maneuver::{MapRaster, Scene};
use crate::vehicle::AvPose;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("no path from start to goal")]
    NoPath,
    #[error("pose not on a drivable cell: ({0:.2}, {1:.2})")]
    OffGrid(f64, f64),
}

/// Intelligent-driver-model parameters; closed-form longitudinal control.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// desired speed m/s
    pub v0: f64,
    /// headway time s
    pub t_headway: f64,
    /// max accel m/s^2
    pub a_max: f64,
    /// comfortable decel m/s^2
    pub b: f64,
    /// jam distance m
    pub s0: f64,
    /// speed exponent
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            // below the controller's free-flow speed limit, so dropping the
            // tracking objective can only speed the vehicle up
            v0: 9.0,
            t_headway: 1.5,
            a_max: 1.5,
            b: 2.0,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

/// Emergency deceleration cap applied to the raw IDM output.
const IDM_DECEL_CAP: f64 = 6.0;

/// Closed-form IDM acceleration for speed `v`, optionally with a lead
/// vehicle at `(gap, lead speed)`.
pub fn idm_accel(v: f64, lead: Option<(f64, f64)>, params: &IdmParams) -> f64 {
    let free = 1.0 - (v / params.v0).powf(params.delta);
    let interaction = match lead {
        Some((gap, v_lead)) => {
            let dv = v - v_lead;
            let s_star = params.s0
                + v * params.t_headway
                + v * dv / (2.0 * (params.a_max * params.b).sqrt());
            let s_star = s_star.max(params.s0);
            (s_star / gap.max(1e-6)).powi(2)
        }
        None => 0.0,
    };
    (params.a_max * (free - interaction)).clamp(-IDM_DECEL_CAP, params.a_max)
}

/// Point at arc-length `s` along a polyline, extrapolating past the ends
/// along the end segments.
fn along_polyline(route: &[Waypoint], s: f64) -> (f64, f64) {
    assert!(route.len() >= 2);
    let mut acc = 0.0;
    for pair in route.windows(2) {
        let dx = pair[1].x - pair[0].x;
        let dy = pair[1].y - pair[0].y;
        let len = (dx * dx + dy * dy).sqrt();
        if s <= acc + len || std::ptr::eq(pair.as_ptr(), &route[route.len() - 2]) {
            let f = if len > 0.0 { (s - acc) / len } else { 0.0 };
            return (pair[0].x + f * dx, pair[0].y + f * dy);
        }
        acc += len;
    }
    let last = route[route.len() - 1];
    (last.x, last.y)
}

/// Roll the IDM forward along `route` for `horizon` steps of `dt`,
/// emitting a timestamped sketch. `lead_track` gives the initial gap and
/// the lead speed per step; the gap is integrated alongside the AV.
pub fn idm_rollout(
    v_init: f64,
    lead_track: Option<&[(f64, f64)]>,
    route: &[Waypoint],
    params: &IdmParams,
    horizon: usize,
    dt: f64,
) -> Sketch {
    let mut v = v_init.max(0.0);
    let mut s = 0.0;
    let mut gap = lead_track.and_then(|t| t.first()).map(|&(g, _)| g);
    let mut pts = Vec::with_capacity(horizon + 1);
    let (x, y) = along_polyline(route, 0.0);
    pts.push(Waypoint::timed(x, y, 0.0));
    for k in 0..horizon {
        let lead = match (lead_track, gap) {
            (Some(track), Some(g)) => {
                let (_, v_lead) = track[k.min(track.len() - 1)];
                Some((g, v_lead))
            }
            _ => None,
        };
        let a = idm_accel(v, lead, params);
        let v_new = (v + a * dt).max(0.0);
        let ds = 0.5 * (v + v_new) * dt;
        s += ds;
        if let (Some(track), Some(g)) = (lead_track, gap.as_mut()) {
            let (_, v_lead) = track[k.min(track.len() - 1)];
            *g = (*g + v_lead * dt - ds).max(0.0);
        }
        v = v_new;
        let (x, y) = along_polyline(route, s);
        pts.push(Waypoint::timed(x, y, (k + 1) as f64 * dt));
    }
    // a stalled rollout collapses to one point; keep the sketch valid
    if s < 0.1 {
        let t_last = pts.last().unwrap().t.unwrap();
        let (x2, y2) = along_polyline(route, 0.1);
        let n = pts.len();
        pts[n - 1] = Waypoint::timed(x2, y2, t_last);
    }
    Sketch::new(pts).expect("idm rollout produces a valid sketch")
}

const HEADINGS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

const TURN_PENALTY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPose {
    pub cell: (i64, i64),
    pub heading: u8,
}

struct OpenNode {
    f: f64,
    g: f64,
    pose: GridPose,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f
        other.f.partial_cmp(&self.f).unwrap_or(Ordering::Equal)
    }
}

fn cell_of(map: &MapRaster, x: f64, y: f64) -> (i64, i64) {
    (
        ((x - map.origin[0]) / map.resolution).floor() as i64,
        ((y - map.origin[1]) / map.resolution).floor() as i64,
    )
}

fn cell_center(map: &MapRaster, cell: (i64, i64)) -> (f64, f64) {
    (
        map.origin[0] + (cell.0 as f64 + 0.5) * map.resolution,
        map.origin[1] + (cell.1 as f64 + 0.5) * map.resolution,
    )
}

fn cell_drivable(map: &MapRaster, cell: (i64, i64)) -> bool {
    if cell.0 < 0 || cell.1 < 0 {
        return false;
    }
    let (ix, iy) = (cell.0 as usize, cell.1 as usize);
    ix < map.width && iy < map.height && map.drivable[iy * map.width + ix]
}

fn snap_heading(theta: f64) -> u8 {
    let sector = (theta / (std::f64::consts::PI / 4.0)).round() as i64;
    sector.rem_euclid(8) as u8
}

/// A* over (cell, heading) with 8-connected moves limited to one heading
/// step per move; cost is move length plus a turn penalty. Returns the
/// path as untimed waypoints at cell centers.
pub fn astar_path(
    map: &MapRaster,
    start: (f64, f64, f64),
    goal: (f64, f64, f64),
) -> Result<Sketch, PlannerError> {
    let start_cell = cell_of(map, start.0, start.1);
    let goal_cell = cell_of(map, goal.0, goal.1);
    if !cell_drivable(map, start_cell) {
        return Err(PlannerError::OffGrid(start.0, start.1));
    }
    if !cell_drivable(map, goal_cell) {
        return Err(PlannerError::OffGrid(goal.0, goal.1));
    }
    if start_cell == goal_cell {
        let (x, y) = cell_center(map, start_cell);
        let pts = vec![Waypoint::new(x, y), Waypoint::new(x + 0.1, y)];
        return Ok(Sketch::new(pts).unwrap());
    }

    let h = |cell: (i64, i64)| -> f64 {
        let (x, y) = cell_center(map, cell);
        let (gx, gy) = cell_center(map, goal_cell);
        ((x - gx).powi(2) + (y - gy).powi(2)).sqrt()
    };

    let start_pose = GridPose {
        cell: start_cell,
        heading: snap_heading(start.2),
    };
    let mut best: HashMap<GridPose, f64> = HashMap::new();
    let mut parent: HashMap<GridPose, GridPose> = HashMap::new();
    let mut open = BinaryHeap::new();
    best.insert(start_pose, 0.0);
    open.push(OpenNode {
        f: h(start_cell),
        g: 0.0,
        pose: start_pose,
    });

    while let Some(node) = open.pop() {
        if node.g > best.get(&node.pose).copied().unwrap_or(f64::INFINITY) + 1e-12 {
            continue;
        }
        if node.pose.cell == goal_cell {
            let mut cells = vec![node.pose];
            let mut cur = node.pose;
            while let Some(&p) = parent.get(&cur) {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            let mut pts: Vec<Waypoint> = cells
                .iter()
                .map(|p| {
                    let (x, y) = cell_center(map, p.cell);
                    Waypoint::new(x, y)
                })
                .collect();
            pts.dedup_by(|a, b| (a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            return Ok(Sketch::new(pts).unwrap());
        }
        for dh in [-1i64, 0, 1] {
            let heading = ((node.pose.heading as i64 + dh).rem_euclid(8)) as u8;
            let (dx, dy) = HEADINGS[heading as usize];
            let cell = (node.pose.cell.0 + dx, node.pose.cell.1 + dy);
            if !cell_drivable(map, cell) {
                continue;
            }
            let move_len = ((dx * dx + dy * dy) as f64).sqrt() * map.resolution;
            let g = node.g + move_len + TURN_PENALTY * map.resolution * dh.abs() as f64;
            let pose = GridPose { cell, heading };
            if g + 1e-12 < best.get(&pose).copied().unwrap_or(f64::INFINITY) {
                best.insert(pose, g);
                parent.insert(pose, node.pose);
                open.push(OpenNode {
                    f: g + h(cell),
                    g,
                    pose,
                });
            }
        }
    }
    Err(PlannerError::NoPath)
}

/// Mark every cell whose center lies inside one of the convex hulls as
/// non-drivable.
pub fn block_hulls(map: &mut MapRaster, hulls: &[Vec<[f64; 2]>]) {
    for iy in 0..map.height {
        for ix in 0..map.width {
            let x = map.origin[0] + (ix as f64 + 0.5) * map.resolution;
            let y = map.origin[1] + (iy as f64 + 0.5) * map.resolution;
            if hulls.iter().any(|h| point_in_hull(x, y, h)) {
                map.drivable[iy * map.width + ix] = false;
            }
        }
    }
}

fn point_in_hull(x: f64, y: f64, hull: &[[f64; 2]]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// straight line through the first agent hull in the scene
    ThroughObstacle,
    /// veers off the drivable raster
    OffRoad,
    /// straight route with alternating +-1 m lateral noise
    Jagged,
    /// a stuck planner that keeps emitting the current pose
    StoppedFrozen,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "through-obstacle" => Ok(SyntheticKind::ThroughObstacle),
            "off-road" => Ok(SyntheticKind::OffRoad),
            "jagged" => Ok(SyntheticKind::Jagged),
            "stopped-frozen" => Ok(SyntheticKind::StoppedFrozen),
            other => Err(format!("unknown synthetic kind: {other}")),
        }
    }
}

/// Deliberately bad sketches that the wrapper is supposed to rescue.
pub fn synthetic_sketch(kind: SyntheticKind, scene: &Scene, av: &AvPose) -> Sketch {
    let (cx, cy) = (av.heading.cos(), av.heading.sin());
    let dt = 0.5;
    let pts = match kind {
        SyntheticKind::ThroughObstacle => {
            // aim straight at the centroid of the first predicted hull
            let target = scene
                .agents
                .first()
                .and_then(|a| a.hulls.first())
                .map(|h| {
                    let n = h.len() as f64;
                    let (sx, sy) = h.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
                    (sx / n, sy / n)
                })
                .unwrap_or((av.x + 40.0 * cx, av.y + 40.0 * cy));
            let dx = target.0 - av.x;
            let dy = target.1 - av.y;
            let len = (dx * dx + dy * dy).sqrt().max(1e-6);
            (0..=16)
                .map(|k| {
                    let s = k as f64 / 16.0 * (len + 20.0);
                    Waypoint::timed(av.x + s * dx / len, av.y + s * dy / len, k as f64 * dt)
                })
                .collect()
        }
        SyntheticKind::OffRoad => {
            // drift sideways until well past any raster edge
            let reach = scene
                .map
                .as_ref()
                .map(|m| (m.width.max(m.height) as f64) * m.resolution)
                .unwrap_or(100.0);
            (0..=16)
                .map(|k| {
                    let f = k as f64 / 16.0;
                    let s = f * 40.0;
                    let off = f * f * 2.0 * reach;
                    Waypoint::timed(
                        av.x + s * cx - off * cy,
                        av.y + s * cy + off * cx,
                        k as f64 * dt,
                    )
                })
                .collect()
        }
        SyntheticKind::Jagged => (0..=16)
            .map(|k| {
                let s = k as f64 * 2.5;
                let lateral = if k == 0 || k == 16 {
                    0.0
                } else if k % 2 == 1 {
                    1.0
                } else {
                    -1.0
                };
                Waypoint::timed(
                    av.x + s * cx - lateral * cy,
                    av.y + s * cy + lateral * cx,
                    k as f64 * dt,
                )
            })
            .collect(),
        SyntheticKind::StoppedFrozen => {
            // all points at the current pose; padded to stay a valid sketch
            let mut v: Vec<Waypoint> = (0..=16)
                .map(|k| Waypoint::timed(av.x, av.y, k as f64 * dt))
                .collect();
            let last = v.len() - 1;
            v[last] = Waypoint::timed(av.x + 0.1 * cx, av.y + 0.1 * cy, 16.0 * dt);
            v
        }
    };
    Sketch::new(pts).expect("synthetic sketch is valid")
}
