//! Maneuver extraction: sketch + scene -> tracking references, per-timestep
//! lateral tubes, and longitudinal progress bounds.

mod constraints;
mod tube;

pub use constraints::{
    classify_constraints, compute_longitudinal_bounds, compute_tracking_references,
    project_dynamic, raycast_static, AgentSample, AvProgress, Classification,
};
pub use tube::fit_lateral_tube;

use serde::{Deserialize, Serialize};

use crate::geometry::{fit_baseline, Baseline, GeometryError, Sketch};
use crate::vehicle::{AvPose, VehicleGeometry};

#[derive(Debug, thiserror::Error)]
pub enum ManeuverError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Binary drivable-space grid. Out-of-bounds cells are non-drivable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRaster {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub drivable: Vec<bool>,
}

impl MapRaster {
    pub fn new(origin: [f64; 2], resolution: f64, width: usize, height: usize) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        MapRaster {
            origin,
            resolution,
            width,
            height,
            drivable: vec![false; width * height],
        }
    }

    /// Build a raster by evaluating `f` at every voxel center.
    pub fn from_fn(
        origin: [f64; 2],
        resolution: f64,
        width: usize,
        height: usize,
        f: impl Fn(f64, f64) -> bool,
    ) -> Self {
        let mut m = MapRaster::new(origin, resolution, width, height);
        for iy in 0..height {
            for ix in 0..width {
                let x = origin[0] + (ix as f64 + 0.5) * resolution;
                let y = origin[1] + (iy as f64 + 0.5) * resolution;
                m.drivable[iy * width + ix] = f(x, y);
            }
        }
        m
    }

    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        let ix = (x - self.origin[0]) / self.resolution;
        let iy = (y - self.origin[1]) / self.resolution;
        if ix < 0.0 || iy < 0.0 {
            return false;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        if ix >= self.width || iy >= self.height {
            return false;
        }
        self.drivable[iy * self.width + ix]
    }
}

/// One agent's predicted motion: a convex hull per horizon timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub agent_id: u64,
    pub hulls: Vec<Vec<[f64; 2]>>,
}

/// Everything the wrapper knows about the world besides the sketch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Scene {
    pub map: Option<MapRaster>,
    pub agents: Vec<AgentPrediction>,
}

/// Progress/speed/acceleration references on the horizon grid. Empty vectors
/// when `present` is false (path-only sketch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReferences {
    pub present: bool,
    pub p_ref: Vec<f64>,
    pub v_ref: Vec<f64>,
    pub a_ref: Vec<f64>,
}

impl TrackingReferences {
    pub fn absent() -> Self {
        TrackingReferences {
            present: false,
            p_ref: Vec::new(),
            v_ref: Vec::new(),
            a_ref: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TubeLine {
    LeftHard,
    LeftSoft,
    RightHard,
    RightSoft,
}

/// One timestep's tube: knot values of the four piecewise-linear offset
/// profiles, sharing the uniform knot grid stored on [`LateralTube`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeStep {
    pub left_hard: Vec<f64>,
    pub left_soft: Vec<f64>,
    pub right_hard: Vec<f64>,
    pub right_soft: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralTube {
    pub knot_p0: f64,
    pub knot_dp: f64,
    pub steps: Vec<TubeStep>,
}

impl LateralTube {
    pub fn num_knots(&self) -> usize {
        self.steps.first().map_or(0, |s| s.left_hard.len())
    }

    fn values<'a>(&'a self, t: usize, line: TubeLine) -> &'a [f64] {
        let step = &self.steps[t.min(self.steps.len() - 1)];
        match line {
            TubeLine::LeftHard => &step.left_hard,
            TubeLine::LeftSoft => &step.left_soft,
            TubeLine::RightHard => &step.right_hard,
            TubeLine::RightSoft => &step.right_soft,
        }
    }

    /// Value and d/dp of one profile at progress `p`, clamped at the ends.
    pub fn eval(&self, t: usize, line: TubeLine, p: f64) -> (f64, f64) {
        let v = self.values(t, line);
        interp_with_slope(v, self.knot_p0, self.knot_dp, p)
    }
}

pub(crate) fn interp_with_slope(values: &[f64], p0: f64, dp: f64, p: f64) -> (f64, f64) {
    let n = values.len();
    debug_assert!(n >= 2);
    let u = (p - p0) / dp;
    if u <= 0.0 {
        return (values[0], 0.0);
    }
    if u >= (n - 1) as f64 {
        return (values[n - 1], 0.0);
    }
    let i = u as usize;
    let frac = u - i as f64;
    let slope = (values[i + 1] - values[i]) / dp;
    (values[i] + frac * (values[i + 1] - values[i]), slope)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalBounds {
    pub p_lower: Vec<f64>,
    pub p_upper: Vec<f64>,
}

impl LongitudinalBounds {
    pub fn unconstrained(baseline: &Baseline, horizon_steps: usize) -> Self {
        let (lo, hi) = baseline.domain();
        LongitudinalBounds {
            p_lower: vec![lo; horizon_steps + 1],
            p_upper: vec![hi; horizon_steps + 1],
        }
    }
}

/// Ablation level. Each mode includes everything the previous ones do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WrapperMode {
    Baseline,
    Tracking,
    Map,
    StayBehind,
    StayAhead,
}

impl WrapperMode {
    pub fn uses_tracking(self) -> bool {
        self >= WrapperMode::Tracking
    }
    pub fn uses_map(self) -> bool {
        self >= WrapperMode::Map
    }
    pub fn uses_agents(self) -> bool {
        self >= WrapperMode::StayBehind
    }
}

impl std::str::FromStr for WrapperMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(WrapperMode::Baseline),
            "tracking" => Ok(WrapperMode::Tracking),
            "map" => Ok(WrapperMode::Map),
            "staybehind" | "stay-behind" | "stay_behind" => Ok(WrapperMode::StayBehind),
            "stayahead" | "stay-ahead" | "stay_ahead" => Ok(WrapperMode::StayAhead),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WrapperConfig {
    pub mode: WrapperMode,
    pub horizon_steps: usize,
    pub dt: f64,
    /// Max waypoint spacing per unit progress used when fitting the baseline.
    pub dist_max: f64,
    pub c_reg: f64,
    /// Agents entirely farther than this from the baseline are lateral-only.
    pub lateral_relevance: f64,
    /// Samples closer than this trigger longitudinal constraints.
    pub longitudinal_trigger: f64,
    pub lateral_buffer: f64,
    pub long_buffer: f64,
    pub soft_margin: f64,
    pub max_ray: f64,
    pub tube_knot_spacing: f64,
    pub tube_reg: f64,
    pub raycast_spacing: f64,
    /// Hard-tube width below which the map pinches off further progress.
    pub pinch_width: f64,
    /// Relaxation study: keep references for constraint construction and
    /// mode selection, but emit the maneuver without them so the controller
    /// maximizes progress instead of tracking the sketch.
    pub drop_tracking_cost: bool,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        WrapperConfig {
            mode: WrapperMode::StayBehind,
            horizon_steps: 16,
            dt: 0.5,
            dist_max: 5.0,
            c_reg: 1.0,
            lateral_relevance: 4.0,
            longitudinal_trigger: 2.0,
            lateral_buffer: 0.5,
            long_buffer: 2.0,
            soft_margin: 0.3,
            max_ray: 10.0,
            tube_knot_spacing: 1.0,
            tube_reg: 0.5,
            raycast_spacing: 1.0,
            pinch_width: 2.0,
            drop_tracking_cost: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub baseline: Baseline,
    pub tracking: TrackingReferences,
    pub tube: LateralTube,
    pub bounds: LongitudinalBounds,
    pub horizon_steps: usize,
    pub dt: f64,
    pub mode_requested: WrapperMode,
    /// May differ from `mode_requested` when StayAhead lacks tracking
    /// references and degrades to StayBehind.
    pub mode_used: WrapperMode,
}

/// Project the AV's bumper midpoints and reference point onto the baseline.
pub fn av_progress(av: &AvPose, vehicle: &VehicleGeometry, baseline: &Baseline) -> AvProgress {
    let rear = vehicle.rear_bumper(av.x, av.y, av.heading);
    let front = vehicle.front_bumper(av.x, av.y, av.heading);
    AvProgress {
        p_rear: baseline.project_point(rear).point.p,
        p_center: baseline.project_point([av.x, av.y]).point.p,
        p_front: baseline.project_point(front).point.p,
    }
}

pub fn extract_maneuver(
    sketch: &Sketch,
    scene: &Scene,
    av: &AvPose,
    vehicle: &VehicleGeometry,
    config: &WrapperConfig,
) -> Result<Maneuver, ManeuverError> {
    let baseline = fit_baseline(sketch, config.dist_max, config.c_reg)?;
    let n_steps = config.horizon_steps;

    let mut mode = config.mode;
    if mode == WrapperMode::StayAhead && !sketch.has_timestamps {
        mode = WrapperMode::StayBehind;
    }

    let tracking = if mode.uses_tracking() {
        compute_tracking_references(sketch, &baseline, config.dt, n_steps)
    } else {
        TrackingReferences::absent()
    };
    if mode == WrapperMode::StayAhead && !tracking.present {
        mode = WrapperMode::StayBehind;
    }

    let static_samples = match (&scene.map, mode.uses_map()) {
        (Some(map), true) => raycast_static(map, &baseline, config.raycast_spacing, config.max_ray),
        _ => Vec::new(),
    };

    let dynamic = if mode.uses_agents() {
        project_dynamic(&scene.agents, &baseline, n_steps, config.lateral_buffer)
    } else {
        vec![Vec::new(); n_steps + 1]
    };

    let classes = classify_constraints(&dynamic, &static_samples, config);

    let av_p = av_progress(av, vehicle, &baseline);
    let mut bounds = if mode.uses_agents() {
        compute_longitudinal_bounds(&classes, &av_p, mode, &tracking, &baseline, config)
    } else {
        LongitudinalBounds::unconstrained(&baseline, n_steps)
    };

    // All static samples shape the tube; only the lateral partition of the
    // dynamic samples does (near agents constrain progress instead).
    let tube = fit_lateral_tube(
        &classes.lateral_dynamic,
        &static_samples,
        &baseline,
        n_steps,
        config,
    );

    if mode.uses_map() && !static_samples.is_empty() {
        apply_map_pinch(&mut bounds, &static_samples, &baseline, &av_p, config);
    }

    let tracking = if config.drop_tracking_cost {
        TrackingReferences::absent()
    } else {
        tracking
    };

    Ok(Maneuver {
        baseline,
        tracking,
        tube,
        bounds,
        horizon_steps: n_steps,
        dt: config.dt,
        mode_requested: config.mode,
        mode_used: mode,
    })
}

/// Where the static map squeezes the drivable corridor below `pinch_width`,
/// cap progress just short of the pinch. Relies on `raycast_static` emitting
/// a (left, right) sample pair per station.
fn apply_map_pinch(
    bounds: &mut LongitudinalBounds,
    static_samples: &[crate::geometry::SplinePoint],
    baseline: &Baseline,
    av_p: &AvProgress,
    config: &WrapperConfig,
) {
    let mut pinch_p: Option<f64> = None;
    for pair in static_samples.chunks_exact(2) {
        let p = pair[0].p;
        if p <= av_p.p_front {
            continue;
        }
        if pair[0].n - pair[1].n < config.pinch_width && pinch_p.map_or(true, |q| p < q) {
            pinch_p = Some(p);
        }
    }
    if let Some(p) = pinch_p {
        let capped = baseline.progress_of_clamped(baseline.station_of_clamped(p) - config.long_buffer);
        let capped = capped.max(av_p.p_front + constraints::EPS_MIN);
        for u in bounds.p_upper.iter_mut() {
            *u = u.min(capped);
        }
        for (l, u) in bounds.p_lower.iter_mut().zip(&bounds.p_upper) {
            *l = l.min(*u);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::geometry::Waypoint;

    fn config(mode: WrapperMode) -> WrapperConfig {
        WrapperConfig {
            mode,
            dist_max: 1.0,
            ..WrapperConfig::default()
        }
    }

    fn av_at_start() -> AvPose {
        AvPose::at_rest(2.0, 0.0, 0.0)
    }

    fn corridor_map(half_width: f64) -> MapRaster {
        MapRaster::from_fn([-5.0, -12.0], 0.5, 100, 48, |_, y| y.abs() < half_width)
    }

    #[test]
    fn baseline_mode_ignores_everything() {
        let sketch = straight_sketch(30);
        let scene = Scene {
            map: Some(corridor_map(3.0)),
            agents: vec![AgentPrediction {
                agent_id: 1,
                hulls: vec![square_hull(15.0, 0.0, 1.0)],
            }],
        };
        let m = extract_maneuver(
            &sketch,
            &scene,
            &av_at_start(),
            &VehicleGeometry::default(),
            &config(WrapperMode::Baseline),
        )
        .unwrap();
        assert!(!m.tracking.present);
        let (lo, hi) = m.baseline.domain();
        for step in &m.tube.steps {
            assert!(step.left_hard.iter().all(|&v| v == 10.0));
            assert!(step.right_hard.iter().all(|&v| v == -10.0));
        }
        assert!(m.bounds.p_lower.iter().all(|&v| v == lo));
        assert!(m.bounds.p_upper.iter().all(|&v| v == hi));
    }

    #[test]
    fn map_mode_corridor_tube() {
        let sketch = straight_sketch(30);
        let scene = Scene {
            map: Some(corridor_map(3.0)),
            agents: Vec::new(),
        };
        let m = extract_maneuver(
            &sketch,
            &scene,
            &av_at_start(),
            &VehicleGeometry::default(),
            &config(WrapperMode::Map),
        )
        .unwrap();
        let (lo, hi) = m.baseline.domain();
        // interior knots hug the 6 m corridor within one voxel
        let k = m.tube.num_knots();
        for i in 2..k - 2 {
            let lh = m.tube.steps[0].left_hard[i];
            let rh = m.tube.steps[0].right_hard[i];
            assert!((lh - 3.0).abs() < 0.6, "left {lh}");
            assert!((rh + 3.0).abs() < 0.6, "right {rh}");
        }
        assert!(m.bounds.p_lower.iter().all(|&v| v == lo));
        assert!(m.bounds.p_upper.iter().all(|&v| v == hi));
    }

    #[test]
    fn map_pinch_caps_progress() {
        let sketch = straight_sketch(30);
        // corridor narrows to 1.2 m beyond x = 20
        let map = MapRaster::from_fn([-5.0, -12.0], 0.5, 100, 48, |x, y| {
            if x < 20.0 {
                y.abs() < 3.0
            } else {
                y.abs() < 0.6
            }
        });
        let m = extract_maneuver(
            &sketch,
            &Scene { map: Some(map), agents: Vec::new() },
            &av_at_start(),
            &VehicleGeometry::default(),
            &config(WrapperMode::Map),
        )
        .unwrap();
        let (_, hi) = m.baseline.domain();
        let cap = m.bounds.p_upper[0];
        assert!(cap < hi - 1.0, "cap {cap} vs hi {hi}");
        // cap sits near the pinch minus the longitudinal buffer; the pinch
        // starts where x = 20 maps to progress ~ 21.5 on this baseline
        let cap_station = m.baseline.station_of_clamped(cap);
        assert!(cap_station > 12.0 && cap_station < 21.0, "station {cap_station}");
    }

    #[test]
    fn stay_behind_crossing_agent_dips_upper_bound() {
        let sketch = straight_sketch(30);
        let cfg = config(WrapperMode::StayBehind);
        // pedestrian crossing the baseline at x = 20 between 2 s and 4 s
        let hulls: Vec<Vec<[f64; 2]>> = (0..=cfg.horizon_steps)
            .map(|t| {
                let time = t as f64 * cfg.dt;
                let y = 9.0 - 3.0 * time;
                square_hull(20.0, y, 0.5)
            })
            .collect();
        let scene = Scene {
            map: None,
            agents: vec![AgentPrediction { agent_id: 7, hulls }],
        };
        let m = extract_maneuver(
            &sketch,
            &scene,
            &av_at_start(),
            &VehicleGeometry::default(),
            &cfg,
        )
        .unwrap();
        let (_, hi) = m.baseline.domain();
        // brute-force per-timestep min over the projected triggering samples
        let dynamic = project_dynamic(&scene.agents, &m.baseline, cfg.horizon_steps, cfg.lateral_buffer);
        let classes = classify_constraints(&dynamic, &[], &cfg);
        let mut dipped = 0;
        for t in 0..=cfg.horizon_steps {
            let min_p = classes.longitudinal_dynamic[t]
                .iter()
                .map(|s| s.point.p)
                .fold(f64::INFINITY, f64::min);
            if min_p.is_finite() {
                let expect = m
                    .baseline
                    .progress_of_clamped(m.baseline.station_of_clamped(min_p) - cfg.long_buffer);
                assert!((m.bounds.p_upper[t] - expect).abs() < 1e-9, "t {t}");
                dipped += 1;
            } else {
                assert_eq!(m.bounds.p_upper[t], hi, "t {t}");
            }
        }
        assert!(dipped >= 2, "crossing never constrained progress");
        // the dip recovers after the crossing
        assert_eq!(m.bounds.p_upper[cfg.horizon_steps], hi);
        assert!(m.bounds.p_upper[6] < hi);
    }

    #[test]
    fn tube_ordering_and_sample_clearance() {
        let sketch = straight_sketch(30);
        let cfg = config(WrapperMode::StayBehind);
        let scene = Scene {
            map: Some(corridor_map(4.0)),
            agents: vec![AgentPrediction {
                agent_id: 1,
                hulls: vec![square_hull(15.0, 2.6, 0.4)],
            }],
        };
        let m = extract_maneuver(
            &sketch,
            &scene,
            &av_at_start(),
            &VehicleGeometry::default(),
            &cfg,
        )
        .unwrap();
        let (lo, hi) = m.baseline.domain();
        for t in 0..=cfg.horizon_steps {
            for i in 0..100 {
                let p = lo + (hi - lo) * i as f64 / 99.0;
                let (lh, _) = m.tube.eval(t, TubeLine::LeftHard, p);
                let (ls, _) = m.tube.eval(t, TubeLine::LeftSoft, p);
                let (rs, _) = m.tube.eval(t, TubeLine::RightSoft, p);
                let (rh, _) = m.tube.eval(t, TubeLine::RightHard, p);
                assert!(rh <= rs + 1e-12 && rs <= ls + 1e-12 && ls <= lh + 1e-12);
            }
        }
        // every lateral sample stays outside the hard tube
        let dynamic = project_dynamic(&scene.agents, &m.baseline, cfg.horizon_steps, cfg.lateral_buffer);
        let classes = classify_constraints(&dynamic, &[], &cfg);
        for t in 0..=cfg.horizon_steps {
            for s in &classes.lateral_dynamic[t] {
                let (lh, _) = m.tube.eval(t, TubeLine::LeftHard, s.point.p);
                let (rh, _) = m.tube.eval(t, TubeLine::RightHard, s.point.p);
                if s.point.n > 0.0 {
                    assert!(s.point.n - lh >= 1e-3 - 1e-9, "n {} lh {}", s.point.n, lh);
                } else {
                    assert!(rh - s.point.n >= 1e-3 - 1e-9, "n {} rh {}", s.point.n, rh);
                }
            }
        }
    }

    #[test]
    fn configuration_refinement_is_monotone() {
        let sketch = straight_sketch(30);
        let scene = Scene {
            map: Some(corridor_map(3.5)),
            agents: vec![AgentPrediction {
                agent_id: 1,
                hulls: vec![square_hull(18.0, 0.5, 0.8)],
            }],
        };
        let av = av_at_start();
        let veh = VehicleGeometry::default();
        let modes = [WrapperMode::Baseline, WrapperMode::Map, WrapperMode::StayBehind];
        let ms: Vec<Maneuver> = modes
            .iter()
            .map(|&mode| extract_maneuver(&sketch, &scene, &av, &veh, &config(mode)).unwrap())
            .collect();
        let (lo, hi) = ms[0].baseline.domain();
        for w in ms.windows(2) {
            let (wide, tight) = (&w[0], &w[1]);
            for t in 0..=wide.horizon_steps {
                assert!(tight.bounds.p_lower[t] >= wide.bounds.p_lower[t] - 1e-9);
                assert!(tight.bounds.p_upper[t] <= wide.bounds.p_upper[t] + 1e-9);
                for i in 0..100 {
                    let p = lo + (hi - lo) * i as f64 / 99.0;
                    let (lw, _) = wide.tube.eval(t, TubeLine::LeftHard, p);
                    let (rw, _) = wide.tube.eval(t, TubeLine::RightHard, p);
                    let (lt, _) = tight.tube.eval(t, TubeLine::LeftHard, p);
                    let (rt, _) = tight.tube.eval(t, TubeLine::RightHard, p);
                    assert!(lt <= lw + 1e-9 && rt >= rw - 1e-9);
                }
            }
        }
    }

    #[test]
    fn stay_ahead_without_timestamps_degrades() {
        let sketch = straight_sketch(20);
        let m = extract_maneuver(
            &sketch,
            &Scene::default(),
            &av_at_start(),
            &VehicleGeometry::default(),
            &config(WrapperMode::StayAhead),
        )
        .unwrap();
        assert_eq!(m.mode_requested, WrapperMode::StayAhead);
        assert_eq!(m.mode_used, WrapperMode::StayBehind);
        assert!(!m.tracking.present);
    }

    #[test]
    fn extraction_is_deterministic() {
        let pts: Vec<Waypoint> = (0..=20)
            .map(|i| Waypoint::timed(i as f64 * 1.5, (i as f64 * 0.4).sin(), i as f64 * 0.3))
            .collect();
        let sketch = Sketch::new(pts).unwrap();
        let scene = Scene {
            map: Some(corridor_map(4.0)),
            agents: vec![AgentPrediction {
                agent_id: 3,
                hulls: vec![square_hull(12.0, 1.0, 0.7)],
            }],
        };
        let cfg = config(WrapperMode::StayAhead);
        let av = av_at_start();
        let veh = VehicleGeometry::default();
        let a = extract_maneuver(&sketch, &scene, &av, &veh, &cfg).unwrap();
        let b = extract_maneuver(&sketch, &scene, &av, &veh, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
