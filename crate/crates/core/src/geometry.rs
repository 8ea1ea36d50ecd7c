//! Quartic cardinal B-spline baseline: fitting from waypoints, evaluation,
//! derivatives, and projection of Cartesian points into spline-space.
//!
//! The baseline is a uniform quartic B-spline with one basis function
//! centered at each integer progress value. Each basis spans 5 knot
//! intervals, so with control points indexed 0..N-1 the spline is fully
//! supported only on [1.5, N - 2.5].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Cholesky, Mat};

pub const DOMAIN_MARGIN: f64 = 2.5;
/// Spacing of the progress/station lookup table.
pub const STATION_TABLE_DP: f64 = 0.25;
/// Coarse samples used to seed the closest-point search.
pub const PROJECT_COARSE_SAMPLES: usize = 64;
/// Refinement iterations of the circle-approximation update.
pub const PROJECT_REFINE_ITERS: usize = 3;
/// Below this curvature the local circle degenerates to a line.
pub const FLAT_CURVATURE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("progress {p} outside spline domain [{lo}, {hi}]")]
    Domain { p: f64, lo: f64, hi: f64 },
    #[error("baseline fit failed: {0}")]
    Fit(String),
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Waypoint { x, y, t: None }
    }

    pub fn timed(x: f64, y: f64, t: f64) -> Self {
        Waypoint { x, y, t: Some(t) }
    }
}

/// A sequence of waypoints from an experimental planner, with or without
/// timestamps. Consecutive duplicates are dropped on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub waypoints: Vec<Waypoint>,
    pub has_timestamps: bool,
    #[serde(default, skip_serializing)]
    pub dropped_duplicates: usize,
}

impl Sketch {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Sketch, GeometryError> {
        let mut kept: Vec<Waypoint> = Vec::with_capacity(waypoints.len());
        let mut dropped = 0;
        for w in waypoints {
            if !w.x.is_finite() || !w.y.is_finite() {
                return Err(GeometryError::InvalidSketch(
                    "non-finite waypoint coordinates".into(),
                ));
            }
            if let Some(last) = kept.last() {
                let d = ((w.x - last.x).powi(2) + (w.y - last.y).powi(2)).sqrt();
                if d <= 1e-9 {
                    dropped += 1;
                    continue;
                }
            }
            kept.push(w);
        }
        if kept.len() < 2 {
            return Err(GeometryError::InvalidSketch(format!(
                "need at least 2 distinct waypoints, got {}",
                kept.len()
            )));
        }
        let has_timestamps = kept.iter().all(|w| w.t.is_some());
        if has_timestamps {
            for pair in kept.windows(2) {
                if pair[1].t.unwrap() <= pair[0].t.unwrap() {
                    return Err(GeometryError::InvalidSketch(
                        "timestamps must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(Sketch {
            waypoints: kept,
            has_timestamps,
            dropped_duplicates: dropped,
        })
    }
}

/// A point in spline-space: progress along the baseline and signed lateral
/// offset (positive to the left of the tangent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplinePoint {
    pub p: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub point: SplinePoint,
    /// Set when the query sits at the local center of curvature and the
    /// closest point is not unique; the incumbent progress was kept.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub control_points: Vec<[f64; 2]>,
    /// Monotone (progress, arclength) pairs sampled every STATION_TABLE_DP.
    pub station_table: Vec<(f64, f64)>,
}

/// Centered quartic cardinal B-spline basis, support (-2.5, 2.5).
/// Truncated-power form of the 5-fold box convolution; `deriv` selects the
/// 0th..3rd derivative.
fn cardinal_basis(t: f64, deriv: usize) -> f64 {
    const BINOM: [f64; 6] = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0];
    let power = 4 - deriv as i32;
    // d/dt (t^4)/24 chains down: 4!, 4!/1!, 4!/2!, 4!/3!
    let scale = match deriv {
        0 => 1.0 / 24.0,
        1 => 4.0 / 24.0,
        2 => 12.0 / 24.0,
        3 => 1.0,
        _ => panic!("unsupported derivative order"),
    };
    let mut acc = 0.0;
    for (k, b) in BINOM.iter().enumerate() {
        let u = t + 2.5 - k as f64;
        if u > 0.0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * b * u.powi(power);
        }
    }
    scale * acc
}

impl Baseline {
    pub fn num_control_points(&self) -> usize {
        self.control_points.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        let n = self.control_points.len() as f64;
        (1.5, n - DOMAIN_MARGIN)
    }

    fn check_domain(&self, p: f64) -> Result<(), GeometryError> {
        let (lo, hi) = self.domain();
        // tiny slack for round-off at the ends
        if p < lo - 1e-9 || p > hi + 1e-9 || !p.is_finite() {
            return Err(GeometryError::Domain { p, lo, hi });
        }
        Ok(())
    }

    pub fn clamp_to_domain(&self, p: f64) -> f64 {
        let (lo, hi) = self.domain();
        p.clamp(lo, hi)
    }

    /// Basis weights over the 5 active control points at `p`, together with
    /// the index of the first one.
    pub fn basis(&self, p: f64) -> Result<([f64; 5], usize), GeometryError> {
        self.check_domain(p)?;
        Ok(self.basis_unchecked(p, 0))
    }

    fn basis_unchecked(&self, p: f64, deriv: usize) -> ([f64; 5], usize) {
        let n = self.control_points.len();
        let i0 = ((p - 1.5).floor() as isize).clamp(0, n as isize - 5) as usize;
        let mut w = [0.0; 5];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = cardinal_basis(p - (i0 + k) as f64, deriv);
        }
        (w, i0)
    }

    fn combine(&self, p: f64, deriv: usize) -> [f64; 2] {
        let (w, i0) = self.basis_unchecked(p, deriv);
        let mut out = [0.0; 2];
        for (k, wk) in w.iter().enumerate() {
            let c = self.control_points[i0 + k];
            out[0] += wk * c[0];
            out[1] += wk * c[1];
        }
        out
    }

    pub fn eval(&self, p: f64) -> Result<[f64; 2], GeometryError> {
        self.check_domain(p)?;
        Ok(self.combine(p, 0))
    }

    /// First derivative with respect to progress (not unit length).
    pub fn eval_deriv(&self, p: f64) -> Result<[f64; 2], GeometryError> {
        self.check_domain(p)?;
        Ok(self.combine(p, 1))
    }

    pub fn eval_tangent(&self, p: f64) -> Result<[f64; 2], GeometryError> {
        let d = self.eval_deriv(p)?;
        let g = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if g < 1e-12 {
            return Err(GeometryError::Fit("degenerate tangent".into()));
        }
        Ok([d[0] / g, d[1] / g])
    }

    pub fn eval_curvature(&self, p: f64) -> Result<f64, GeometryError> {
        self.check_domain(p)?;
        let d1 = self.combine(p, 1);
        let d2 = self.combine(p, 2);
        let g2 = d1[0] * d1[0] + d1[1] * d1[1];
        Ok((d1[0] * d2[1] - d1[1] * d2[0]) / g2.powf(1.5))
    }

    /// Progress-to-meters scale ‖ds/dp‖ at `p`.
    pub fn progress_scale(&self, p: f64) -> Result<f64, GeometryError> {
        let d = self.eval_deriv(p)?;
        Ok((d[0] * d[0] + d[1] * d[1]).sqrt())
    }

    /// Curvature, scale, and their derivatives with respect to progress,
    /// for dynamics Jacobians. Evaluated with `p` clamped to the domain.
    pub fn frame_derivatives(&self, p: f64) -> FrameDerivatives {
        let p = self.clamp_to_domain(p);
        let d1 = self.combine(p, 1);
        let d2 = self.combine(p, 2);
        let d3 = self.combine(p, 3);
        let g2 = d1[0] * d1[0] + d1[1] * d1[1];
        let g = g2.sqrt();
        let cross12 = d1[0] * d2[1] - d1[1] * d2[0];
        let cross13 = d1[0] * d3[1] - d1[1] * d3[0];
        let g_prime = (d1[0] * d2[0] + d1[1] * d2[1]) / g;
        let kappa = cross12 / (g2 * g);
        let kappa_prime = cross13 / (g2 * g) - 3.0 * kappa * g_prime / g;
        FrameDerivatives {
            g,
            g_prime,
            kappa,
            kappa_prime,
        }
    }

    /// Station (arclength in meters) at progress `p`.
    pub fn station_of(&self, p: f64) -> Result<f64, GeometryError> {
        self.check_domain(p)?;
        Ok(self.station_of_clamped(p))
    }

    pub fn station_of_clamped(&self, p: f64) -> f64 {
        let t = &self.station_table;
        let p = p.clamp(t[0].0, t[t.len() - 1].0);
        let idx = match t.binary_search_by(|(tp, _)| tp.partial_cmp(&p).unwrap()) {
            Ok(i) => return t[i].1,
            Err(i) => i.clamp(1, t.len() - 1),
        };
        let (p0, s0) = t[idx - 1];
        let (p1, s1) = t[idx];
        s0 + (p - p0) / (p1 - p0) * (s1 - s0)
    }

    /// d(station)/d(progress) as represented by the station table, so
    /// gradients of station-based constraints match the table exactly.
    /// Zero outside the table range (station_of_clamped is flat there).
    pub fn station_slope(&self, p: f64) -> f64 {
        let t = &self.station_table;
        if p < t[0].0 || p > t[t.len() - 1].0 {
            return 0.0;
        }
        let idx = t
            .partition_point(|&(tp, _)| tp < p)
            .clamp(1, t.len() - 1);
        let (p0, s0) = t[idx - 1];
        let (p1, s1) = t[idx];
        (s1 - s0) / (p1 - p0)
    }

    /// Inverse of `station_of` via the same table.
    pub fn progress_of(&self, s: f64) -> Result<f64, GeometryError> {
        let t = &self.station_table;
        let (s_lo, s_hi) = (t[0].1, t[t.len() - 1].1);
        if s < s_lo - 1e-9 || s > s_hi + 1e-9 {
            return Err(GeometryError::Domain {
                p: s,
                lo: s_lo,
                hi: s_hi,
            });
        }
        Ok(self.progress_of_clamped(s))
    }

    pub fn progress_of_clamped(&self, s: f64) -> f64 {
        let t = &self.station_table;
        let s = s.clamp(t[0].1, t[t.len() - 1].1);
        let idx = match t.binary_search_by(|(_, ts)| ts.partial_cmp(&s).unwrap()) {
            Ok(i) => return t[i].0,
            Err(i) => i.clamp(1, t.len() - 1),
        };
        let (p0, s0) = t[idx - 1];
        let (p1, s1) = t[idx];
        p0 + (s - s0) / (s1 - s0) * (p1 - p0)
    }

    pub fn total_station(&self) -> f64 {
        self.station_table.last().unwrap().1
    }

    /// Iterative closest-point search: coarse sampling followed by a fixed
    /// number of local circle-approximation refinements.
    pub fn project_point(&self, query: [f64; 2]) -> Projection {
        let (lo, hi) = self.domain();
        let mut best_p = lo;
        let mut best_d2 = f64::INFINITY;
        for i in 0..PROJECT_COARSE_SAMPLES {
            let p = lo + (hi - lo) * i as f64 / (PROJECT_COARSE_SAMPLES - 1) as f64;
            let c = self.combine(p, 0);
            let d2 = (query[0] - c[0]).powi(2) + (query[1] - c[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_p = p;
            }
        }
        let mut p = best_p;
        let mut ambiguous = false;
        for _ in 0..PROJECT_REFINE_ITERS {
            let c = self.combine(p, 0);
            let d1 = self.combine(p, 1);
            let g = (d1[0] * d1[0] + d1[1] * d1[1]).sqrt();
            let tx = d1[0] / g;
            let ty = d1[1] / g;
            let kappa = self.eval_curvature(p).unwrap_or(0.0);
            let dx = query[0] - c[0];
            let dy = query[1] - c[1];
            let delta_s = if kappa.abs() < FLAT_CURVATURE_EPS {
                // straight-line projection onto the tangent
                dx * tx + dy * ty
            } else {
                // local circle: center on the normal at distance 1/kappa
                let r = 1.0 / kappa;
                let cx = c[0] - ty * r;
                let cy = c[1] + tx * r;
                let qx = query[0] - cx;
                let qy = query[1] - cy;
                let qd = (qx * qx + qy * qy).sqrt();
                if qd < 1e-6 {
                    ambiguous = true;
                    break;
                }
                // signed arc from the current point to the circle projection
                let px = c[0] - cx;
                let py = c[1] - cy;
                let angle = (px * qy - py * qx).atan2(px * qx + py * qy);
                // arc advances along the tangent direction for positive kappa
                angle * r
            };
            p = self.clamp_to_domain(p + delta_s / g);
        }
        let c = self.combine(p, 0);
        let d1 = self.combine(p, 1);
        let g = (d1[0] * d1[0] + d1[1] * d1[1]).sqrt();
        let nx = -d1[1] / g;
        let ny = d1[0] / g;
        let n = (query[0] - c[0]) * nx + (query[1] - c[1]) * ny;
        Projection {
            point: SplinePoint { p, n },
            ambiguous,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrameDerivatives {
    pub g: f64,
    pub g_prime: f64,
    pub kappa: f64,
    pub kappa_prime: f64,
}

/// Cumulative-distance progress assignment: each step advances by the
/// waypoint spacing divided by the target control-point spacing.
pub fn assign_progress(sketch: &Sketch, dist_max: f64) -> Vec<f64> {
    assert!(dist_max > 0.0, "dist_max must be positive");
    let mut out = Vec::with_capacity(sketch.waypoints.len());
    let mut p = 0.0;
    out.push(0.0);
    for pair in sketch.waypoints.windows(2) {
        let d = ((pair[1].x - pair[0].x).powi(2) + (pair[1].y - pair[0].y).powi(2)).sqrt();
        p += d / dist_max;
        out.push(p);
    }
    out
}

/// Fit the baseline spline to a sketch by regularized least squares.
///
/// Progress values are shifted by +1.5 so every sample lies inside the
/// valid domain, and N is chosen large enough to cover the shifted range.
pub fn fit_baseline(sketch: &Sketch, dist_max: f64, c_reg: f64) -> Result<Baseline, GeometryError> {
    assert!(c_reg >= 0.0, "c_reg must be non-negative");
    let raw = assign_progress(sketch, dist_max);
    let shifted: Vec<f64> = raw.iter().map(|p| p + 1.5).collect();
    let p_max = *shifted.last().unwrap();
    let n = ((p_max.ceil() as usize) + 3).max(6);

    let k = shifted.len();
    let mut b = Mat::zeros(k, n);
    let stub = Baseline {
        control_points: vec![[0.0, 0.0]; n],
        station_table: vec![(0.0, 0.0), (1.0, 1.0)],
    };
    for (row, &p) in shifted.iter().enumerate() {
        let (w, i0) = stub.basis_unchecked(p, 0);
        for (j, wj) in w.iter().enumerate() {
            b[(row, i0 + j)] = *wj;
        }
    }
    // second-difference regularizer rows [-1, 2, -1]
    let mut r = Mat::zeros(n - 2, n);
    for i in 0..n - 2 {
        r[(i, i)] = -1.0;
        r[(i, i + 1)] = 2.0;
        r[(i, i + 2)] = -1.0;
    }

    let mut normal = b.gram();
    let mut reg = r.gram();
    reg.scale(c_reg * c_reg);
    normal.add_assign(&reg);

    let chol = Cholesky::new_with_jitter(&normal)
        .ok_or_else(|| GeometryError::Fit("normal equations singular".into()))?;

    let wx: Vec<f64> = sketch.waypoints.iter().map(|w| w.x).collect();
    let wy: Vec<f64> = sketch.waypoints.iter().map(|w| w.y).collect();
    let cx = chol.solve(&b.matvec_t(&wx));
    let cy = chol.solve(&b.matvec_t(&wy));

    let control_points: Vec<[f64; 2]> = cx.iter().zip(&cy).map(|(&x, &y)| [x, y]).collect();
    let mut baseline = Baseline {
        control_points,
        station_table: Vec::new(),
    };
    baseline.station_table = build_station_table(&baseline);
    Ok(baseline)
}

fn build_station_table(baseline: &Baseline) -> Vec<(f64, f64)> {
    let (lo, hi) = baseline.domain();
    let steps = ((hi - lo) / STATION_TABLE_DP).ceil() as usize;
    let mut table = Vec::with_capacity(steps + 1);
    let mut s = 0.0;
    let mut prev_g = speed_at(baseline, lo);
    table.push((lo, 0.0));
    for i in 1..=steps {
        let p = (lo + i as f64 * STATION_TABLE_DP).min(hi);
        let g = speed_at(baseline, p);
        let dp = p - table.last().unwrap().0;
        s += 0.5 * (prev_g + g) * dp;
        table.push((p, s));
        prev_g = g;
        if p >= hi {
            break;
        }
    }
    table
}

fn speed_at(baseline: &Baseline, p: f64) -> f64 {
    let d = baseline.combine(p, 1);
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cox-de Boor recursion over knots {-2.5,...,2.5}; independent oracle
    /// for the truncated-power basis.
    fn cox_de_boor(t: f64) -> f64 {
        fn n(i: usize, k: usize, t: f64, knots: &[f64]) -> f64 {
            if k == 0 {
                return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
            }
            let left = if knots[i + k] != knots[i] {
                (t - knots[i]) / (knots[i + k] - knots[i]) * n(i, k - 1, t, knots)
            } else {
                0.0
            };
            let right = if knots[i + k + 1] != knots[i + 1] {
                (knots[i + k + 1] - t) / (knots[i + k + 1] - knots[i + 1])
                    * n(i + 1, k - 1, t, knots)
            } else {
                0.0
            };
            left + right
        }
        let knots = [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5];
        n(0, 4, t, &knots)
    }

    fn straight_sketch(count: usize, spacing: f64) -> Sketch {
        Sketch::new(
            (0..count)
                .map(|i| Waypoint::new(i as f64 * spacing, 0.0))
                .collect(),
        )
        .unwrap()
    }

    fn circle_sketch(radius: f64, count: usize) -> Sketch {
        Sketch::new(
            (0..count)
                .map(|i| {
                    let a = i as f64 * 0.15;
                    Waypoint::new(radius * a.cos(), radius * a.sin())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn basis_partition_of_unity() {
        let b = fit_baseline(&straight_sketch(12, 5.0), 5.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        for i in 0..=200 {
            let p = lo + (hi - lo) * i as f64 / 200.0;
            let (w, _) = b.basis(p).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {} at p={}", sum, p);
            for wi in w {
                assert!((-1e-12..=1.0 + 1e-12).contains(&wi));
            }
        }
    }

    #[test]
    fn basis_symmetric_at_knot_midpoint() {
        let b = fit_baseline(&straight_sketch(12, 5.0), 5.0, 1.0).unwrap();
        // p at an integer center: weights symmetric around the middle one
        let (w, _) = b.basis(4.0).unwrap();
        assert!((w[0] - w[4]).abs() < 1e-12);
        assert!((w[1] - w[3]).abs() < 1e-12);
    }

    #[test]
    fn basis_matches_cox_de_boor_oracle() {
        for i in 0..100 {
            let t = -2.5 + 5.0 * i as f64 / 100.0;
            let ours = cardinal_basis(t, 0);
            let oracle = cox_de_boor(t);
            assert!((ours - oracle).abs() < 1e-12, "t={} {} {}", t, ours, oracle);
        }
    }

    #[test]
    fn basis_continuous_at_domain_start() {
        let b = fit_baseline(&straight_sketch(8, 5.0), 5.0, 1.0).unwrap();
        let (w_edge, i_edge) = b.basis(1.5).unwrap();
        let (w_in, i_in) = b.basis(1.5 + 1e-9).unwrap();
        assert_eq!(i_edge, i_in);
        for (a, c) in w_edge.iter().zip(&w_in) {
            assert!((a - c).abs() < 1e-7);
        }
    }

    #[test]
    fn assign_progress_unit_spacing() {
        let s = straight_sketch(3, 2.0);
        let p = assign_progress(&s, 2.0);
        assert_eq!(p, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn assign_progress_mixed_spacing() {
        let s = Sketch::new(vec![
            Waypoint::new(0.0, 0.0),
            Waypoint::new(2.0, 0.0),
            Waypoint::new(6.0, 0.0),
        ])
        .unwrap();
        let p = assign_progress(&s, 2.0);
        assert_eq!(p, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn assign_progress_matches_prefix_sum_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Waypoint> = (0..50)
            .map(|i| Waypoint::new(i as f64 * 3.0 + rng.gen::<f64>(), rng.gen::<f64>() * 4.0))
            .collect();
        let s = Sketch::new(pts).unwrap();
        let p = assign_progress(&s, 5.0);
        // independent prefix-sum oracle
        let mut acc = vec![0.0];
        for w in s.waypoints.windows(2) {
            let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            acc.push(acc.last().unwrap() + d / 5.0);
        }
        for (a, b) in p.iter().zip(&acc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_fit_is_exact() {
        let sketch = straight_sketch(11, 5.0);
        for c_reg in [0.0, 1.0, 10.0] {
            let b = fit_baseline(&sketch, 5.0, c_reg).unwrap();
            let p_hat = assign_progress(&sketch, 5.0);
            for (w, p) in sketch.waypoints.iter().zip(&p_hat) {
                let xy = b.eval(p + 1.5).unwrap();
                let err = ((xy[0] - w.x).powi(2) + (xy[1] - w.y).powi(2)).sqrt();
                assert!(err < 1e-6, "err {} at c_reg {}", err, c_reg);
            }
        }
    }

    #[test]
    fn regularization_reduces_curvature_energy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Waypoint> = (0..40)
            .map(|i| {
                let x = i as f64 * 2.0;
                Waypoint::new(x, 3.0 * (x * 0.3).sin() + 0.3 * rng.gen::<f64>())
            })
            .collect();
        let sketch = Sketch::new(pts).unwrap();
        let energy = |b: &Baseline| -> f64 {
            let c = &b.control_points;
            (0..c.len() - 2)
                .map(|i| {
                    let dx = -c[i][0] + 2.0 * c[i + 1][0] - c[i + 2][0];
                    let dy = -c[i][1] + 2.0 * c[i + 1][1] - c[i + 2][1];
                    dx * dx + dy * dy
                })
                .sum()
        };
        let low = fit_baseline(&sketch, 5.0, 0.0).unwrap();
        let high = fit_baseline(&sketch, 5.0, 10.0).unwrap();
        assert!(energy(&high) < energy(&low));
    }

    #[test]
    fn arc_fit_matches_dense_normal_equation_oracle() {
        let sketch = circle_sketch(30.0, 20);
        let b = fit_baseline(&sketch, 5.0, 1.0).unwrap();
        // independent oracle: re-solve the stacked least-squares system with LU
        let raw = assign_progress(&sketch, 5.0);
        let n = b.num_control_points();
        let mut bm = Mat::zeros(sketch.waypoints.len(), n);
        for (row, p) in raw.iter().enumerate() {
            let (w, i0) = b.basis(p + 1.5).unwrap();
            for (j, wj) in w.iter().enumerate() {
                bm[(row, i0 + j)] = *wj;
            }
        }
        let mut r = Mat::zeros(n - 2, n);
        for i in 0..n - 2 {
            r[(i, i)] = -1.0;
            r[(i, i + 1)] = 2.0;
            r[(i, i + 2)] = -1.0;
        }
        let mut normal = bm.gram();
        normal.add_assign(&r.gram());
        let wx: Vec<f64> = sketch.waypoints.iter().map(|w| w.x).collect();
        let wy: Vec<f64> = sketch.waypoints.iter().map(|w| w.y).collect();
        let cx = crate::linalg::lu_solve(&normal, &bm.matvec_t(&wx)).unwrap();
        let cy = crate::linalg::lu_solve(&normal, &bm.matvec_t(&wy)).unwrap();
        for (k, p) in raw.iter().enumerate() {
            let ours = b.eval(p + 1.5).unwrap();
            let (w, i0) = b.basis(p + 1.5).unwrap();
            let ox: f64 = w.iter().enumerate().map(|(j, wj)| wj * cx[i0 + j]).sum();
            let oy: f64 = w.iter().enumerate().map(|(j, wj)| wj * cy[i0 + j]).sum();
            let err = ((ours[0] - ox).powi(2) + (ours[1] - oy).powi(2)).sqrt();
            assert!(err < 1e-9, "waypoint {}: err {}", k, err);
        }
    }

    #[test]
    fn straight_baseline_zero_curvature() {
        let b = fit_baseline(&straight_sketch(12, 5.0), 5.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        for i in 0..=50 {
            let p = lo + (hi - lo) * i as f64 / 50.0;
            assert!(b.eval_curvature(p).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn arc_baseline_curvature_matches_radius() {
        let b = fit_baseline(&circle_sketch(10.0, 40), 2.0, 0.5).unwrap();
        let (lo, hi) = b.domain();
        let mid = 0.5 * (lo + hi);
        let kappa = b.eval_curvature(mid).unwrap().abs();
        assert!((kappa - 0.1).abs() < 1e-3, "kappa {}", kappa);
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let b = fit_baseline(&circle_sketch(20.0, 30), 3.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        for i in 1..20 {
            let p = lo + (hi - lo) * i as f64 / 20.0;
            let t = b.eval_tangent(p).unwrap();
            let h = 1e-5;
            let a = b.eval(p - h).unwrap();
            let c = b.eval(p + h).unwrap();
            let fd = [(c[0] - a[0]) / (2.0 * h), (c[1] - a[1]) / (2.0 * h)];
            let fg = (fd[0] * fd[0] + fd[1] * fd[1]).sqrt();
            let angle = (t[0] * fd[1] / fg - t[1] * fd[0] / fg).asin().abs();
            assert!(angle < 1e-5, "angle {}", angle);
        }
    }

    #[test]
    fn projection_onto_straight_line() {
        let b = fit_baseline(&straight_sketch(12, 5.0), 5.0, 1.0).unwrap();
        let proj = b.project_point([10.0, 3.0]);
        assert!((proj.point.n - 3.0).abs() < 1e-6, "n {}", proj.point.n);
        let on = b.eval(proj.point.p).unwrap();
        assert!((on[0] - 10.0).abs() < 1e-6);
        assert!(on[1].abs() < 1e-6);
    }

    #[test]
    fn projection_of_point_on_baseline_is_zero_offset() {
        let b = fit_baseline(&circle_sketch(20.0, 30), 3.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        let p = 0.5 * (lo + hi);
        let q = b.eval(p).unwrap();
        let proj = b.project_point(q);
        assert!(proj.point.n.abs() < 1e-9);
    }

    #[test]
    fn projection_on_arc_matches_dense_search() {
        let b = fit_baseline(&circle_sketch(10.0, 40), 2.0, 0.5).unwrap();
        let (lo, hi) = b.domain();
        let mid = 0.5 * (lo + hi);
        let c = b.eval(mid).unwrap();
        // query 2 m outward along the radial ray through the midpoint
        let t = b.eval_tangent(mid).unwrap();
        let q = [c[0] + 2.0 * t[1], c[1] - 2.0 * t[0]];
        let proj = b.project_point(q);
        assert!((proj.point.n.abs() - 2.0).abs() < 1e-3, "n {}", proj.point.n);
        // dense-search oracle with local bisection
        let mut best = (lo, f64::INFINITY);
        for i in 0..10_000 {
            let p = lo + (hi - lo) * i as f64 / 9_999.0;
            let e = b.eval(p).unwrap();
            let d2 = (q[0] - e[0]).powi(2) + (q[1] - e[1]).powi(2);
            if d2 < best.1 {
                best = (p, d2);
            }
        }
        let ours = b.eval(proj.point.p).unwrap();
        let d_ours = ((q[0] - ours[0]).powi(2) + (q[1] - ours[1]).powi(2)).sqrt();
        assert!(d_ours <= best.1.sqrt() + 1e-3);
    }

    #[test]
    fn station_uniform_on_straight_line() {
        let b = fit_baseline(&straight_sketch(12, 5.0), 5.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        let mid = 0.5 * (lo + hi);
        let d = b.station_of(mid + 1.0).unwrap() - b.station_of(mid).unwrap();
        assert!((d - 5.0).abs() < 1e-3, "delta {}", d);
    }

    #[test]
    fn station_progress_round_trip() {
        use rand::{Rng, SeedableRng};
        let b = fit_baseline(&circle_sketch(20.0, 30), 3.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = lo + (hi - lo) * rng.gen::<f64>();
            let s = b.station_of(p).unwrap();
            let p2 = b.progress_of(s).unwrap();
            assert!((p - p2).abs() < 1e-6);
        }
    }

    #[test]
    fn station_matches_quadrature_oracle() {
        let b = fit_baseline(&circle_sketch(15.0, 30), 3.0, 1.0).unwrap();
        let (lo, hi) = b.domain();
        let p_end = 0.8 * (hi - lo) + lo;
        // fine trapezoid quadrature of the speed
        let steps = 20_000;
        let mut s = 0.0;
        for i in 0..steps {
            let p0 = lo + (p_end - lo) * i as f64 / steps as f64;
            let p1 = lo + (p_end - lo) * (i + 1) as f64 / steps as f64;
            let g0 = b.progress_scale(p0).unwrap();
            let g1 = b.progress_scale(p1).unwrap();
            s += 0.5 * (g0 + g1) * (p1 - p0);
        }
        let ours = b.station_of(p_end).unwrap();
        assert!((ours - s).abs() < 1e-3, "ours {} oracle {}", ours, s);
    }

    #[test]
    fn eval_outside_domain_is_error() {
        let b = fit_baseline(&straight_sketch(8, 5.0), 5.0, 1.0).unwrap();
        assert!(matches!(b.eval(0.0), Err(GeometryError::Domain { .. })));
        assert!(matches!(b.eval(1e6), Err(GeometryError::Domain { .. })));
    }

    #[test]
    fn sketch_drops_coincident_waypoints() {
        let s = Sketch::new(vec![
            Waypoint::new(0.0, 0.0),
            Waypoint::new(0.0, 0.0),
            Waypoint::new(1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(s.waypoints.len(), 2);
        assert_eq!(s.dropped_duplicates, 1);
    }

    #[test]
    fn sketch_rejects_single_point() {
        let r = Sketch::new(vec![Waypoint::new(0.0, 0.0), Waypoint::new(0.0, 0.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn all_coincident_waypoints_is_invalid_sketch() {
        let r = Sketch::new(vec![Waypoint::new(1.0, 1.0); 5]);
        assert!(matches!(r, Err(GeometryError::InvalidSketch(_))));
    }
}
