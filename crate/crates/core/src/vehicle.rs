//! Vehicle footprint geometry and Cartesian ego state shared by maneuver
//! extraction, the MPC, and the simulator.

use serde::{Deserialize, Serialize};

/// Rectangular footprint: width, front/rear overhang distances from the
/// reference point, and wheelbase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub width: f64,
    pub front_length: f64,
    pub rear_length: f64,
    pub wheelbase: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            width: 2.0,
            front_length: 4.0,
            rear_length: 1.0,
            wheelbase: 3.0,
        }
    }
}

impl VehicleGeometry {
    /// Footprint corners in world coordinates, CCW starting front-left.
    pub fn corners(&self, x: f64, y: f64, heading: f64) -> [[f64; 2]; 4] {
        let (s, c) = heading.sin_cos();
        let hw = 0.5 * self.width;
        let local = [
            [self.front_length, hw],
            [-self.rear_length, hw],
            [-self.rear_length, -hw],
            [self.front_length, -hw],
        ];
        local.map(|[lx, ly]| [x + lx * c - ly * s, y + lx * s + ly * c])
    }

    pub fn front_bumper(&self, x: f64, y: f64, heading: f64) -> [f64; 2] {
        [x + self.front_length * heading.cos(), y + self.front_length * heading.sin()]
    }

    pub fn rear_bumper(&self, x: f64, y: f64, heading: f64) -> [f64; 2] {
        [x - self.rear_length * heading.cos(), y - self.rear_length * heading.sin()]
    }
}

/// Cartesian ego state used by the simulator and as the MPC entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub steering: f64,
}

impl AvPose {
    pub fn at_rest(x: f64, y: f64, heading: f64) -> Self {
        AvPose {
            x,
            y,
            heading,
            v: 0.0,
            a: 0.0,
            steering: 0.0,
        }
    }
}
