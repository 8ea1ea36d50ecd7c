//! Safety wrapper for experimental motion planners.
//!
//! Takes a rough waypoint sketch from any planner, converts it into a
//! maneuver (baseline spline, tracking references, lateral tubes, and
//! longitudinal bounds), and solves the maneuver with a curvilinear
//! kinematic-bicycle MPC. Also ships a deterministic closed-loop
//! simulator with replayed agents and safety/comfort/progress metrics.

pub mod geometry;
pub mod linalg;
pub mod maneuver;
pub mod mpc;
pub mod optim;
pub mod planners;
pub mod sim;
pub mod vehicle;

pub use geometry::{Baseline, Sketch, SplinePoint, Waypoint};
pub use maneuver::{extract_maneuver, Maneuver, Scene, WrapperConfig, WrapperMode};
pub use vehicle::{AvPose, VehicleGeometry};
