//! Self-supervised collision-avoidance locomotion pipeline for a simulated
//! quadruped: minimum-time torso planning by direct collocation, distillation
//! of planned trajectories into a velocity-prediction network, and closed-loop
//! tracking with a ground-reaction-force MPC.

pub mod datagen;
pub mod error;
pub mod model;
pub mod nlp;
pub mod planner;
pub mod policy;
pub mod sdf;

pub use error::{Error, Result};
pub use model::{
    normalize_yaw, BoxObstacle, GroundReactionForce, LegJointState, QuadrupedParams, TorsoCommand,
    TorsoPose, TorsoState, TorsoTrajectory, TrajectoryKnot, VelocitySample, World, LEG_COUNT,
    LEG_NAMES,
};
