//! Shared domain types and unit conventions.
//!
//! Units are SI throughout: meters, seconds, radians, Newtons. Legs are
//! ordered FL, FR, RL, RR everywhere a per-leg quantity appears.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Number of legs; per-leg arrays follow the FL, FR, RL, RR order.
pub const LEG_COUNT: usize = 4;

/// Leg names in canonical order.
pub const LEG_NAMES: [&str; LEG_COUNT] = ["FL", "FR", "RL", "RR"];

/// Torso pose: translation plus rotation about the local z-axis.
/// Roll and pitch are fixed at zero by the reduced model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsoPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl TorsoPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// The (x, y, z) point used for collision checking.
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Full torso state: pose and its time derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsoState {
    pub pose: TorsoPose,
    /// (xdot, ydot, zdot) in m/s and yaw rate in rad/s.
    pub twist: [f64; 4],
}

impl TorsoState {
    pub fn new(pose: TorsoPose, twist: [f64; 4]) -> Self {
        Self { pose, twist }
    }

    /// A state at rest at the given pose.
    pub fn at_rest(pose: TorsoPose) -> Self {
        Self::new(pose, [0.0; 4])
    }

    /// Flatten to the 8-vector [x, y, z, yaw, vx, vy, vz, vyaw].
    pub fn to_array(&self) -> [f64; 8] {
        let p = self.pose.to_array();
        [
            p[0],
            p[1],
            p[2],
            p[3],
            self.twist[0],
            self.twist[1],
            self.twist[2],
            self.twist[3],
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            pose: TorsoPose::new(a[0], a[1], a[2], a[3]),
            twist: [a[4], a[5], a[6], a[7]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Torso command: second derivative of the pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsoCommand {
    /// (ax, ay, az) in m/s^2 and yaw acceleration in rad/s^2.
    pub accel: [f64; 4],
}

impl TorsoCommand {
    pub fn new(accel: [f64; 4]) -> Self {
        Self { accel }
    }

    pub fn zero() -> Self {
        Self { accel: [0.0; 4] }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().all(|v| v.is_finite())
    }
}

/// One trajectory knot: time, state, and the command active at that knot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryKnot {
    pub time: f64,
    pub state: TorsoState,
    pub command: TorsoCommand,
}

/// Timestamped torso trajectory with uniform knot spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsoTrajectory {
    /// Total trajectory duration T in seconds.
    pub total_time: f64,
    /// N+1 knots at times k * T / N.
    pub knots: Vec<TrajectoryKnot>,
}

impl TorsoTrajectory {
    /// Number of collocation intervals N.
    pub fn interval_count(&self) -> usize {
        self.knots.len().saturating_sub(1)
    }

    /// Checks the structural invariants: strictly increasing times from 0 to
    /// `total_time` with uniform spacing `T/N` within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 knots, got {}",
                self.knots.len()
            )));
        }
        if !self.total_time.is_finite() || self.total_time < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "total_time must be finite and non-negative, got {}",
                self.total_time
            )));
        }
        let n = self.interval_count() as f64;
        let h = self.total_time / n;
        for (k, knot) in self.knots.iter().enumerate() {
            if !knot.state.is_finite() || !knot.command.is_finite() {
                return Err(Error::NonFinite(format!("trajectory knot {k}")));
            }
            let expected = k as f64 * h;
            if (knot.time - expected).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "knot {k} at t = {} breaks uniform spacing (expected {expected})",
                    knot.time
                )));
            }
        }
        Ok(())
    }

    /// State at time `t` by linear interpolation between knots; clamped to
    /// the trajectory's time range.
    pub fn sample(&self, t: f64) -> TorsoState {
        let n = self.interval_count();
        if n == 0 || self.total_time <= 0.0 {
            return self.knots[0].state;
        }
        let t = t.clamp(0.0, self.total_time);
        let h = self.total_time / n as f64;
        let k = ((t / h).floor() as usize).min(n - 1);
        let alpha = (t - self.knots[k].time) / h;
        let a = self.knots[k].state.to_array();
        let b = self.knots[k + 1].state.to_array();
        let mut out = [0.0; 8];
        for i in 0..8 {
            out[i] = a[i] + alpha * (b[i] - a[i]);
        }
        TorsoState::from_array(out)
    }
}

/// Axis-aligned box obstacle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
}

impl BoxObstacle {
    pub fn new(min_corner: [f64; 3], max_corner: [f64; 3]) -> Self {
        Self {
            min_corner,
            max_corner,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.min_corner[i] < self.max_corner[i]) {
                return Err(Error::InvalidArgument(format!(
                    "box corner order violated on axis {i}: {} !< {}",
                    self.min_corner[i], self.max_corner[i]
                )));
            }
        }
        Ok(())
    }
}

/// Workspace description: obstacles, state/command boxes, and the minimum
/// allowed obstacle clearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub obstacles: Vec<BoxObstacle>,
    /// Lower bounds on [x, y, z, yaw, vx, vy, vz, vyaw].
    pub state_lower: [f64; 8],
    pub state_upper: [f64; 8],
    /// Lower bounds on [ax, ay, az, ayaw].
    pub command_lower: [f64; 4],
    pub command_upper: [f64; 4],
    /// Minimum torso-to-obstacle distance epsilon in meters.
    pub clearance: f64,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        for obstacle in &self.obstacles {
            obstacle.validate()?;
        }
        for i in 0..8 {
            if self.state_lower[i] > self.state_upper[i] {
                return Err(Error::InvalidArgument(format!(
                    "state bounds reversed on component {i}"
                )));
            }
        }
        for i in 0..4 {
            if self.command_lower[i] > self.command_upper[i] {
                return Err(Error::InvalidArgument(format!(
                    "command bounds reversed on component {i}"
                )));
            }
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clearance must be >= 0, got {}",
                self.clearance
            )));
        }
        Ok(())
    }

    /// Horizontal speed limit: the planner bounds sqrt(vx^2 + vy^2) by the
    /// tighter of the two horizontal velocity box bounds.
    pub fn horizontal_speed_limit(&self) -> f64 {
        self.state_upper[4].min(self.state_upper[5])
    }
}

/// Physical quadruped parameters shared by the MPC, legs, and simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrupedParams {
    pub mass: f64,
    /// Diagonal torso inertia (Ixx, Iyy, Izz) in kg m^2.
    pub inertia_diag: [f64; 3],
    /// Hip positions in the torso frame, FL, FR, RL, RR.
    pub hip_offsets: [[f64; 3]; LEG_COUNT],
    /// (l1, l2, l3): abduction offset, upper link, lower link, meters.
    pub link_lengths: (f64, f64, f64),
    pub torque_min: [f64; 12],
    pub torque_max: [f64; 12],
    pub joint_min: [f64; 12],
    pub joint_max: [f64; 12],
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Gravitational acceleration, m/s^2 (positive down).
    pub gravity: f64,
}

impl Default for QuadrupedParams {
    fn default() -> Self {
        let torque_limit = 33.5;
        Self {
            mass: 12.0,
            inertia_diag: [0.08, 0.28, 0.30],
            hip_offsets: [
                [0.18, 0.12, 0.0],
                [0.18, -0.12, 0.0],
                [-0.18, 0.12, 0.0],
                [-0.18, -0.12, 0.0],
            ],
            link_lengths: (0.08, 0.21, 0.21),
            torque_min: [-torque_limit; 12],
            torque_max: [torque_limit; 12],
            joint_min: [
                -0.8, -3.0, 0.0, -0.8, -3.0, 0.0, -0.8, -3.0, 0.0, -0.8, -3.0, 0.0,
            ],
            joint_max: [
                0.8, 3.0, 3.0, 0.8, 3.0, 3.0, 0.8, 3.0, 3.0, 0.8, 3.0, 3.0,
            ],
            mu: 0.6,
            gravity: 9.81,
        }
    }
}

impl QuadrupedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidArgument("mass must be > 0".into()));
        }
        if self.inertia_diag.iter().any(|&i| !(i > 0.0)) {
            return Err(Error::InvalidArgument("inertia must be > 0".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument("mu must be > 0".into()));
        }
        for i in 0..12 {
            if !(self.torque_min[i] < self.torque_max[i]) {
                return Err(Error::InvalidArgument(format!(
                    "torque limits reversed on joint {i}"
                )));
            }
            if !(self.joint_min[i] < self.joint_max[i]) {
                return Err(Error::InvalidArgument(format!(
                    "joint limits reversed on joint {i}"
                )));
            }
        }
        Ok(())
    }

    /// Joint limits for one leg as ([min; 3], [max; 3]).
    pub fn leg_joint_limits(&self, leg: usize) -> ([f64; 3], [f64; 3]) {
        let lo = [
            self.joint_min[3 * leg],
            self.joint_min[3 * leg + 1],
            self.joint_min[3 * leg + 2],
        ];
        let hi = [
            self.joint_max[3 * leg],
            self.joint_max[3 * leg + 1],
            self.joint_max[3 * leg + 2],
        ];
        (lo, hi)
    }
}

/// All twelve joint positions and velocities, per-leg triples ordered as
/// `hip_offsets` (abduction, hip pitch, knee within each leg).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegJointState {
    pub q: [f64; 12],
    pub qdot: [f64; 12],
}

impl LegJointState {
    pub fn zero() -> Self {
        Self {
            q: [0.0; 12],
            qdot: [0.0; 12],
        }
    }

    pub fn leg_q(&self, leg: usize) -> [f64; 3] {
        [self.q[3 * leg], self.q[3 * leg + 1], self.q[3 * leg + 2]]
    }

    pub fn leg_qdot(&self, leg: usize) -> [f64; 3] {
        [
            self.qdot[3 * leg],
            self.qdot[3 * leg + 1],
            self.qdot[3 * leg + 2],
        ]
    }
}

/// Per-foot ground reaction forces in the world frame plus stance flags.
/// Swing feet carry exactly zero force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundReactionForce {
    pub forces: [[f64; 3]; LEG_COUNT],
    pub stance: [bool; LEG_COUNT],
}

impl GroundReactionForce {
    pub fn zero(stance: [bool; LEG_COUNT]) -> Self {
        Self {
            forces: [[0.0; 3]; LEG_COUNT],
            stance,
        }
    }

    /// Sum of all foot forces.
    pub fn total(&self) -> [f64; 3] {
        let mut t = [0.0; 3];
        for f in &self.forces {
            for i in 0..3 {
                t[i] += f[i];
            }
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        for (leg, (f, &st)) in self.forces.iter().zip(self.stance.iter()).enumerate() {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("GRF for leg {leg}")));
            }
            if st {
                if f[2] < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "stance leg {leg} has negative normal force {}",
                        f[2]
                    )));
                }
            } else if f.iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "swing leg {leg} has nonzero force"
                )));
            }
        }
        Ok(())
    }
}

/// One supervised sample: torso pose in, torso velocity out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    /// Pose [x, y, z, yaw].
    pub input: [f64; 4],
    /// Velocity [vx, vy, vz, vyaw].
    pub target: [f64; 4],
}

impl VelocitySample {
    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(self.target.iter()).all(|v| v.is_finite())
    }
}

/// Wraps an angle into (-pi, pi]; -pi maps to +pi.
pub fn normalize_yaw(angle: f64) -> Result<f64> {
    if !angle.is_finite() {
        return Err(Error::NonFinite(format!("normalize_yaw({angle})")));
    }
    let r = angle.rem_euclid(2.0 * PI);
    Ok(if r > PI { r - 2.0 * PI } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_yaw_identity() {
        assert_eq!(normalize_yaw(0.0).unwrap(), 0.0);
    }

    #[test]
    fn normalize_yaw_periodicity() {
        assert_relative_eq!(normalize_yaw(3.0 * PI).unwrap(), PI, max_relative = 1e-12);
    }

    #[test]
    fn normalize_yaw_negative_pi_maps_to_positive() {
        assert_relative_eq!(normalize_yaw(-PI).unwrap(), PI, max_relative = 1e-12);
    }

    #[test]
    fn normalize_yaw_rejects_non_finite() {
        assert!(normalize_yaw(f64::NAN).is_err());
        assert!(normalize_yaw(f64::INFINITY).is_err());
    }

    #[test]
    fn state_flatten_round_trip() {
        let s = TorsoState::new(TorsoPose::new(1.0, -2.0, 0.28, 0.3), [0.1, 0.2, -0.3, 0.4]);
        assert_eq!(TorsoState::from_array(s.to_array()), s);
    }

    #[test]
    fn trajectory_validate_catches_nonuniform_spacing() {
        let pose = TorsoPose::new(0.0, 0.0, 0.28, 0.0);
        let knot = |t: f64| TrajectoryKnot {
            time: t,
            state: TorsoState::at_rest(pose),
            command: TorsoCommand::zero(),
        };
        let good = TorsoTrajectory {
            total_time: 1.0,
            knots: vec![knot(0.0), knot(0.5), knot(1.0)],
        };
        assert!(good.validate().is_ok());
        let bad = TorsoTrajectory {
            total_time: 1.0,
            knots: vec![knot(0.0), knot(0.4), knot(1.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trajectory_sample_interpolates_linearly() {
        let state = |x: f64, vx: f64| {
            TorsoState::new(TorsoPose::new(x, 0.0, 0.28, 0.0), [vx, 0.0, 0.0, 0.0])
        };
        let traj = TorsoTrajectory {
            total_time: 2.0,
            knots: vec![
                TrajectoryKnot {
                    time: 0.0,
                    state: state(0.0, 1.0),
                    command: TorsoCommand::zero(),
                },
                TrajectoryKnot {
                    time: 1.0,
                    state: state(1.0, 1.0),
                    command: TorsoCommand::zero(),
                },
                TrajectoryKnot {
                    time: 2.0,
                    state: state(2.0, 1.0),
                    command: TorsoCommand::zero(),
                },
            ],
        };
        let s = traj.sample(0.5);
        assert_relative_eq!(s.pose.x, 0.5, max_relative = 1e-12);
        let s = traj.sample(1.75);
        assert_relative_eq!(s.pose.x, 1.75, max_relative = 1e-12);
        // Clamped outside the range.
        assert_relative_eq!(traj.sample(5.0).pose.x, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn grf_validation() {
        let mut grf = GroundReactionForce::zero([true, true, false, false]);
        grf.forces[0] = [0.0, 0.0, 10.0];
        assert!(grf.validate().is_ok());
        grf.forces[2] = [0.0, 0.0, 1.0];
        assert!(grf.validate().is_err());
        grf.forces[2] = [0.0; 3];
        grf.forces[1] = [0.0, 0.0, -1.0];
        assert!(grf.validate().is_err());
    }

    #[test]
    fn default_quadruped_params_are_consistent() {
        QuadrupedParams::default().validate().unwrap();
    }

    proptest! {
        #[test]
        fn normalize_yaw_idempotent_and_periodic(angle in -1e6f64..1e6f64) {
            let once = normalize_yaw(angle).unwrap();
            prop_assert!(once > -PI && once <= PI);
            let twice = normalize_yaw(once).unwrap();
            prop_assert!((once - twice).abs() < 1e-12);
            let shifted = normalize_yaw(angle + 2.0 * PI).unwrap();
            prop_assert!((once - shifted).abs() < 1e-6);
        }

        #[test]
        fn state_round_trip_identity(values in prop::array::uniform8(-1e3f64..1e3f64)) {
            let state = TorsoState::from_array(values);
            prop_assert_eq!(state.to_array(), values);
        }
    }
}
