//! Minimum-time torso trajectory optimization.
//!
//! The continuous problem (double-integrator torso dynamics, box bounds,
//! horizontal speed limit, obstacle clearance) is transcribed by trapezoidal
//! direct collocation with the total time T as an extra decision variable
//! and uniform knot spacing T/N. Collision constraints are enforced at every
//! knot and every interval midpoint to suppress corner cutting between knots.

use crate::error::{Error, Result};
use crate::model::{
    normalize_yaw, TorsoCommand, TorsoPose, TorsoState, TorsoTrajectory, TrajectoryKnot, World,
};
use crate::nlp::{
    solve_nlp, ConstraintSet, NlpProblem, SolveOptions, SolveStatus, SparseJacobian,
};
use crate::sdf;

/// Collocation and solver settings.
#[derive(Clone, Debug)]
pub struct PlannerConfig {
    /// Number of collocation intervals N (the trajectory has N+1 knots).
    pub knot_count: usize,
    pub time_lower: f64,
    pub time_upper: f64,
    /// Smoothing width for the differentiable distance surrogate.
    pub smoothing: f64,
    pub solver: SolveOptions,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        let mut solver = SolveOptions::default();
        // The re-integration audit accumulates defect residuals over N
        // intervals, so the planner solves tighter than the generic default.
        solver.tol_feas = 1e-6;
        solver.max_inner = 2000;
        Self {
            knot_count: 80,
            time_lower: 0.1,
            time_upper: 30.0,
            smoothing: 0.01,
            solver,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knot_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "knot_count must be >= 2, got {}",
                self.knot_count
            )));
        }
        if !(0.0 < self.time_lower && self.time_lower < self.time_upper) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < time_lower < time_upper, got [{}, {}]",
                self.time_lower, self.time_upper
            )));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::InvalidArgument("smoothing must be > 0".into()));
        }
        Ok(())
    }
}

/// Planning mode: full 3D motion or planar motion with the height frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlanMode {
    Full3d,
    Planar,
}

/// Result of one planning solve with independently re-evaluated quality
/// numbers (computed from the returned knots, not from solver internals).
#[derive(Clone, Debug)]
pub struct PlanReport {
    pub trajectory: TorsoTrajectory,
    /// Exact signed distance minimized over knots and interval midpoints.
    pub min_clearance: f64,
    /// Infinity norm of the re-evaluated trapezoidal defects.
    pub max_dynamics_defect: f64,
    pub solver_status: SolveStatus,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub solver_iterations: usize,
}

impl PlanReport {
    pub fn converged(&self) -> bool {
        self.solver_status == SolveStatus::Converged
    }
}

/// Decision vector layout: [T, x_0..x_N (8 each), u_0..u_N (4 each)].
#[derive(Clone, Copy, Debug)]
struct Layout {
    intervals: usize,
}

impl Layout {
    fn dimension(&self) -> usize {
        1 + 12 * (self.intervals + 1)
    }

    fn state(&self, k: usize, i: usize) -> usize {
        1 + 8 * k + i
    }

    fn command(&self, k: usize, j: usize) -> usize {
        1 + 8 * (self.intervals + 1) + 4 * k + j
    }
}

/// Smooth constraint distance and gradient for the active planning mode.
/// Planar mode measures against obstacle footprints, so the z component of
/// the gradient is zero there.
fn constraint_distance(
    world: &World,
    p: [f64; 3],
    smoothing: f64,
    mode: PlanMode,
) -> (f64, [f64; 3]) {
    match mode {
        PlanMode::Full3d => sdf::smooth_signed_distance_with_gradient(&p, world, smoothing)
            .expect("finite collocation point"),
        PlanMode::Planar => {
            let (d, g) =
                sdf::smooth_footprint_distance_with_gradient(&[p[0], p[1]], world, smoothing);
            (d, [g[0], g[1], 0.0])
        }
    }
}

fn check_pose_in_bounds(label: &str, pose: &TorsoPose, world: &World) -> Result<()> {
    let p = pose.to_array();
    for i in 0..4 {
        if p[i] < world.state_lower[i] - 1e-12 || p[i] > world.state_upper[i] + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "{label} pose component {i} = {} outside workspace bounds [{}, {}]",
                p[i], world.state_lower[i], world.state_upper[i]
            )));
        }
    }
    Ok(())
}

fn check_endpoint_clearance(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    mode: PlanMode,
) -> Result<()> {
    let distance_of = |pose: &TorsoPose| -> Result<f64> {
        match mode {
            PlanMode::Full3d => sdf::signed_distance(&pose.position(), world),
            PlanMode::Planar => Ok(sdf::footprint_signed_distance(&[pose.x, pose.y], world)),
        }
    };
    let d_start = distance_of(start)?;
    if d_start < world.clearance {
        return Err(Error::StartInCollision {
            distance: d_start,
            clearance: world.clearance,
        });
    }
    let d_goal = distance_of(goal)?;
    if d_goal < world.clearance {
        return Err(Error::GoalInCollision {
            distance: d_goal,
            clearance: world.clearance,
        });
    }
    Ok(())
}

/// Builds the collocation NLP for the given endpoints.
///
/// Decision vector: [T, x_0..x_N, u_0..u_N], dimension 1 + 12(N+1).
/// Equalities: 8N trapezoidal defects plus 20 boundary rows
/// (x_0 = [start, 0], x_N = [goal, 0], u_N = 0). Inequalities: smooth
/// clearance at N+1 knots and N midpoints, plus N+1 horizontal speed rows.
pub fn transcribe(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
) -> Result<NlpProblem> {
    transcribe_mode(start, goal, world, config, PlanMode::Full3d)
}

fn transcribe_mode(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
    mode: PlanMode,
) -> Result<NlpProblem> {
    config.validate()?;
    world.validate()?;
    if !start.is_finite() || !goal.is_finite() {
        return Err(Error::NonFinite("planner endpoints".into()));
    }
    check_pose_in_bounds("start", start, world)?;
    check_pose_in_bounds("goal", goal, world)?;
    check_endpoint_clearance(start, goal, world, mode)?;
    if mode == PlanMode::Planar && (start.z - goal.z).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "planar mode freezes z; start z = {} differs from goal z = {}",
            start.z, goal.z
        )));
    }

    let n = config.knot_count;
    let layout = Layout { intervals: n };
    let dim = layout.dimension();

    // Variable bounds.
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    lower[0] = config.time_lower;
    upper[0] = config.time_upper;
    for k in 0..=n {
        for i in 0..8 {
            lower[layout.state(k, i)] = world.state_lower[i];
            upper[layout.state(k, i)] = world.state_upper[i];
        }
        for j in 0..4 {
            lower[layout.command(k, j)] = world.command_lower[j];
            upper[layout.command(k, j)] = world.command_upper[j];
        }
        if mode == PlanMode::Planar {
            lower[layout.state(k, 2)] = start.z;
            upper[layout.state(k, 2)] = start.z;
            lower[layout.state(k, 6)] = 0.0;
            upper[layout.state(k, 6)] = 0.0;
            lower[layout.command(k, 2)] = 0.0;
            upper[layout.command(k, 2)] = 0.0;
        }
    }

    let eq_count = 8 * n + 20;
    let start_arr = start.to_array();
    let goal_arr = goal.to_array();

    let eq_layout = layout;
    let eq_eval = move |z: &[f64]| -> Vec<f64> {
        let t = z[0];
        let h = t / n as f64;
        let mut out = vec![0.0; eq_count];
        for k in 0..n {
            for i in 0..4 {
                let x0 = z[eq_layout.state(k, i)];
                let x1 = z[eq_layout.state(k + 1, i)];
                let v0 = z[eq_layout.state(k, 4 + i)];
                let v1 = z[eq_layout.state(k + 1, 4 + i)];
                out[8 * k + i] = x1 - x0 - 0.5 * h * (v0 + v1);
            }
            for i in 0..4 {
                let v0 = z[eq_layout.state(k, 4 + i)];
                let v1 = z[eq_layout.state(k + 1, 4 + i)];
                let u0 = z[eq_layout.command(k, i)];
                let u1 = z[eq_layout.command(k + 1, i)];
                out[8 * k + 4 + i] = v1 - v0 - 0.5 * h * (u0 + u1);
            }
        }
        let base = 8 * n;
        for i in 0..4 {
            out[base + i] = z[eq_layout.state(0, i)] - start_arr[i];
            out[base + 4 + i] = z[eq_layout.state(0, 4 + i)];
            out[base + 8 + i] = z[eq_layout.state(n, i)] - goal_arr[i];
            out[base + 12 + i] = z[eq_layout.state(n, 4 + i)];
            out[base + 16 + i] = z[eq_layout.command(n, i)];
        }
        out
    };

    let eq_jac = move |z: &[f64]| -> SparseJacobian {
        let t = z[0];
        let h = t / n as f64;
        let mut jac = SparseJacobian::new(eq_count, dim);
        for k in 0..n {
            for i in 0..4 {
                let row = 8 * k + i;
                let v0 = z[eq_layout.state(k, 4 + i)];
                let v1 = z[eq_layout.state(k + 1, 4 + i)];
                jac.push(row, eq_layout.state(k + 1, i), 1.0);
                jac.push(row, eq_layout.state(k, i), -1.0);
                jac.push(row, eq_layout.state(k, 4 + i), -0.5 * h);
                jac.push(row, eq_layout.state(k + 1, 4 + i), -0.5 * h);
                jac.push(row, 0, -0.5 * (v0 + v1) / n as f64);
            }
            for i in 0..4 {
                let row = 8 * k + 4 + i;
                let u0 = z[eq_layout.command(k, i)];
                let u1 = z[eq_layout.command(k + 1, i)];
                jac.push(row, eq_layout.state(k + 1, 4 + i), 1.0);
                jac.push(row, eq_layout.state(k, 4 + i), -1.0);
                jac.push(row, eq_layout.command(k, i), -0.5 * h);
                jac.push(row, eq_layout.command(k + 1, i), -0.5 * h);
                jac.push(row, 0, -0.5 * (u0 + u1) / n as f64);
            }
        }
        let base = 8 * n;
        for i in 0..4 {
            jac.push(base + i, eq_layout.state(0, i), 1.0);
            jac.push(base + 4 + i, eq_layout.state(0, 4 + i), 1.0);
            jac.push(base + 8 + i, eq_layout.state(n, i), 1.0);
            jac.push(base + 12 + i, eq_layout.state(n, 4 + i), 1.0);
            jac.push(base + 16 + i, eq_layout.command(n, i), 1.0);
        }
        jac
    };

    // Inequalities: clearance at knots and midpoints, then horizontal speed.
    let clearance = world.clearance;
    let smoothing = config.smoothing;
    let speed_limit = world.horizontal_speed_limit();
    let ineq_count = (2 * n + 1) + (n + 1);

    let ineq_layout = layout;
    let world_for_eval = world.clone();
    let ineq_eval = move |z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; ineq_count];
        for k in 0..=n {
            let p = [
                z[ineq_layout.state(k, 0)],
                z[ineq_layout.state(k, 1)],
                z[ineq_layout.state(k, 2)],
            ];
            let (d, _) = constraint_distance(&world_for_eval, p, smoothing, mode);
            out[k] = d - clearance;
        }
        for k in 0..n {
            let p = [
                0.5 * (z[ineq_layout.state(k, 0)] + z[ineq_layout.state(k + 1, 0)]),
                0.5 * (z[ineq_layout.state(k, 1)] + z[ineq_layout.state(k + 1, 1)]),
                0.5 * (z[ineq_layout.state(k, 2)] + z[ineq_layout.state(k + 1, 2)]),
            ];
            let (d, _) = constraint_distance(&world_for_eval, p, smoothing, mode);
            out[n + 1 + k] = d - clearance;
        }
        for k in 0..=n {
            let vx = z[ineq_layout.state(k, 4)];
            let vy = z[ineq_layout.state(k, 5)];
            out[2 * n + 1 + k] = speed_limit * speed_limit - vx * vx - vy * vy;
        }
        out
    };

    let world_for_jac = world.clone();
    let ineq_jac = move |z: &[f64]| -> SparseJacobian {
        let mut jac = SparseJacobian::new(ineq_count, dim);
        for k in 0..=n {
            let p = [
                z[ineq_layout.state(k, 0)],
                z[ineq_layout.state(k, 1)],
                z[ineq_layout.state(k, 2)],
            ];
            let (_, grad) = constraint_distance(&world_for_jac, p, smoothing, mode);
            for i in 0..3 {
                jac.push(k, ineq_layout.state(k, i), grad[i]);
            }
        }
        for k in 0..n {
            let p = [
                0.5 * (z[ineq_layout.state(k, 0)] + z[ineq_layout.state(k + 1, 0)]),
                0.5 * (z[ineq_layout.state(k, 1)] + z[ineq_layout.state(k + 1, 1)]),
                0.5 * (z[ineq_layout.state(k, 2)] + z[ineq_layout.state(k + 1, 2)]),
            ];
            let (_, grad) = constraint_distance(&world_for_jac, p, smoothing, mode);
            for i in 0..3 {
                jac.push(n + 1 + k, ineq_layout.state(k, i), 0.5 * grad[i]);
                jac.push(n + 1 + k, ineq_layout.state(k + 1, i), 0.5 * grad[i]);
            }
        }
        for k in 0..=n {
            let vx = z[ineq_layout.state(k, 4)];
            let vy = z[ineq_layout.state(k, 5)];
            jac.push(2 * n + 1 + k, ineq_layout.state(k, 4), -2.0 * vx);
            jac.push(2 * n + 1 + k, ineq_layout.state(k, 5), -2.0 * vy);
        }
        jac
    };

    Ok(NlpProblem {
        dimension: dim,
        objective: Box::new(|z: &[f64]| z[0]),
        objective_gradient: Some(Box::new(move |_z: &[f64]| {
            let mut g = vec![0.0; dim];
            g[0] = 1.0;
            g
        })),
        equality: Some(
            ConstraintSet::new(eq_count, Box::new(eq_eval)).with_jacobian(Box::new(eq_jac)),
        ),
        inequality: Some(
            ConstraintSet::new(ineq_count, Box::new(ineq_eval))
                .with_jacobian(Box::new(ineq_jac)),
        ),
        lower,
        upper,
    })
}

/// Linear-interpolation warm start: poses interpolate start to goal, twists
/// and commands start at zero, T covers the straight-line distance at half
/// the horizontal speed limit.
fn initial_guess(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
) -> Vec<f64> {
    let n = config.knot_count;
    let layout = Layout { intervals: n };
    let mut z = vec![0.0; layout.dimension()];
    let dx = goal.x - start.x;
    let dy = goal.y - start.y;
    let dz = goal.z - start.z;
    let dyaw = normalize_yaw(goal.yaw - start.yaw).unwrap_or(0.0);
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    let v_half = 0.5 * world.horizontal_speed_limit();
    let w_half = 0.5 * world.state_upper[7].max(1e-6);
    let t_guess = (dist / v_half.max(1e-6)).max(dyaw.abs() / w_half);
    z[0] = t_guess.clamp(config.time_lower, config.time_upper);
    for k in 0..=n {
        let alpha = k as f64 / n as f64;
        z[layout.state(k, 0)] = start.x + alpha * dx;
        z[layout.state(k, 1)] = start.y + alpha * dy;
        z[layout.state(k, 2)] = start.z + alpha * dz;
        z[layout.state(k, 3)] = start.yaw + alpha * dyaw;
    }
    z
}

/// Route-informed warm starts. The straight-line guess is the baseline;
/// when it crosses an obstacle, duck-under and go-around variants are added.
/// The duck-under candidate comes first in 3D because it keeps the straight
/// horizontal profile and with it the unconstrained minimum time, so the
/// first converged candidate is also the best one.
fn candidate_guesses(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
    mode: PlanMode,
) -> Result<Vec<Vec<f64>>> {
    let n = config.knot_count;
    let layout = Layout { intervals: n };
    let straight = initial_guess(start, goal, world, config);

    let margin = world.clearance + 0.05;
    let mut first_blocked = usize::MAX;
    let mut last_blocked = 0usize;
    let mut duck_z = f64::INFINITY;
    let mut left_y = f64::NEG_INFINITY;
    let mut right_y = f64::INFINITY;
    for k in 0..=n {
        let p = [
            straight[layout.state(k, 0)],
            straight[layout.state(k, 1)],
            straight[layout.state(k, 2)],
        ];
        let blocked = match mode {
            PlanMode::Full3d => sdf::signed_distance(&p, world)? < margin,
            PlanMode::Planar => sdf::footprint_signed_distance(&[p[0], p[1]], world) < margin,
        };
        if blocked {
            first_blocked = first_blocked.min(k);
            last_blocked = last_blocked.max(k);
            for obstacle in &world.obstacles {
                let lo = [obstacle.min_corner[0], obstacle.min_corner[1]];
                let hi = [obstacle.max_corner[0], obstacle.max_corner[1]];
                let mut planar = sdf::EMPTY_WORLD_DISTANCE;
                let dx = (lo[0] - p[0]).max(p[0] - hi[0]).max(0.0);
                let dy = (lo[1] - p[1]).max(p[1] - hi[1]).max(0.0);
                planar = planar.min((dx * dx + dy * dy).sqrt());
                if planar < margin {
                    duck_z = duck_z.min(obstacle.min_corner[2]);
                    left_y = left_y.max(obstacle.max_corner[1]);
                    right_y = right_y.min(obstacle.min_corner[1]);
                }
            }
        }
    }
    if first_blocked == usize::MAX {
        return Ok(vec![straight]);
    }

    let ramp = (n / 8).max(3);
    let window_lo = first_blocked as i64 - ramp as i64;
    let window_hi = last_blocked as i64 + ramp as i64;
    let bump = move |k: usize| -> f64 {
        let kf = k as i64;
        if kf <= window_lo || kf >= window_hi {
            return 0.0;
        }
        let up = (kf - window_lo) as f64 / ramp as f64;
        let down = (window_hi - kf) as f64 / ramp as f64;
        let s = up.min(down).min(1.0);
        s * s * (3.0 - 2.0 * s)
    };

    let mut candidates = Vec::new();
    if mode == PlanMode::Full3d && duck_z.is_finite() {
        let duck_target = duck_z - world.clearance - 0.02;
        if duck_target >= world.state_lower[2] {
            let mut guess = straight.clone();
            for k in 1..n {
                let idx = layout.state(k, 2);
                guess[idx] += (duck_target - guess[idx]) * bump(k);
            }
            candidates.push(guess);
        }
    }
    candidates.push(straight.clone());
    if left_y.is_finite() {
        let target = left_y + world.clearance + 0.06;
        if target <= world.state_upper[1] {
            let mut guess = straight.clone();
            for k in 1..n {
                let idx = layout.state(k, 1);
                guess[idx] += (target - guess[idx]) * bump(k);
            }
            candidates.push(guess);
        }
    }
    if right_y.is_finite() {
        let target = right_y - world.clearance - 0.06;
        if target >= world.state_lower[1] {
            let mut guess = straight.clone();
            for k in 1..n {
                let idx = layout.state(k, 1);
                guess[idx] += (target - guess[idx]) * bump(k);
            }
            candidates.push(guess);
        }
    }
    Ok(candidates)
}

fn extract_trajectory(point: &[f64], n: usize) -> TorsoTrajectory {
    let layout = Layout { intervals: n };
    let total_time = point[0];
    let h = total_time / n as f64;
    let knots = (0..=n)
        .map(|k| {
            let mut state = [0.0; 8];
            for i in 0..8 {
                state[i] = point[layout.state(k, i)];
            }
            let mut accel = [0.0; 4];
            for j in 0..4 {
                accel[j] = point[layout.command(k, j)];
            }
            TrajectoryKnot {
                time: k as f64 * h,
                state: TorsoState::from_array(state),
                command: TorsoCommand::new(accel),
            }
        })
        .collect();
    TorsoTrajectory { total_time, knots }
}

/// Exact clearance over knots and interval midpoints.
fn min_clearance(traj: &TorsoTrajectory, world: &World) -> Result<f64> {
    let mut best = f64::INFINITY;
    for pair in traj.knots.windows(2) {
        let a = pair[0].state.pose;
        let b = pair[1].state.pose;
        let mid = [0.5 * (a.x + b.x), 0.5 * (a.y + b.y), 0.5 * (a.z + b.z)];
        best = best.min(sdf::signed_distance(&a.position(), world)?);
        best = best.min(sdf::signed_distance(&mid, world)?);
    }
    if let Some(last) = traj.knots.last() {
        best = best.min(sdf::signed_distance(&last.state.pose.position(), world)?);
    }
    Ok(best)
}

/// Infinity norm of the trapezoidal defects recomputed from the knots.
pub fn max_defect(traj: &TorsoTrajectory) -> f64 {
    let n = traj.interval_count();
    if n == 0 {
        return 0.0;
    }
    let h = traj.total_time / n as f64;
    let mut worst: f64 = 0.0;
    for pair in traj.knots.windows(2) {
        let a = pair[0].state.to_array();
        let b = pair[1].state.to_array();
        let ua = pair[0].command.accel;
        let ub = pair[1].command.accel;
        for i in 0..4 {
            worst = worst.max((b[i] - a[i] - 0.5 * h * (a[4 + i] + b[4 + i])).abs());
            worst = worst.max((b[4 + i] - a[4 + i] - 0.5 * h * (ua[i] + ub[i])).abs());
        }
    }
    worst
}

fn run_plan(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
    mode: PlanMode,
) -> Result<PlanReport> {
    let problem = transcribe_mode(start, goal, world, config, mode)?;
    let candidates = candidate_guesses(start, goal, world, config, mode)?;

    let build_report = |solution: crate::nlp::NlpSolution| -> Result<PlanReport> {
        let trajectory = extract_trajectory(&solution.point, config.knot_count);
        let min_clearance = min_clearance(&trajectory, world)?;
        let max_dynamics_defect = max_defect(&trajectory);
        Ok(PlanReport {
            trajectory,
            min_clearance,
            max_dynamics_defect,
            solver_status: solution.status,
            kkt_residual: solution.kkt_residual,
            constraint_violation: solution.constraint_violation,
            solver_iterations: solution.iterations,
        })
    };

    let mut fallback: Option<crate::nlp::NlpSolution> = None;
    for guess in &candidates {
        let solution = solve_nlp(&problem, guess, &config.solver)?;
        if solution.status == SolveStatus::Converged {
            return build_report(solution);
        }
        let better = fallback
            .as_ref()
            .map_or(true, |f| solution.constraint_violation < f.constraint_violation);
        if better {
            fallback = Some(solution);
        }
    }
    build_report(fallback.expect("at least one warm start candidate"))
}

/// Solves the minimum-time collision-free planning problem in full 3D.
pub fn plan(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
) -> Result<PlanReport> {
    run_plan(start, goal, world, config, PlanMode::Full3d)
}

/// Planar baseline: z and its rate are frozen at the start height and
/// obstacles are avoided by their ground footprints (go-around behavior).
pub fn plan_2d(
    start: &TorsoPose,
    goal: &TorsoPose,
    world: &World,
    config: &PlannerConfig,
) -> Result<PlanReport> {
    run_plan(start, goal, world, config, PlanMode::Planar)
}

/// Analytic rest-to-rest minimum time for one axis under |v| <= v_max and
/// |a| <= a_max: triangular profile below the cruise threshold, trapezoidal
/// above it.
pub fn axis_min_time(distance: f64, v_max: f64, a_max: f64) -> f64 {
    let d = distance.abs();
    if d == 0.0 {
        return 0.0;
    }
    if d <= v_max * v_max / a_max {
        2.0 * (d / a_max).sqrt()
    } else {
        d / v_max + v_max / a_max
    }
}

/// Lower bound on the achievable transfer time between two rest poses: the
/// slowest axis dominates. Obstacles only lengthen trajectories, so this
/// bounds the constrained optimum from below.
pub fn min_time_lower_bound(start: &TorsoPose, goal: &TorsoPose, world: &World) -> f64 {
    let s = start.to_array();
    let g = goal.to_array();
    let mut bound: f64 = 0.0;
    for i in 0..4 {
        let d = if i == 3 {
            normalize_yaw(g[3] - s[3]).unwrap_or(0.0)
        } else {
            g[i] - s[i]
        };
        let v_max = world.state_upper[4 + i].max(-world.state_lower[4 + i]);
        let a_max = world.command_upper[i].max(-world.command_lower[i]);
        if v_max > 0.0 && a_max > 0.0 {
            bound = bound.max(axis_min_time(d, v_max, a_max));
        }
    }
    bound
}

/// Independent feasibility audit of a planned trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryAudit {
    /// Max absolute endpoint error of the RK4 re-integration, per state
    /// component.
    pub endpoint_error: f64,
    /// Re-evaluated trapezoidal defect norm.
    pub max_defect: f64,
    /// Exact clearance minimized over a 10x oversampled time grid.
    pub min_clearance_oversampled: f64,
}

/// Re-integrates the stored commands (piecewise linear in time) from the
/// first knot with fine RK4 steps and returns the final state. Substeps
/// never straddle a knot, where the command derivative jumps.
pub fn reintegrate_rk4(traj: &TorsoTrajectory, substeps_per_interval: usize) -> TorsoState {
    let n = traj.interval_count();
    let mut x = traj.knots[0].state.to_array();
    if n == 0 || traj.total_time <= 0.0 {
        return TorsoState::from_array(x);
    }
    let h = traj.total_time / n as f64;
    let sub = substeps_per_interval.max(1);
    let dt = h / sub as f64;
    for k in 0..n {
        let u0 = traj.knots[k].command.accel;
        let u1 = traj.knots[k + 1].command.accel;
        let command_at = |tau: f64| -> [f64; 4] {
            let alpha = (tau / h).clamp(0.0, 1.0);
            let mut u = [0.0; 4];
            for i in 0..4 {
                u[i] = u0[i] + alpha * (u1[i] - u0[i]);
            }
            u
        };
        let deriv = |state: &[f64; 8], tau: f64| -> [f64; 8] {
            let u = command_at(tau);
            [
                state[4], state[5], state[6], state[7], u[0], u[1], u[2], u[3],
            ]
        };
        for s in 0..sub {
            let tau = s as f64 * dt;
            let k1 = deriv(&x, tau);
            let mut x2 = x;
            for i in 0..8 {
                x2[i] = x[i] + 0.5 * dt * k1[i];
            }
            let k2 = deriv(&x2, tau + 0.5 * dt);
            let mut x3 = x;
            for i in 0..8 {
                x3[i] = x[i] + 0.5 * dt * k2[i];
            }
            let k3 = deriv(&x3, tau + 0.5 * dt);
            let mut x4 = x;
            for i in 0..8 {
                x4[i] = x[i] + dt * k3[i];
            }
            let k4 = deriv(&x4, tau + dt);
            for i in 0..8 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    TorsoState::from_array(x)
}

/// Runs the full audit: RK4 endpoint check, defect recomputation, and 10x
/// oversampled exact clearance.
pub fn audit_trajectory(traj: &TorsoTrajectory, world: &World) -> Result<TrajectoryAudit> {
    traj.validate()?;
    let reintegrated = reintegrate_rk4(traj, 10).to_array();
    let stored = traj.knots.last().unwrap().state.to_array();
    let endpoint_error = reintegrated
        .iter()
        .zip(stored.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let n = traj.interval_count();
    let samples = 10 * n.max(1);
    let mut clearance = f64::INFINITY;
    for j in 0..=samples {
        let t = traj.total_time * j as f64 / samples as f64;
        let pose = traj.sample(t).pose;
        clearance = clearance.min(sdf::signed_distance(&pose.position(), world)?);
    }

    Ok(TrajectoryAudit {
        endpoint_error,
        max_defect: max_defect(traj),
        min_clearance_oversampled: clearance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoxObstacle;
    use crate::nlp::numeric_jacobian;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn open_world() -> World {
        World {
            obstacles: vec![],
            state_lower: [-2.0, -2.0, 0.12, -4.0, -0.5, -0.5, -0.3, -1.0],
            state_upper: [5.0, 2.0, 0.28, 4.0, 0.5, 0.5, 0.3, 1.0],
            command_lower: [-1.0; 4],
            command_upper: [1.0; 4],
            clearance: 0.04,
        }
    }

    pub(crate) fn table_world() -> World {
        let mut world = open_world();
        world.obstacles = vec![BoxObstacle::new([1.3, -0.5, 0.23], [1.7, 0.5, 0.25])];
        world
    }

    fn nominal(x: f64, y: f64) -> TorsoPose {
        TorsoPose::new(x, y, 0.28, 0.0)
    }

    #[test]
    fn transcription_dimension_formula() {
        let config = PlannerConfig {
            knot_count: 2,
            ..PlannerConfig::default()
        };
        let world = open_world();
        let p = transcribe(&nominal(0.0, 0.0), &nominal(1.0, 0.0), &world, &config).unwrap();
        assert_eq!(p.dimension, 37);
    }

    #[test]
    fn transcription_constraint_counts() {
        let n = 5;
        let config = PlannerConfig {
            knot_count: n,
            ..PlannerConfig::default()
        };
        let world = table_world();
        let p = transcribe(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &world, &config).unwrap();
        // Collocation 8N plus boundary 8 + 8 + 4.
        assert_eq!(p.equality.as_ref().unwrap().count, 8 * n + 20);
        // Clearance at N+1 knots and N midpoints, speed at N+1 knots.
        assert_eq!(p.inequality.as_ref().unwrap().count, (2 * n + 1) + (n + 1));
    }

    #[test]
    fn transcription_rejects_endpoints_in_collision() {
        let world = table_world();
        let config = PlannerConfig::default();
        let inside = TorsoPose::new(1.5, 0.0, 0.24, 0.0);
        let free = nominal(0.0, 0.0);
        assert!(matches!(
            transcribe(&inside, &free, &world, &config),
            Err(Error::StartInCollision { .. })
        ));
        assert!(matches!(
            transcribe(&free, &inside, &world, &config),
            Err(Error::GoalInCollision { .. })
        ));
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let n = 3;
        let config = PlannerConfig {
            knot_count: n,
            ..PlannerConfig::default()
        };
        let world = table_world();
        let p = transcribe(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &world, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let z: Vec<f64> = (0..p.dimension)
                .map(|i| {
                    let lo = p.lower[i].max(-3.0);
                    let hi = p.upper[i].min(3.0).max(lo + 1e-6);
                    rng.gen_range(lo..hi)
                })
                .collect();
            for set in [p.equality.as_ref().unwrap(), p.inequality.as_ref().unwrap()] {
                let analytic = (set.jacobian.as_ref().unwrap())(&z).to_dense();
                let numeric = numeric_jacobian(|q| (set.eval)(q), &z, 1e-6).unwrap();
                let mut worst = 0.0f64;
                for r in 0..analytic.nrows() {
                    for c in 0..analytic.ncols() {
                        let a = analytic[(r, c)];
                        let f = numeric[(r, c)];
                        let scale = a.abs().max(f.abs()).max(1.0);
                        worst = worst.max((a - f).abs() / scale);
                    }
                }
                assert!(worst < 1e-4, "jacobian mismatch {worst}");
            }
        }
    }

    #[test]
    fn stationary_plan_takes_minimum_allowed_time() {
        let world = open_world();
        let config = PlannerConfig {
            knot_count: 10,
            ..PlannerConfig::default()
        };
        let pose = nominal(0.5, 0.1);
        let report = plan(&pose, &pose, &world, &config).unwrap();
        assert!(report.converged());
        assert_relative_eq!(report.trajectory.total_time, config.time_lower, epsilon = 1e-9);
        for knot in &report.trajectory.knots {
            for a in knot.command.accel {
                assert!(a.abs() < 1e-4, "nonzero command {a}");
            }
        }
    }

    #[test]
    fn axis_min_time_trapezoid_formula() {
        // Cruise-limited: d/v + v/a.
        assert_relative_eq!(axis_min_time(3.0, 0.5, 1.0), 6.5, epsilon = 1e-12);
        // Accel-limited triangle: 2 sqrt(d/a).
        assert_relative_eq!(axis_min_time(0.2, 0.5, 1.0), 2.0 * 0.2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(axis_min_time(0.0, 0.5, 1.0), 0.0);
    }

    #[test]
    fn straight_transfer_matches_trapezoid_oracle() {
        let world = open_world();
        let config = PlannerConfig {
            knot_count: 20,
            ..PlannerConfig::default()
        };
        let report = plan(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &world, &config).unwrap();
        assert!(report.converged(), "status {:?}", report.solver_status);
        let oracle = axis_min_time(3.0, 0.5, 1.0);
        let t = report.trajectory.total_time;
        assert!(
            t >= oracle - 1e-3,
            "planned time {t} beats the analytic bound {oracle}"
        );
        assert!(
            (t - oracle).abs() / oracle < 0.05,
            "planned time {t} far from oracle {oracle} at N = 20"
        );
        assert!(report.max_dynamics_defect <= 1e-5);
    }

    #[test]
    fn reintegration_is_exact_for_consistent_trajectories() {
        let world = open_world();
        // The trapezoid-vs-RK4 position gap scales with (T/N)^2, so the
        // 1e-3 endpoint contract needs a production-sized grid.
        let config = PlannerConfig {
            knot_count: 50,
            ..PlannerConfig::default()
        };
        let report = plan(&nominal(0.0, 0.0), &nominal(2.0, 0.5), &world, &config).unwrap();
        assert!(report.converged());
        let audit = audit_trajectory(&report.trajectory, &world).unwrap();
        assert!(
            audit.endpoint_error <= 1e-3,
            "endpoint error {}",
            audit.endpoint_error
        );
        assert!(audit.max_defect <= 1e-5);
    }

    #[test]
    fn planned_time_never_beats_lower_bound() {
        let world = open_world();
        let config = PlannerConfig {
            knot_count: 16,
            ..PlannerConfig::default()
        };
        let cases = [
            (nominal(0.0, 0.0), nominal(1.0, 0.5)),
            (nominal(0.3, -0.4), nominal(2.5, 0.2)),
            (nominal(0.0, 0.0), TorsoPose::new(0.5, 0.0, 0.2, 1.0)),
        ];
        for (start, goal) in cases {
            let report = plan(&start, &goal, &world, &config).unwrap();
            assert!(report.converged());
            let bound = min_time_lower_bound(&start, &goal, &world);
            assert!(
                report.trajectory.total_time >= bound - 1e-3,
                "T = {} below bound {bound}",
                report.trajectory.total_time
            );
        }
    }

    #[test]
    fn planar_mode_requires_matching_heights() {
        let world = open_world();
        let config = PlannerConfig::default();
        let start = nominal(0.0, 0.0);
        let goal = TorsoPose::new(2.0, 0.0, 0.2, 0.0);
        assert!(plan_2d(&start, &goal, &world, &config).is_err());
    }
}
