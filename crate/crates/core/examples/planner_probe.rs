//! Quick planner diagnostics across grid sizes; used while tuning solver
//! settings. Run with `cargo run --release -p quadcrawl-core --example
//! planner_probe`.

use quadcrawl_core::model::{BoxObstacle, TorsoPose, World};
use quadcrawl_core::planner::{plan, plan_2d, PlannerConfig};
use std::time::Instant;

fn open_world() -> World {
    World {
        obstacles: vec![],
        state_lower: [-2.0, -2.0, 0.12, -4.0, -0.5, -0.5, -0.3, -1.0],
        state_upper: [5.0, 2.0, 0.28, 4.0, 0.5, 0.5, 0.3, 1.0],
        command_lower: [-1.0; 4],
        command_upper: [1.0; 4],
        clearance: 0.04,
    }
}

fn table_world() -> World {
    let mut world = open_world();
    world.obstacles = vec![BoxObstacle::new([1.3, -0.5, 0.23], [1.7, 0.5, 0.25])];
    world
}

fn main() {
    let nominal = |x: f64, y: f64| TorsoPose::new(x, y, 0.28, 0.0);
    for n in [20usize, 50, 80, 100] {
        let config = PlannerConfig {
            knot_count: n,
            ..PlannerConfig::default()
        };
        let t0 = Instant::now();
        let report = plan(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &open_world(), &config).unwrap();
        println!(
            "open  N={n:3} status={:?} T={:.4} defect={:.2e} viol={:.2e} kkt={:.2e} outers={} in {:.2}s",
            report.solver_status,
            report.trajectory.total_time,
            report.max_dynamics_defect,
            report.constraint_violation,
            report.kkt_residual,
            report.solver_iterations,
            t0.elapsed().as_secs_f64()
        );
    }
    for n in [50usize, 80] {
        let config = PlannerConfig {
            knot_count: n,
            ..PlannerConfig::default()
        };
        let t0 = Instant::now();
        let report = plan(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &table_world(), &config).unwrap();
        let min_z = report
            .trajectory
            .knots
            .iter()
            .map(|k| k.state.pose.z)
            .fold(f64::INFINITY, f64::min);
        println!(
            "table N={n:3} status={:?} T={:.4} min_z={:.4} clear={:.4} defect={:.2e} viol={:.2e} kkt={:.2e} outers={} in {:.2}s",
            report.solver_status,
            report.trajectory.total_time,
            min_z,
            report.min_clearance,
            report.max_dynamics_defect,
            report.constraint_violation,
            report.kkt_residual,
            report.solver_iterations,
            t0.elapsed().as_secs_f64()
        );
        let t0 = Instant::now();
        let report2 =
            plan_2d(&nominal(0.0, 0.0), &nominal(3.0, 0.0), &table_world(), &config).unwrap();
        let max_y = report2
            .trajectory
            .knots
            .iter()
            .map(|k| k.state.pose.y.abs())
            .fold(0.0f64, f64::max);
        println!(
            "tab2d N={n:3} status={:?} T={:.4} max|y|={:.4} viol={:.2e} kkt={:.2e} outers={} in {:.2}s",
            report2.solver_status,
            report2.trajectory.total_time,
            max_y,
            report2.constraint_violation,
            report2.kkt_residual,
            report2.solver_iterations,
            t0.elapsed().as_secs_f64()
        );
    }
}
