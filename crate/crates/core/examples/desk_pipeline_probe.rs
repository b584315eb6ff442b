//! End-to-end desk-scale probe: generate a 200-trajectory dataset on the
//! table scenario, train the small network, and report the held-out MSE.

use quadcrawl_core::datagen::{generate_dataset, GenConfig, InitialPoseDistribution};
use quadcrawl_core::model::{BoxObstacle, TorsoPose, World};
use quadcrawl_core::planner::PlannerConfig;
use quadcrawl_core::policy::{evaluate_mse, predict_velocity, split_dataset, train, TrainConfig};
use std::time::Instant;

fn table_world() -> World {
    World {
        obstacles: vec![BoxObstacle::new([1.3, -0.5, 0.23], [1.7, 0.5, 0.25])],
        state_lower: [-2.0, -2.0, 0.12, -4.0, -0.5, -0.5, -0.3, -1.0],
        state_upper: [5.0, 2.0, 0.28, 4.0, 0.5, 0.5, 0.3, 1.0],
        command_lower: [-1.0; 4],
        command_upper: [1.0; 4],
        clearance: 0.04,
    }
}

fn main() {
    let world = table_world();
    let goal = TorsoPose::new(3.0, 0.0, 0.28, 0.0);
    let dist = InitialPoseDistribution {
        mean: [0.5, 0.066, 0.026],
        stddev: [0.5, 0.66, 0.02],
        fixed_z: 0.28,
    };
    let planner = PlannerConfig {
        knot_count: 100,
        ..PlannerConfig::default()
    };
    let gen = GenConfig {
        trajectory_count: 200,
        points_per_trajectory: 100,
        seed: 42,
        parallelism: 0,
        scenario_hash: "probe".into(),
    };
    let t0 = Instant::now();
    let (dataset, summary) = generate_dataset(&world, &goal, &dist, &planner, &gen).unwrap();
    println!(
        "generated {} samples from {}/{} solves (mean T {:.3}, mean clearance {:.4}) in {:.1}s",
        dataset.len(),
        summary.successes,
        summary.requested,
        summary.mean_total_time,
        summary.mean_min_clearance,
        t0.elapsed().as_secs_f64()
    );

    let config = TrainConfig::desk();
    let t0 = Instant::now();
    let (model, history) = train(&dataset, &config).unwrap();
    let (_, _, test) = split_dataset(&dataset, config.split, config.seed).unwrap();
    let held_out = evaluate_mse(&model, &test.samples).unwrap();
    println!(
        "trained in {:.1}s; final val {:.3e}, held-out test mse {:.3e}",
        t0.elapsed().as_secs_f64(),
        history.last().unwrap().val_mse,
        held_out
    );
    for stats in history.iter().step_by(4) {
        println!(
            "  epoch {:2}: train {:.3e} val {:.3e}",
            stats.epoch, stats.train_mse, stats.val_mse
        );
    }

    // Velocity near the goal should be small after training.
    let v = predict_velocity(&model, &goal, &world).unwrap();
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    println!("policy speed at goal: {speed:.4} m/s, v = {v:?}");
}
