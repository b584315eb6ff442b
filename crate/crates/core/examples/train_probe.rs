//! Hyperparameter probe for the linear-map sanity check.

use quadcrawl_core::datagen::{Dataset, SampleProvenance};
use quadcrawl_core::model::VelocitySample;
use quadcrawl_core::policy::{evaluate_mse, split_dataset, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_dataset(trajectories: usize, points: usize) -> Dataset {
    let mut dataset = Dataset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = [
        [0.3, -0.1, 0.0, 0.2],
        [0.0, 0.25, -0.2, 0.0],
        [0.1, 0.0, 0.4, -0.1],
        [-0.2, 0.1, 0.0, 0.3],
    ];
    for traj in 0..trajectories {
        for knot in 0..points {
            let p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let mut target = [0.0; 4];
            for i in 0..4 {
                for j in 0..4 {
                    target[i] += a[i][j] * p[j];
                }
            }
            dataset.samples.push(VelocitySample { input: p, target });
            dataset.provenance.push(SampleProvenance {
                traj_id: traj,
                knot,
                time: knot as f64 * 0.1,
            });
        }
    }
    dataset
}

fn main() {
    let dataset = synthetic_dataset(20, 100);
    for (hidden, batch, lr, decay, epochs) in [
        (vec![], 32usize, 0.5, 1.0, 200usize),
        (vec![], 32, 0.3, 0.99, 200),
        (vec![16], 32, 0.5, 0.999, 200),
    ] {
        let config = TrainConfig {
            hidden: hidden.clone(),
            batch_size: batch,
            epochs,
            learning_rate: lr,
            lr_decay: decay,
            seed: 2,
            split: [0.8, 0.1, 0.1],
        };
        let (model, history) = train(&dataset, &config).unwrap();
        let (_, _, test) = split_dataset(&dataset, config.split, config.seed).unwrap();
        let mse = evaluate_mse(&model, &test.samples).unwrap();
        println!(
            "hidden={hidden:?} batch={batch} lr={lr} decay={decay} epochs={epochs}: test={mse:.3e} last_val={:.3e}",
            history.last().unwrap().val_mse
        );
    }
}
