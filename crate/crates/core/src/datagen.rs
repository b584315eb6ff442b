//! Self-supervised dataset production: sample start poses, solve one
//! planning problem per pose, and resample the solutions into supervised
//! (pose, velocity) pairs.
//!
//! Determinism contract: poses are drawn sequentially from the seeded
//! generator before any solving happens, solves run in parallel, and results
//! are assembled in pose order. The output bytes depend only on the seed and
//! scenario, never on the worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{normalize_yaw, TorsoPose, TorsoTrajectory, VelocitySample, World};
use crate::planner::{plan, PlannerConfig};
use crate::sdf;

/// Gaussian over (x, y, yaw) with the torso height pinned.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InitialPoseDistribution {
    pub mean: [f64; 3],
    pub stddev: [f64; 3],
    pub fixed_z: f64,
}

impl InitialPoseDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.stddev.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "initial pose stddev must be >= 0".into(),
            ));
        }
        if !self.fixed_z.is_finite() || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("initial pose distribution".into()));
        }
        Ok(())
    }
}

/// Source coordinates of one dataset sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    /// Dense trajectory index within the dataset.
    pub traj_id: usize,
    /// Resample index along that trajectory.
    pub knot: usize,
    /// Sample time along the trajectory, seconds.
    pub time: f64,
}

/// Generation metadata carried inside the dataset file preamble.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub scenario_hash: String,
}

/// Supervised (pose, velocity) pairs with per-sample provenance.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<VelocitySample>,
    pub provenance: Vec<SampleProvenance>,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of distinct source trajectories.
    pub fn trajectory_count(&self) -> usize {
        self.provenance
            .iter()
            .map(|p| p.traj_id + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.provenance.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                actual: self.provenance.len(),
                context: "dataset provenance".into(),
            });
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("dataset sample".into()));
        }
        // Provenance ids must be dense: 0..max inclusive all present.
        let n = self.trajectory_count();
        let mut seen = vec![false; n];
        for p in &self.provenance {
            seen[p.traj_id] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "dataset trajectory ids are not dense".into(),
            ));
        }
        Ok(())
    }
}

/// Knobs for one generation run.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub trajectory_count: usize,
    pub points_per_trajectory: usize,
    pub seed: u64,
    /// Worker threads for the planning solves; 0 means one per core.
    pub parallelism: usize,
    pub scenario_hash: String,
}

/// Aggregate outcome of a generation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub requested: usize,
    pub successes: usize,
    pub failures: usize,
    pub sample_count: usize,
    pub mean_total_time: f64,
    pub mean_min_clearance: f64,
    pub seed: u64,
    pub scenario_hash: String,
}

const MAX_ATTEMPTS_PER_POSE: usize = 100;

/// Draws `count` collision-free start poses: Gaussian samples clamped into
/// the workspace box and rejected while closer than the clearance to an
/// obstacle. Deterministic for a fixed seed.
pub fn sample_initial_poses(
    dist: &InitialPoseDistribution,
    count: usize,
    world: &World,
    seed: u64,
) -> Result<Vec<TorsoPose>> {
    dist.validate()?;
    world.validate()?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Option<Normal<f64>>> = dist
        .stddev
        .iter()
        .zip(dist.mean.iter())
        .map(|(&s, &m)| {
            if s > 0.0 {
                Some(Normal::new(m, s).expect("validated stddev"))
            } else {
                None
            }
        })
        .collect();

    let mut poses = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS_PER_POSE {
            let mut raw = [0.0; 3];
            for i in 0..3 {
                raw[i] = match &draws[i] {
                    Some(normal) => normal.sample(&mut rng),
                    None => dist.mean[i],
                };
            }
            let x = raw[0].clamp(world.state_lower[0], world.state_upper[0]);
            let y = raw[1].clamp(world.state_lower[1], world.state_upper[1]);
            let yaw = normalize_yaw(raw[2])?
                .clamp(world.state_lower[3], world.state_upper[3]);
            let pose = TorsoPose::new(x, y, dist.fixed_z, yaw);
            if sdf::signed_distance(&pose.position(), world)? >= world.clearance {
                accepted = Some(pose);
                break;
            }
        }
        match accepted {
            Some(pose) => poses.push(pose),
            None => {
                return Err(Error::SamplingRejection {
                    rejected: MAX_ATTEMPTS_PER_POSE,
                    attempts: MAX_ATTEMPTS_PER_POSE,
                })
            }
        }
    }
    Ok(poses)
}

/// Resamples a trajectory into `points` (pose, velocity) pairs uniformly
/// spaced in time, by linear state interpolation. Endpoints are reproduced
/// exactly. A degenerate trajectory (T <= 0) yields its single state
/// repeated `points` times.
pub fn resample_trajectory(
    traj: &TorsoTrajectory,
    points: usize,
) -> Result<Vec<([f64; 4], [f64; 4])>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!(
            "resampling needs at least 2 points, got {points}"
        )));
    }
    if traj.total_time <= 0.0 {
        let state = traj.knots[0].state;
        return Ok(vec![(state.pose.to_array(), state.twist); points]);
    }
    let mut out = Vec::with_capacity(points);
    for j in 0..points {
        let t = traj.total_time * j as f64 / (points - 1) as f64;
        let state = traj.sample(t);
        out.push((state.pose.to_array(), state.twist));
    }
    Ok(out)
}

/// Runs one planning solve per sampled pose and assembles the supervised
/// dataset. Failed solves are skipped; a success rate below 50% is an error.
pub fn generate_dataset(
    world: &World,
    goal: &TorsoPose,
    dist: &InitialPoseDistribution,
    planner_config: &PlannerConfig,
    gen: &GenConfig,
) -> Result<(Dataset, GenerationSummary)> {
    if gen.points_per_trajectory < 2 && gen.trajectory_count > 0 {
        return Err(Error::InvalidArgument(
            "points_per_trajectory must be >= 2".into(),
        ));
    }
    let metadata = DatasetMetadata {
        seed: gen.seed,
        scenario_hash: gen.scenario_hash.clone(),
    };
    if gen.trajectory_count == 0 {
        let summary = GenerationSummary {
            requested: 0,
            successes: 0,
            failures: 0,
            sample_count: 0,
            mean_total_time: 0.0,
            mean_min_clearance: 0.0,
            seed: gen.seed,
            scenario_hash: gen.scenario_hash.clone(),
        };
        return Ok((
            Dataset {
                samples: Vec::new(),
                provenance: Vec::new(),
                metadata,
            },
            summary,
        ));
    }

    let poses = sample_initial_poses(dist, gen.trajectory_count, world, gen.seed)?;

    let workers = if gen.parallelism == 0 {
        rayon::current_num_threads()
    } else {
        gen.parallelism
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::DataGeneration(format!("thread pool: {e}")))?;

    // Solve in parallel, collect in pose order.
    let reports: Vec<_> = pool.install(|| {
        poses
            .par_iter()
            .map(|start| plan(start, goal, world, planner_config))
            .collect()
    });

    let mut dataset = Dataset {
        samples: Vec::new(),
        provenance: Vec::new(),
        metadata,
    };
    let mut successes = 0usize;
    let mut failures = 0usize;
    let mut time_sum = 0.0;
    let mut clearance_sum = 0.0;
    for report in reports {
        let report = match report {
            Ok(r) if r.converged() => r,
            _ => {
                failures += 1;
                continue;
            }
        };
        let traj_id = successes;
        successes += 1;
        time_sum += report.trajectory.total_time;
        clearance_sum += report.min_clearance;
        for (knot, (pose, velocity)) in resample_trajectory(
            &report.trajectory,
            gen.points_per_trajectory,
        )?
        .into_iter()
        .enumerate()
        {
            let time =
                report.trajectory.total_time * knot as f64 / (gen.points_per_trajectory - 1) as f64;
            dataset.samples.push(VelocitySample {
                input: pose,
                target: velocity,
            });
            dataset.provenance.push(SampleProvenance {
                traj_id,
                knot,
                time,
            });
        }
    }

    if 2 * successes < gen.trajectory_count {
        return Err(Error::DataGeneration(format!(
            "only {successes} of {} planning solves converged (seed {})",
            gen.trajectory_count, gen.seed
        )));
    }

    let summary = GenerationSummary {
        requested: gen.trajectory_count,
        successes,
        failures,
        sample_count: dataset.samples.len(),
        mean_total_time: if successes > 0 {
            time_sum / successes as f64
        } else {
            0.0
        },
        mean_min_clearance: if successes > 0 {
            clearance_sum / successes as f64
        } else {
            0.0
        },
        seed: gen.seed,
        scenario_hash: gen.scenario_hash.clone(),
    };
    dataset.validate()?;
    Ok((dataset, summary))
}

/// Writes the dataset in its line-delimited text format: a `#` metadata
/// preamble, one header line, then one sample per line with full
/// round-trip float precision.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# seed: {}", dataset.metadata.seed)?;
    writeln!(w, "# scenario_hash: {}", dataset.metadata.scenario_hash)?;
    writeln!(w, "traj_id,knot,t,x,y,z,yaw,vx,vy,vz,vyaw")?;
    for (sample, prov) in dataset.samples.iter().zip(dataset.provenance.iter()) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            prov.traj_id,
            prov.knot,
            prov.time,
            sample.input[0],
            sample.input[1],
            sample.input[2],
            sample.input[3],
            sample.target[0],
            sample.target[1],
            sample.target[2],
            sample.target[3],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset file produced by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut dataset = Dataset::default();
    let mut saw_header = false;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once(':') {
                match key.trim() {
                    "seed" => {
                        dataset.metadata.seed = value.trim().parse().map_err(|e| {
                            Error::Parse(format!("line {}: bad seed: {e}", line_no + 1))
                        })?
                    }
                    "scenario_hash" => dataset.metadata.scenario_hash = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if trimmed != "traj_id,knot,t,x,y,z,yaw,vx,vy,vz,vyaw" {
                return Err(Error::Parse(format!(
                    "line {}: unexpected dataset header {trimmed:?}",
                    line_no + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse(format!(
                "line {}: expected 11 fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))
        };
        let traj_id: usize = fields[0]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        let knot: usize = fields[1]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        let time = parse(fields[2])?;
        let mut values = [0.0; 8];
        for i in 0..8 {
            values[i] = parse(fields[3 + i])?;
        }
        dataset.samples.push(VelocitySample {
            input: [values[0], values[1], values[2], values[3]],
            target: [values[4], values[5], values[6], values[7]],
        });
        dataset.provenance.push(SampleProvenance {
            traj_id,
            knot,
            time,
        });
    }
    if !saw_header {
        return Err(Error::Parse("dataset file has no header line".into()));
    }
    dataset.validate()?;
    Ok(dataset)
}
