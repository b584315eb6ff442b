//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by planning, learning, control, and I/O paths.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("start pose is in collision (clearance {clearance} m required, got {distance} m)")]
    StartInCollision { distance: f64, clearance: f64 },

    #[error("goal pose is in collision (clearance {clearance} m required, got {distance} m)")]
    GoalInCollision { distance: f64, clearance: f64 },

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("leg {leg} ({name}) is in a singular configuration (|det J| = {det:e})")]
    SingularLeg { leg: usize, name: String, det: f64 },

    #[error("foot target unreachable; nearest reachable point is ({0}, {1}, {2})", nearest[0], nearest[1], nearest[2])]
    UnreachableTarget { nearest: [f64; 3] },

    #[error("initial pose sampling rejected {rejected} of {attempts} attempts; distribution inconsistent with world")]
    SamplingRejection { rejected: usize, attempts: usize },

    #[error("dataset generation failed: {0}")]
    DataGeneration(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("simulation fault at t = {time} s: {reason}")]
    SimulationFault { time: f64, reason: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
