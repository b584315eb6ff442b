//! Point-to-obstacle distance functions.
//!
//! `signed_distance` is the exact Euclidean distance to the nearest box
//! surface, negative inside (penetration depth). `smooth_signed_distance` is
//! a C1 surrogate used inside the planner's constraints: it agrees with the
//! exact distance everywhere the exact distance exceeds the smoothing width,
//! never overestimates it by more than the smoothing width, and never
//! reports more clearance than actually exists outside an obstacle.

use crate::error::{Error, Result};
use crate::model::World;

/// Distance reported when the world has no obstacles.
pub const EMPTY_WORLD_DISTANCE: f64 = 1e6;

/// Per-box building blocks shared by the exact and smooth variants, generic
/// over the ambient dimension so the planar footprint mode reuses it.
///
/// Returns:
/// - `m`: sum of squared per-axis excesses (zero on and inside the box),
/// - `m_grad`: gradient of `m`,
/// - `w`: depth to the nearest face when inside, clamped at zero outside,
/// - `w_grad`: gradient of `w` where `w > 0`.
fn box_metrics<const D: usize>(
    p: &[f64; D],
    lo: &[f64; D],
    hi: &[f64; D],
) -> (f64, [f64; D], f64, [f64; D]) {
    let mut m = 0.0;
    let mut m_grad = [0.0; D];
    let mut outside = false;
    for i in 0..D {
        if p[i] < lo[i] {
            let e = lo[i] - p[i];
            m += e * e;
            m_grad[i] = -2.0 * e;
            outside = true;
        } else if p[i] > hi[i] {
            let e = p[i] - hi[i];
            m += e * e;
            m_grad[i] = 2.0 * e;
            outside = true;
        }
    }

    let mut w = 0.0;
    let mut w_grad = [0.0; D];
    if !outside {
        let mut best = f64::INFINITY;
        let mut axis = 0;
        let mut toward_min = true;
        for i in 0..D {
            let to_min = p[i] - lo[i];
            let to_max = hi[i] - p[i];
            if to_min < best {
                best = to_min;
                axis = i;
                toward_min = true;
            }
            if to_max < best {
                best = to_max;
                axis = i;
                toward_min = false;
            }
        }
        w = best;
        w_grad[axis] = if toward_min { 1.0 } else { -1.0 };
    }
    (m, m_grad, w, w_grad)
}

/// Exact signed distance for one box.
fn box_signed_distance<const D: usize>(p: &[f64; D], lo: &[f64; D], hi: &[f64; D]) -> f64 {
    let (m, _, w, _) = box_metrics(p, lo, hi);
    if m > 0.0 {
        m.sqrt()
    } else {
        -w
    }
}

/// C1 smooth signed distance for one box, with gradient.
///
/// Outside, the squared excess `m` is already C1; the square root is
/// replaced by a quadratic spline on `m <= smoothing^2` so the value stays
/// differentiable through the surface. Inside, the face depth passes through
/// a smoothed ramp with zero slope at the surface. The spline section stays
/// at or below the true distance, so a constraint on the smooth value never
/// admits less real clearance than requested.
fn box_smooth_distance<const D: usize>(
    p: &[f64; D],
    lo: &[f64; D],
    hi: &[f64; D],
    smoothing: f64,
) -> (f64, [f64; D]) {
    let (m, m_grad, w, w_grad) = box_metrics(p, lo, hi);
    let s2 = smoothing * smoothing;
    if m >= s2 {
        let d = m.sqrt();
        let scale = 0.5 / d;
        let mut grad = [0.0; D];
        for i in 0..D {
            grad[i] = scale * m_grad[i];
        }
        return (d, grad);
    }
    if m > 0.0 {
        // phi(m) = 3m/(2s) - m^2/(2s^3); phi(s^2) = s, phi'(s^2) = 1/(2s).
        let value = 1.5 * m / smoothing - m * m / (2.0 * s2 * smoothing);
        let dphi = 1.5 / smoothing - m / (s2 * smoothing);
        let mut grad = [0.0; D];
        for i in 0..D {
            grad[i] = dphi * m_grad[i];
        }
        return (value, grad);
    }
    // Inside (or on the surface): -psi(w) with psi'(0) = 0.
    if w <= smoothing {
        let value = -w * w / (2.0 * smoothing);
        let dpsi = w / smoothing;
        let mut grad = [0.0; D];
        for i in 0..D {
            grad[i] = -dpsi * w_grad[i];
        }
        (value, grad)
    } else {
        let value = -(w - 0.5 * smoothing);
        let mut grad = [0.0; D];
        for i in 0..D {
            grad[i] = -w_grad[i];
        }
        (value, grad)
    }
}

/// Exact Euclidean distance from `point` to the nearest obstacle surface;
/// negative inside an obstacle. Empty worlds report a large sentinel.
pub fn signed_distance(point: &[f64; 3], world: &World) -> Result<f64> {
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signed_distance point".into()));
    }
    let mut best = EMPTY_WORLD_DISTANCE;
    for obstacle in &world.obstacles {
        let d = box_signed_distance(point, &obstacle.min_corner, &obstacle.max_corner);
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// C1 surrogate of [`signed_distance`]; exact wherever the true distance is
/// at least `smoothing`.
pub fn smooth_signed_distance(point: &[f64; 3], world: &World, smoothing: f64) -> Result<f64> {
    smooth_signed_distance_with_gradient(point, world, smoothing).map(|(v, _)| v)
}

/// Smooth distance and its spatial gradient.
pub fn smooth_signed_distance_with_gradient(
    point: &[f64; 3],
    world: &World,
    smoothing: f64,
) -> Result<(f64, [f64; 3])> {
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("smooth_signed_distance point".into()));
    }
    if !(smoothing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be > 0, got {smoothing}"
        )));
    }
    let mut best = (EMPTY_WORLD_DISTANCE, [0.0; 3]);
    for obstacle in &world.obstacles {
        let candidate =
            box_smooth_distance(point, &obstacle.min_corner, &obstacle.max_corner, smoothing);
        if candidate.0 < best.0 {
            best = candidate;
        }
    }
    Ok(best)
}

/// Planar (x, y) distance to the obstacles' ground footprints. Used by the
/// 2D planning mode, where obstacles are avoided by going around regardless
/// of their height. Always a lower bound on the 3D distance.
pub fn footprint_signed_distance(point: &[f64; 2], world: &World) -> f64 {
    let mut best = EMPTY_WORLD_DISTANCE;
    for obstacle in &world.obstacles {
        let lo = [obstacle.min_corner[0], obstacle.min_corner[1]];
        let hi = [obstacle.max_corner[0], obstacle.max_corner[1]];
        let d = box_signed_distance(point, &lo, &hi);
        if d < best {
            best = d;
        }
    }
    best
}

/// Smooth planar footprint distance with gradient.
pub fn smooth_footprint_distance_with_gradient(
    point: &[f64; 2],
    world: &World,
    smoothing: f64,
) -> (f64, [f64; 2]) {
    let mut best = (EMPTY_WORLD_DISTANCE, [0.0; 2]);
    for obstacle in &world.obstacles {
        let lo = [obstacle.min_corner[0], obstacle.min_corner[1]];
        let hi = [obstacle.max_corner[0], obstacle.max_corner[1]];
        let candidate = box_smooth_distance(point, &lo, &hi, smoothing);
        if candidate.0 < best.0 {
            best = candidate;
        }
    }
    best
}
