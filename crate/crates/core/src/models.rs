//! Motion and sensing models.
//!
//! Robots and targets are planar single integrators, `x' = x + Δt·u + w`.
//! Every robot observes every other entity with a range-bearing sensor and
//! itself with GPS.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::belief::{Control, Mat2, Vec2};
use crate::error::{Error, Result};

/// Entities closer than this have no defined bearing.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Robot process variance per axis, m².
    pub q_robot: f64,
    /// Target process variance per axis, m².
    pub q_target: f64,
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    pub sigma_gps: f64,
    /// Range variance grows as `σ_r²·(1 + scale·d²)`; zero keeps it constant.
    pub range_noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Robot,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityId {
    Robot(usize),
    Target(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    /// `(range m, bearing rad)` from observer to observed.
    RangeBearing,
    /// Absolute `(x, y)` of the observer itself.
    Gps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub value: Vec2,
    pub noise_cov: Mat2,
    pub observer: EntityId,
    pub observed: EntityId,
}

/// `A·x + B·u + G·w` with `A = G = I₂`, `B = Δt·I₂`.
pub fn propagate_true_state(x: Vec2, u: Control, noise: Vec2, dt: f64) -> Vec2 {
    x + u * dt + noise
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn offset(observer: &Vec2, observed: &Vec2) -> Result<(Vec2, f64)> {
    let delta = observed - observer;
    let distance = delta.norm();
    // Written so that a NaN distance is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(distance > DEGENERATE_DISTANCE) {
        return Err(Error::DegenerateGeometry { distance });
    }
    Ok((delta, distance))
}

/// `h(observer, observed) = (‖Δ‖, atan2(Δy, Δx))` with `Δ = observed − observer`.
pub fn range_bearing(observer: &Vec2, observed: &Vec2) -> Result<Vec2> {
    let (delta, distance) = offset(observer, observed)?;
    Ok(Vec2::new(distance, wrap_angle(delta.y.atan2(delta.x))))
}

/// Jacobians of [`range_bearing`] with respect to the observed position and
/// the observer position. Since `h` only sees the difference, the observer
/// block is the negated observed block.
pub fn range_bearing_jacobians(observer: &Vec2, observed: &Vec2) -> Result<(Mat2, Mat2)> {
    let (d, r) = offset(observer, observed)?;
    let r2 = r * r;
    #[rustfmt::skip]
    let wrt_observed = Mat2::new(
        d.x / r,   d.y / r,
        -d.y / r2, d.x / r2,
    );
    Ok((wrt_observed, -wrt_observed))
}

/// Measurement noise covariance for a sensor reading at the given geometry.
pub fn measurement_noise_cov(kind: MeasurementKind, observer: &Vec2, observed: &Vec2, nm: &NoiseModel) -> Mat2 {
    match kind {
        MeasurementKind::RangeBearing => {
            let d2 = (observed - observer).norm_squared();
            let range_var = nm.sigma_range.powi(2) * (1.0 + nm.range_noise_scale * d2);
            Mat2::new(range_var, 0.0, 0.0, nm.sigma_bearing.powi(2))
        }
        MeasurementKind::Gps => Mat2::identity() * nm.sigma_gps.powi(2),
    }
}

/// Draws `w ~ N(0, q·I₂)` for an entity of the given kind.
pub fn sample_process_noise<R: Rng + ?Sized>(rng: &mut R, nm: &NoiseModel, kind: EntityKind) -> Vec2 {
    let q = match kind {
        EntityKind::Robot => nm.q_robot,
        EntityKind::Target => nm.q_target,
    };
    sample_gaussian(rng, &(Mat2::identity() * q))
}

/// Draws a zero-mean sample with diagonal covariance `cov`.
///
/// Off-diagonal entries are ignored; every noise covariance in this crate is
/// diagonal.
pub(crate) fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, cov: &Mat2) -> Vec2 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Vec2::new(a * cov[(0, 0)].max(0.0).sqrt(), b * cov[(1, 1)].max(0.0).sqrt())
}

/// Samples a noisy reading of the true geometry.
pub fn sample_measurement<R: Rng + ?Sized>(
    rng: &mut R,
    kind: MeasurementKind,
    observer: (EntityId, &Vec2),
    observed: (EntityId, &Vec2),
    nm: &NoiseModel,
) -> Result<Measurement> {
    let noise_cov = measurement_noise_cov(kind, observer.1, observed.1, nm);
    let clean = match kind {
        MeasurementKind::RangeBearing => range_bearing(observer.1, observed.1)?,
        MeasurementKind::Gps => *observer.1,
    };
    let mut value = clean + sample_gaussian(rng, &noise_cov);
    if kind == MeasurementKind::RangeBearing {
        value.y = wrap_angle(value.y);
    }
    Ok(Measurement {
        kind,
        value,
        noise_cov,
        observer: observer.0,
        observed: observed.0,
    })
}
