//! Decoupled EKF stacks for target tracking and team localization.
//!
//! The joint covariance is kept block diagonal, one 2×2 block per entity.
//! Each step the filter stacks all robot→target readings into one update for
//! the targets (linearized in the target positions only), then all GPS and
//! robot→robot readings into one update for the robots (linearized in both
//! endpoints of every relative reading). Both updates use the Joseph form
//!
//! ```text
//! S = H P̄ Hᵀ + R,   K = P̄ Hᵀ S⁻¹,   P̂ = (I − KH) P̄ (I − KH)ᵀ + K R Kᵀ
//! ```
//!
//! which keeps `P̂` symmetric PSD for any gain.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, SymmetricEigen};

use crate::belief::{block_diagonal, stack_means, unstack, Control, JointBelief, Mat2, Vec2};
use crate::error::{Error, Result};
use crate::models::{
    measurement_noise_cov, range_bearing, range_bearing_jacobians, wrap_angle, EntityId, Measurement, MeasurementKind,
    NoiseModel,
};

/// Innovation covariances worse conditioned than this are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Readings stacked into one linearized update.
///
/// Row block `k` of `jacobian`, `noise`, and `residual` belongs to
/// `measurements[k]`. Target sets are target-major (all robots' readings of
/// target 1, then target 2, …); robot sets are observer-major with the GPS
/// reading in the observer's own slot.
#[derive(Debug, Clone)]
pub struct StackedMeasurementSet {
    pub measurements: Vec<Measurement>,
    pub jacobian: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl StackedMeasurementSet {
    pub fn rows(&self) -> usize {
        self.jacobian.nrows()
    }

    /// The readings of one kind, with their rows of `H`, `R` and the residual.
    pub fn of_kind(&self, kind: MeasurementKind) -> Self {
        let rows: Vec<usize> = self
            .measurements
            .iter()
            .enumerate()
            .filter(|(_, z)| z.kind == kind)
            .flat_map(|(k, _)| [2 * k, 2 * k + 1])
            .collect();
        Self {
            measurements: self.measurements.iter().filter(|z| z.kind == kind).cloned().collect(),
            jacobian: self.jacobian.select_rows(&rows),
            noise: self.noise.select_rows(&rows).select_columns(&rows),
            residual: self.residual.select_rows(&rows),
        }
    }
}

/// Target time update. The estimator does not know the targets' scripted
/// inputs, so the mean is held and `q_target·I₂` is added to every block.
pub fn predict_targets(belief: &JointBelief, nm: &NoiseModel) -> JointBelief {
    let mut out = belief.clone();
    for t in &mut out.targets {
        t.cov += Mat2::identity() * nm.q_target;
    }
    out
}

/// Robot time update with the commanded inputs: `x̄ = x̂ + Δt·u`, `P̄ = P̂ + q_robot·I₂`.
pub fn predict_robots(belief: &JointBelief, controls: &[Control], nm: &NoiseModel, dt: f64) -> Result<JointBelief> {
    if controls.len() != belief.robots.len() {
        return Err(Error::Shape(format!(
            "{} controls for {} robots",
            controls.len(),
            belief.robots.len()
        )));
    }
    let mut out = belief.clone();
    for (r, u) in out.robots.iter_mut().zip(controls) {
        r.mean += u * dt;
        r.cov += Mat2::identity() * nm.q_robot;
    }
    Ok(out)
}

fn block_diag_of(blocks: &[Mat2]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * blocks.len(), 2 * blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        m.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(b);
    }
    m
}

/// Target-side Jacobian and noise for every (robot, target) pair, target-major.
pub(crate) fn target_geometry(
    robot_means: &[Vec2],
    target_means: &[Vec2],
    nm: &NoiseModel,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (robot_means.len(), target_means.len());
    let mut h = DMatrix::zeros(2 * n * m, 2 * m);
    let mut noise = Vec::with_capacity(n * m);
    for (j, target) in target_means.iter().enumerate() {
        for (i, robot) in robot_means.iter().enumerate() {
            let (wrt_target, _) = range_bearing_jacobians(robot, target)?;
            let row = 2 * (j * n + i);
            h.fixed_view_mut::<2, 2>(row, 2 * j).copy_from(&wrt_target);
            noise.push(measurement_noise_cov(MeasurementKind::RangeBearing, robot, target, nm));
        }
    }
    Ok((h, block_diag_of(&noise)))
}

/// Robot-side Jacobian and noise: GPS rows carry `I₂` in the observer's
/// column block, relative rows carry both the observer and observed blocks.
pub(crate) fn robot_geometry(robot_means: &[Vec2], nm: &NoiseModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = robot_means.len();
    let mut h = DMatrix::zeros(2 * n * n, 2 * n);
    let mut noise = Vec::with_capacity(n * n);
    for (i, observer) in robot_means.iter().enumerate() {
        for (j, observed) in robot_means.iter().enumerate() {
            let row = 2 * (i * n + j);
            if i == j {
                h.fixed_view_mut::<2, 2>(row, 2 * i).copy_from(&Mat2::identity());
                noise.push(measurement_noise_cov(MeasurementKind::Gps, observer, observer, nm));
            } else {
                let (wrt_observed, wrt_observer) = range_bearing_jacobians(observer, observed)?;
                h.fixed_view_mut::<2, 2>(row, 2 * i).copy_from(&wrt_observer);
                h.fixed_view_mut::<2, 2>(row, 2 * j).copy_from(&wrt_observed);
                noise.push(measurement_noise_cov(
                    MeasurementKind::RangeBearing,
                    observer,
                    observed,
                    nm,
                ));
            }
        }
    }
    Ok((h, block_diag_of(&noise)))
}

fn find_reading(
    raw: &[Measurement],
    kind: MeasurementKind,
    observer: EntityId,
    observed: EntityId,
) -> Result<&Measurement> {
    let mut hits = raw
        .iter()
        .filter(|z| z.kind == kind && z.observer == observer && z.observed == observed);
    let first = hits
        .next()
        .ok_or_else(|| Error::Shape(format!("missing {kind:?} reading {observer:?} -> {observed:?}")))?;
    if hits.next().is_some() {
        return Err(Error::Shape(format!(
            "duplicate {kind:?} reading {observer:?} -> {observed:?}"
        )));
    }
    Ok(first)
}

/// Stacks every robot→target range-bearing reading for the target update.
///
/// Residuals are taken against the predicted means with wrapped bearings.
/// `raw` may contain other readings; they are ignored.
pub fn stack_target_measurements(
    robot_means: &[Vec2],
    target_means: &[Vec2],
    raw: &[Measurement],
    nm: &NoiseModel,
) -> Result<StackedMeasurementSet> {
    let (n, m) = (robot_means.len(), target_means.len());
    let (jacobian, noise) = target_geometry(robot_means, target_means, nm)?;
    let mut residual = DVector::zeros(2 * n * m);
    let mut measurements = Vec::with_capacity(n * m);
    for (j, target) in target_means.iter().enumerate() {
        for (i, robot) in robot_means.iter().enumerate() {
            let z = find_reading(
                raw,
                MeasurementKind::RangeBearing,
                EntityId::Robot(i),
                EntityId::Target(j),
            )?;
            let predicted = range_bearing(robot, target)?;
            let k = 2 * (j * n + i);
            residual[k] = z.value.x - predicted.x;
            residual[k + 1] = wrap_angle(z.value.y - predicted.y);
            measurements.push(z.clone());
        }
    }
    Ok(StackedMeasurementSet {
        measurements,
        jacobian,
        noise,
        residual,
    })
}

/// Stacks GPS and robot→robot readings for the localization update.
pub fn stack_robot_measurements(
    robot_means: &[Vec2],
    raw: &[Measurement],
    nm: &NoiseModel,
) -> Result<StackedMeasurementSet> {
    let n = robot_means.len();
    let (jacobian, noise) = robot_geometry(robot_means, nm)?;
    let mut residual = DVector::zeros(2 * n * n);
    let mut measurements = Vec::with_capacity(n * n);
    for (i, observer) in robot_means.iter().enumerate() {
        for (j, observed) in robot_means.iter().enumerate() {
            let k = 2 * (i * n + j);
            if i == j {
                let z = find_reading(raw, MeasurementKind::Gps, EntityId::Robot(i), EntityId::Robot(i))?;
                residual[k] = z.value.x - observer.x;
                residual[k + 1] = z.value.y - observer.y;
                measurements.push(z.clone());
            } else {
                let z = find_reading(
                    raw,
                    MeasurementKind::RangeBearing,
                    EntityId::Robot(i),
                    EntityId::Robot(j),
                )?;
                let predicted = range_bearing(observer, observed)?;
                residual[k] = z.value.x - predicted.x;
                residual[k + 1] = wrap_angle(z.value.y - predicted.y);
                measurements.push(z.clone());
            }
        }
    }
    Ok(StackedMeasurementSet {
        measurements,
        jacobian,
        noise,
        residual,
    })
}

/// Joseph-form Kalman update of a stacked state.
///
/// With `residual = None` only the covariance is updated; the mean stays at
/// the prior. An identically zero innovation covariance means both prior and
/// readings are exact, and the prior is returned unchanged.
pub fn joseph_update(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    jacobian: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    residual: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = prior_cov.nrows();
    if jacobian.ncols() != dim || noise.nrows() != jacobian.nrows() || prior_mean.len() != dim {
        return Err(Error::Shape(format!(
            "state {dim}, jacobian {}x{}, noise {}x{}",
            jacobian.nrows(),
            jacobian.ncols(),
            noise.nrows(),
            noise.ncols()
        )));
    }
    let ph_t = prior_cov * jacobian.transpose();
    let mut s = jacobian * &ph_t + noise;
    s = (&s + s.transpose()) * 0.5;
    if s.amax() == 0.0 {
        return Ok((prior_mean.clone(), prior_cov.clone()));
    }
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_INNOVATION_CONDITION {
        return Err(Error::SingularInnovation { condition });
    }
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation { condition })?;
    // K = P Hᵀ S⁻¹  ⇔  Kᵀ = S⁻¹ (P Hᵀ)ᵀ
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let i_kh = DMatrix::identity(dim, dim) - &gain * jacobian;
    let mut post = &i_kh * prior_cov * i_kh.transpose() + &gain * noise * gain.transpose();
    post = (&post + post.transpose()) * 0.5;
    let mean = match residual {
        Some(r) => prior_mean + &gain * r,
        None => prior_mean.clone(),
    };
    Ok((mean, post))
}

/// Target measurement update on the stacked target set.
pub fn ekf_update_targets(prior: &JointBelief, ms: &StackedMeasurementSet) -> Result<JointBelief> {
    let (mean, cov) = joseph_update(
        &stack_means(&prior.targets),
        &block_diagonal(&prior.targets),
        &ms.jacobian,
        &ms.noise,
        Some(&ms.residual),
    )?;
    let mut out = prior.clone();
    out.targets = unstack(&mean, &cov);
    Ok(out)
}

/// Localization update on the stacked robot set. Robot/robot cross terms of
/// the posterior are dropped when splitting back into per-robot beliefs.
pub fn ekf_update_robots(prior: &JointBelief, ms: &StackedMeasurementSet) -> Result<JointBelief> {
    let (mean, cov) = joseph_update(
        &stack_means(&prior.robots),
        &block_diagonal(&prior.robots),
        &ms.jacobian,
        &ms.noise,
        Some(&ms.residual),
    )?;
    let mut out = prior.clone();
    out.robots = unstack(&mean, &cov);
    Ok(out)
}

/// Posterior covariance traces `(Tr P̂_R, Tr P̂_T)` one step ahead if the
/// robots stood at `robot_means`.
///
/// Covariances do not depend on measurement values, so this needs no
/// readings: it predicts both covariance blocks, linearizes at the
/// hypothetical robot positions and the current target means, and applies
/// both updates. Evaluated in information form,
/// `P̂ = (P̄⁻¹ + Hᵀ R⁻¹ H)⁻¹`, which equals the Joseph-form posterior under the
/// optimal gain and exploits the per-target block structure. Falls back to
/// the dense Joseph update when a prior or noise block is singular.
pub fn oracle_posterior_traces(robot_means: &[Vec2], belief: &JointBelief, nm: &NoiseModel) -> Result<(f64, f64)> {
    if robot_means.len() != belief.robots.len() {
        return Err(Error::Shape(format!(
            "{} hypothetical positions for {} robots",
            robot_means.len(),
            belief.robots.len()
        )));
    }
    let target_trace = belief
        .targets
        .iter()
        .map(|t| {
            let prior = t.cov + Mat2::identity() * nm.q_target;
            target_posterior_trace(robot_means, &t.mean, &prior, nm)
        })
        .sum::<Result<f64>>()?;
    let priors: Vec<Mat2> = belief
        .robots
        .iter()
        .map(|r| r.cov + Mat2::identity() * nm.q_robot)
        .collect();
    let robot_trace = robot_posterior_trace(robot_means, &priors, nm)?;
    Ok((robot_trace, target_trace))
}

fn target_posterior_trace(robot_means: &[Vec2], target: &Vec2, prior: &Mat2, nm: &NoiseModel) -> Result<f64> {
    let info = (|| {
        let mut y = prior.try_inverse()?;
        for robot in robot_means {
            let r = measurement_noise_cov(MeasurementKind::RangeBearing, robot, target, nm);
            let (h, _) = range_bearing_jacobians(robot, target).ok()?;
            y += h.transpose() * r.try_inverse()? * h;
        }
        Some(y)
    })();
    if let Some(y) = info {
        return spd_inverse_trace(&DMatrix::from_column_slice(2, 2, y.as_slice()));
    }
    let (h, r) = target_geometry(robot_means, std::slice::from_ref(target), nm)?;
    let p = DMatrix::from_column_slice(2, 2, prior.as_slice());
    let (_, post) = joseph_update(&DVector::zeros(2), &p, &h, &r, None)?;
    Ok(post.trace())
}

fn robot_posterior_trace(robot_means: &[Vec2], priors: &[Mat2], nm: &NoiseModel) -> Result<f64> {
    let n = robot_means.len();
    let info = (|| {
        let mut y = DMatrix::zeros(2 * n, 2 * n);
        let gps_info = Matrix2::identity() * nm.sigma_gps.powi(2);
        let gps_info = gps_info.try_inverse()?;
        for (i, p) in priors.iter().enumerate() {
            let block = p.try_inverse()? + gps_info;
            y.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(&block);
        }
        for (i, observer) in robot_means.iter().enumerate() {
            for (j, observed) in robot_means.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (h, _) = range_bearing_jacobians(observer, observed).ok()?;
                let r = measurement_noise_cov(MeasurementKind::RangeBearing, observer, observed, nm);
                let c = h.transpose() * r.try_inverse()? * h;
                for (a, b, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                    let mut block = y.fixed_view_mut::<2, 2>(2 * a, 2 * b);
                    block += c * sign;
                }
            }
        }
        Some(y)
    })();
    if let Some(y) = info {
        return spd_inverse_trace(&y);
    }
    let (h, r) = robot_geometry(robot_means, nm)?;
    let (_, post) = joseph_update(&DVector::zeros(2 * n), &block_diag_of(priors), &h, &r, None)?;
    Ok(post.trace())
}

fn spd_inverse_trace(y: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(y.clone()).ok_or(Error::SingularInnovation {
        condition: f64::INFINITY,
    })?;
    Ok(chol.inverse().trace())
}
