//! Planar position beliefs for robots and targets.
//!
//! Every entity is a point in the plane with a 2×2 covariance. The joint
//! covariance of the team is block diagonal: robot/robot and robot/target
//! cross-covariances are deliberately not carried from one step to the next.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

/// Planar position or velocity, meters (or meters per step).
pub type Vec2 = Vector2<f64>;
/// 2×2 block (covariances, Jacobians).
pub type Mat2 = Matrix2<f64>;
/// Velocity command for one robot, meters per step.
pub type Control = Vec2;

/// Largest tolerated `‖P − Pᵀ‖∞` for a covariance.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Smallest tolerated eigenvalue for a covariance.
pub const PSD_TOL: f64 = 1e-9;

pub fn is_finite_vec(v: &Vec2) -> bool {
    v.x.is_finite() && v.y.is_finite()
}

/// Checks the symmetric-PSD contract for a matrix used as a covariance.
pub fn check_covariance(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() {
        return Err(Error::Shape(format!("covariance is {}x{}", p.nrows(), p.ncols())));
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Shape("covariance has non-finite entries".into()));
    }
    let defect = symmetry_defect(p);
    if defect > SYMMETRY_TOL {
        return Err(Error::Shape(format!("covariance asymmetric by {defect:.3e}")));
    }
    let min_eig = min_eigenvalue(p);
    if min_eig < -PSD_TOL {
        return Err(Error::Shape(format!(
            "covariance not PSD (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

pub fn symmetry_defect(p: &DMatrix<f64>) -> f64 {
    (p - p.transpose()).amax()
}

pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let sym = (p + p.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityBelief {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl EntityBelief {
    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        Self { mean, cov }
    }

    /// Isotropic belief `var · I₂` around `mean`.
    pub fn isotropic(mean: Vec2, var: f64) -> Self {
        Self {
            mean,
            cov: Mat2::identity() * var,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_finite_vec(&self.mean) {
            return Err(Error::Shape("belief mean is not finite".into()));
        }
        check_covariance(&DMatrix::from_column_slice(2, 2, self.cov.as_slice()))
    }
}

/// Stacked beliefs over the whole team and all targets.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    pub robots: Vec<EntityBelief>,
    pub targets: Vec<EntityBelief>,
}

impl JointBelief {
    pub fn new(robots: Vec<EntityBelief>, targets: Vec<EntityBelief>) -> Result<Self> {
        let belief = Self { robots, targets };
        belief.validate()?;
        Ok(belief)
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots.is_empty() || self.targets.is_empty() {
            return Err(Error::Shape(format!(
                "need at least one robot and one target, got {} and {}",
                self.robots.len(),
                self.targets.len()
            )));
        }
        self.robots
            .iter()
            .chain(&self.targets)
            .try_for_each(EntityBelief::validate)
    }

    pub fn robot_means(&self) -> Vec<Vec2> {
        self.robots.iter().map(|b| b.mean).collect()
    }

    pub fn target_means(&self) -> Vec<Vec2> {
        self.targets.iter().map(|b| b.mean).collect()
    }

    pub fn robot_trace(&self) -> f64 {
        self.robots.iter().map(|b| b.cov.trace()).sum()
    }

    pub fn target_trace(&self) -> f64 {
        self.targets.iter().map(|b| b.cov.trace()).sum()
    }

    /// `Tr(blockdiag(P_R, P_T))`.
    pub fn trace(&self) -> f64 {
        self.robot_trace() + self.target_trace()
    }
}

/// Stacks entity means into one column, entity-major.
pub(crate) fn stack_means(beliefs: &[EntityBelief]) -> DVector<f64> {
    DVector::from_iterator(2 * beliefs.len(), beliefs.iter().flat_map(|b| [b.mean.x, b.mean.y]))
}

/// `blockdiag(P₁, …, P_k)` of the entity covariances.
pub(crate) fn block_diagonal(beliefs: &[EntityBelief]) -> DMatrix<f64> {
    let n = 2 * beliefs.len();
    let mut p = DMatrix::zeros(n, n);
    for (k, b) in beliefs.iter().enumerate() {
        p.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&b.cov);
    }
    p
}

/// Splits a stacked mean and covariance back into per-entity beliefs, keeping
/// only the diagonal covariance blocks.
pub(crate) fn unstack(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Vec<EntityBelief> {
    (0..mean.len() / 2)
        .map(|k| {
            let m = Vec2::new(mean[2 * k], mean[2 * k + 1]);
            let c: Mat2 = cov.fixed_view::<2, 2>(2 * k, 2 * k).into_owned();
            EntityBelief::new(m, (c + c.transpose()) * 0.5)
        })
        .collect()
}
