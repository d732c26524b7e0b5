//! Minimal-perturbation safety filter.
//!
//! The actual input is the Euclidean projection of the desired input onto
//!
//! ```text
//! { u : −Δt·β·u ≤ γ_c(λ₂ − ε),
//!       Δt·Δx_ijᵀ(u_i − u_j) + γ·½(‖Δx_ij‖² − d_min²)³ ≥ 0  for i < j,
//!       ‖u_i‖ ≤ u_max }
//! ```
//!
//! computed with Dykstra's alternating projections. Every set has a
//! closed-form projector, and the per-robot balls act on disjoint blocks so
//! they are projected together as one product set.

use nalgebra::DVector;

use crate::belief::{Control, JointBelief, Vec2};
use crate::config::ScenarioConfig;
use crate::connectivity::{build_graph, eigenvalue_gradient, GraphState};
use crate::error::{Error, Result};
use crate::planner::PlanResult;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Halfspace violation accepted as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Violation above which a non-converged solve is reported infeasible.
pub const INFEASIBLE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Connectivity,
    Collision { i: usize, j: usize },
    Custom,
}

/// `normal·u ≤ offset` over the stacked input.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub kind: ConstraintKind,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        Self {
            normal,
            offset,
            kind: ConstraintKind::Custom,
        }
    }

    /// `offset − normal·u`; negative when violated.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.offset - self.normal.dot(u)
    }

    fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let nn = self.normal.norm_squared();
        let excess = self.normal.dot(y) - self.offset;
        if excess <= 0.0 || nn == 0.0 {
            y.clone()
        } else {
            y - &self.normal * (excess / nn)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub halfspaces: Vec<Halfspace>,
    /// Radius of every per-robot input ball.
    pub ball_radius: f64,
}

impl ConstraintSet {
    /// Largest halfspace violation, zero when all are satisfied.
    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        self.halfspaces.iter().map(|h| -h.slack(u)).fold(0.0, f64::max)
    }
}

/// Gains and limits of the barrier constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyParams {
    pub r_c: f64,
    pub sigma: f64,
    pub d_min: f64,
    pub u_max: f64,
    pub eps_conn: f64,
    pub gamma: f64,
    pub gamma_conn: f64,
    pub dt: f64,
    /// Number of lowest nonzero Laplacian eigenvalues held above `ε`.
    pub conn_modes: usize,
}

impl SafetyParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            r_c: cfg.r_c,
            sigma: cfg.sigma(),
            d_min: cfg.d_min,
            u_max: cfg.u_max,
            eps_conn: cfg.eps_conn,
            gamma: cfg.cbf_gamma,
            gamma_conn: cfg.cbf_gamma_conn,
            dt: cfg.dt,
            conn_modes: cfg.connectivity_modes,
        }
    }
}

/// One connectivity halfspace (teams of two or more), one collision
/// halfspace per pair, and the input balls.
pub fn build_constraints(robot_means: &[Vec2], gs: &GraphState, params: &SafetyParams) -> ConstraintSet {
    let n = robot_means.len();
    let mut halfspaces = Vec::with_capacity(1 + n * n.saturating_sub(1) / 2);
    if n >= 2 {
        halfspaces.push(Halfspace {
            normal: &gs.beta * (-params.dt),
            offset: params.gamma_conn * (gs.lambda2 - params.eps_conn),
            kind: ConstraintKind::Connectivity,
        });
        for k in 2..(params.conn_modes + 1).min(n) {
            let grad = eigenvalue_gradient(
                &gs.eigenvectors.column(k).into_owned(),
                robot_means,
                params.r_c,
                params.sigma,
            );
            halfspaces.push(Halfspace {
                normal: grad * (-params.dt),
                offset: params.gamma_conn * (gs.eigenvalues[k] - params.eps_conn),
                kind: ConstraintKind::Connectivity,
            });
        }
    }
    let d2 = params.d_min * params.d_min;
    for i in 0..n {
        for j in i + 1..n {
            let delta = robot_means[i] - robot_means[j];
            let h = delta.norm_squared() - d2;
            let mut normal = DVector::zeros(2 * n);
            normal[2 * i] = -params.dt * delta.x;
            normal[2 * i + 1] = -params.dt * delta.y;
            normal[2 * j] = params.dt * delta.x;
            normal[2 * j + 1] = params.dt * delta.y;
            halfspaces.push(Halfspace {
                normal,
                offset: params.gamma * 0.5 * h.powi(3),
                kind: ConstraintKind::Collision { i, j },
            });
        }
    }
    ConstraintSet {
        halfspaces,
        ball_radius: params.u_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    Optimal,
    MaxIters,
    InfeasibleFallback,
}

impl FilterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterStatus::Optimal => "optimal",
            FilterStatus::MaxIters => "max_iters",
            FilterStatus::InfeasibleFallback => "infeasible_fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterWarning {
    /// The estimated graph was already below the connectivity threshold.
    DisconnectedAtEntry { lambda2: f64 },
    /// `λ₂` is (numerically) repeated, so its gradient is one subgradient.
    RepeatedLambda2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub actual: Vec<Control>,
    /// `‖u − u_des‖₂` over the stacked input, m.
    pub perturbation: f64,
    pub iterations: usize,
    pub status: FilterStatus,
    /// `offset − normal·u` per halfspace, in constraint order.
    pub slacks: Vec<f64>,
    pub warnings: Vec<FilterWarning>,
}

fn project_balls(y: &DVector<f64>, radius: f64) -> DVector<f64> {
    let mut x = y.clone();
    for block in x.as_mut_slice().chunks_mut(2) {
        let norm = block[0].hypot(block[1]);
        if norm > radius {
            let s = radius / norm;
            block[0] *= s;
            block[1] *= s;
        }
    }
    x
}

pub fn stack_controls(controls: &[Control]) -> DVector<f64> {
    DVector::from_iterator(2 * controls.len(), controls.iter().flat_map(|u| [u.x, u.y]))
}

pub fn unstack_controls(u: &DVector<f64>) -> Vec<Control> {
    u.as_slice().chunks(2).map(|c| Control::new(c[0], c[1])).collect()
}

/// Dykstra projection of `u_des` onto the intersection of `constraints`.
///
/// Halfspaces are visited in order, then the balls. Stops once a full sweep
/// moves neither the iterate nor any correction term by more than `tol` and
/// the iterate is within `tol / 10` of every halfspace. The result always
/// lies in the balls, whatever the status.
pub fn project_feasible(u_des: &DVector<f64>, constraints: &ConstraintSet, tol: f64, max_iters: usize) -> FilterResult {
    let hs = &constraints.halfspaces;
    // A zero normal with a negative offset is empty; no projector exists.
    let live: Vec<&Halfspace> = hs.iter().filter(|h| h.normal.norm_squared() > 0.0).collect();
    let dead = hs.len() != live.len() && hs.iter().any(|h| h.normal.norm_squared() == 0.0 && h.offset < 0.0);

    let dim = u_des.len();
    let mut x = u_des.clone();
    let mut corrections = vec![DVector::<f64>::zeros(dim); live.len() + 1];
    let mut iterations = 0;
    let mut converged = false;
    // Euclidean distance to the farthest violated halfspace.
    let live_distance = |x: &DVector<f64>| live.iter().map(|h| -h.slack(x) / h.normal.norm()).fold(0.0, f64::max);

    while iterations < max_iters {
        iterations += 1;
        let start = x.clone();
        let mut moved = 0.0f64;
        for (k, p) in corrections.iter_mut().enumerate() {
            let y = &x + &*p;
            let next = match live.get(k) {
                Some(h) => h.project(&y),
                None => project_balls(&y, constraints.ball_radius),
            };
            let new_p = &y - &next;
            moved = moved.max((&new_p - &*p).amax());
            *p = new_p;
            x = next;
        }
        moved = moved.max((&x - &start).amax());
        if moved < tol && live_distance(&x) <= 0.1 * tol {
            converged = true;
            break;
        }
    }

    let x = project_balls(&x, constraints.ball_radius);
    let violation = constraints.violation(&x);
    let status = if converged && !dead && violation <= FEASIBILITY_TOL {
        FilterStatus::Optimal
    } else if dead || violation > INFEASIBLE_TOL {
        FilterStatus::InfeasibleFallback
    } else {
        FilterStatus::MaxIters
    };
    FilterResult {
        actual: unstack_controls(&x),
        perturbation: (&x - u_des).norm(),
        iterations,
        status,
        slacks: hs.iter().map(|h| h.slack(&x)).collect(),
        warnings: Vec::new(),
    }
}

/// Graph, gradient, constraints, and projection at the estimated robot positions.
pub fn filter_controls(desired: &PlanResult, belief: &JointBelief, cfg: &ScenarioConfig) -> Result<FilterResult> {
    if desired.desired.len() != belief.robots.len() {
        return Err(Error::Shape(format!(
            "{} desired inputs for {} robots",
            desired.desired.len(),
            belief.robots.len()
        )));
    }
    let params = SafetyParams::from_config(cfg);
    let means = belief.robot_means();
    let gs = build_graph(&means, params.r_c, params.sigma);
    let constraints = build_constraints(&means, &gs, &params);
    let mut result = project_feasible(
        &stack_controls(&desired.desired),
        &constraints,
        DEFAULT_TOL,
        DEFAULT_MAX_ITERS,
    );
    if means.len() >= 2 && gs.lambda2 < params.eps_conn {
        result
            .warnings
            .push(FilterWarning::DisconnectedAtEntry { lambda2: gs.lambda2 });
    }
    if gs.repeated_lambda2 {
        result.warnings.push(FilterWarning::RepeatedLambda2);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::EntityBelief;

    fn params() -> SafetyParams {
        SafetyParams {
            r_c: 10.0,
            sigma: crate::config::default_sigma_norm(10.0),
            d_min: 3.0,
            u_max: 1.0,
            eps_conn: 1e-5,
            gamma: 1.0,
            gamma_conn: 1.0,
            dt: 1.0,
            conn_modes: 1,
        }
    }

    fn constraints_at(pts: &[Vec2], p: &SafetyParams) -> ConstraintSet {
        let gs = build_graph(pts, p.r_c, p.sigma);
        build_constraints(pts, &gs, p)
    }

    #[test]
    fn constraint_counts() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0), Vec2::new(0.0, 5.0)];
        let cs = constraints_at(&pts, &params());
        assert_eq!(cs.halfspaces.len(), 4);
        assert_eq!(cs.halfspaces[0].kind, ConstraintKind::Connectivity);
        assert_eq!(cs.ball_radius, 1.0);
    }

    #[test]
    fn extra_connectivity_modes() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0), Vec2::new(0.0, 5.0)];
        let p = SafetyParams {
            conn_modes: 5,
            ..params()
        };
        let cs = constraints_at(&pts, &p);
        // Capped at the N − 1 nonzero eigenvalues.
        let conn = cs
            .halfspaces
            .iter()
            .filter(|h| h.kind == ConstraintKind::Connectivity)
            .count();
        assert_eq!(conn, 2);
        assert_eq!(cs.halfspaces.len(), 5);
        assert!(cs.halfspaces[1].offset > cs.halfspaces[0].offset);
    }

    #[test]
    fn pair_at_minimum_distance_forbids_closing() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0)];
        let cs = constraints_at(&pts, &params());
        let c = &cs.halfspaces[1];
        assert!(c.offset.abs() < 1e-12);
        // Robot 0 moving toward robot 1 is infeasible, away is fine.
        assert!(c.slack(&DVector::from_vec(vec![0.5, 0.0, 0.0, 0.0])) < 0.0);
        assert!(c.slack(&DVector::from_vec(vec![-0.5, 0.0, 0.0, 0.0])) >= 0.0);
    }

    #[test]
    fn feasible_input_is_unchanged() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0), Vec2::new(0.0, 5.0)];
        let cs = constraints_at(&pts, &params());
        let u = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.0, 0.0, 0.4]);
        let r = project_feasible(&u, &cs, DEFAULT_TOL, DEFAULT_MAX_ITERS);
        assert_eq!(stack_controls(&r.actual), u);
        assert!(r.iterations <= 2);
        assert_eq!(r.status, FilterStatus::Optimal);
    }

    #[test]
    fn single_halfspace_matches_closed_form_and_grid() {
        let n = DVector::from_vec(vec![1.0, 2.0]);
        let cs = ConstraintSet {
            halfspaces: vec![Halfspace::new(n.clone(), 0.5)],
            ball_radius: 10.0,
        };
        let u_des = DVector::from_vec(vec![1.0, 1.0]);
        let r = project_feasible(&u_des, &cs, DEFAULT_TOL, DEFAULT_MAX_ITERS);
        let closed = &u_des - &n * ((n.dot(&u_des) - 0.5) / n.norm_squared());
        let got = stack_controls(&r.actual);
        assert!((&got - &closed).amax() < 1e-12);

        // Brute force over a fine grid.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let step = 1e-3;
        for a in 0..=2000 {
            for b in 0..=2000 {
                let (x, y) = (-1.0 + a as f64 * step, -1.0 + b as f64 * step);
                if x + 2.0 * y <= 0.5 {
                    let d = (x - 1.0).powi(2) + (y - 1.0).powi(2);
                    if d < best.0 {
                        best = (d, x, y);
                    }
                }
            }
        }
        assert!((got[0] - best.1).abs() < 2e-3 && (got[1] - best.2).abs() < 2e-3);
        assert!((0.5 * (&got - &u_des).norm_squared() - 0.5 * best.0).abs() < 1e-5);
    }

    #[test]
    fn oversized_input_is_scaled_onto_ball() {
        let cs = ConstraintSet {
            halfspaces: vec![],
            ball_radius: 1.0,
        };
        let r = project_feasible(&DVector::from_vec(vec![2.0, 0.0, 0.0, -0.5]), &cs, DEFAULT_TOL, 100);
        assert_eq!(r.actual, vec![Control::new(1.0, 0.0), Control::new(0.0, -0.5)]);
    }

    fn plan(desired: Vec<Control>) -> PlanResult {
        PlanResult {
            desired,
            predicted_trace: 0.0,
            evaluations: 0,
            wall_time: 0.0,
        }
    }

    fn team(pts: &[Vec2]) -> JointBelief {
        JointBelief::new(
            pts.iter().map(|p| EntityBelief::isotropic(*p, 1.0)).collect(),
            vec![EntityBelief::isotropic(Vec2::new(50.0, 50.0), 1.0)],
        )
        .unwrap()
    }

    fn cfg() -> ScenarioConfig {
        let mut c = ScenarioConfig::demo();
        c.cbf_gamma = 1.0;
        c
    }

    #[test]
    fn zero_desired_stays_zero() {
        let b = team(&[Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0), Vec2::new(2.0, 4.0)]);
        let r = filter_controls(&plan(vec![Control::zeros(); 3]), &b, &cfg()).unwrap();
        assert!(r.actual.iter().all(|u| *u == Control::zeros()));
        assert_eq!(r.perturbation, 0.0);
    }

    #[test]
    fn head_on_pair_keeps_separation_rate() {
        let b = team(&[Vec2::new(0.0, 0.0), Vec2::new(3.1, 0.0)]);
        let r = filter_controls(&plan(vec![Control::new(1.0, 0.0), Control::new(-1.0, 0.0)]), &b, &cfg()).unwrap();
        let dx = Vec2::new(-3.1, 0.0);
        let h: f64 = 3.1f64 * 3.1 - 9.0;
        let rate = dx.dot(&(r.actual[0] - r.actual[1]));
        assert!(rate >= -0.5 * h.powi(3) - 1e-6);
        assert_eq!(r.status, FilterStatus::Optimal);
    }

    #[test]
    fn edge_of_range_pair_holds_connectivity() {
        let b = team(&[Vec2::new(0.0, 0.0), Vec2::new(9.9, 0.0)]);
        let desired = vec![Control::new(-1.0, 0.0), Control::new(1.0, 0.0)];
        let r = filter_controls(&plan(desired), &b, &cfg()).unwrap();
        assert_eq!(r.status, FilterStatus::Optimal);
        assert!(r.slacks[0] >= -1e-6);
        assert!(r.slacks[0].abs() < 1e-6, "connectivity should be active");
        assert!(r.perturbation > 0.0);
    }

    #[test]
    fn disconnected_team_warns_and_respects_balls() {
        let b = team(&[Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0)]);
        let r = filter_controls(&plan(vec![Control::new(3.0, 0.0), Control::zeros()]), &b, &cfg()).unwrap();
        assert!(matches!(r.warnings[0], FilterWarning::DisconnectedAtEntry { .. }));
        assert_eq!(r.status, FilterStatus::InfeasibleFallback);
        assert!(r.actual.iter().all(|u| u.norm() <= 1.0 + 1e-12));
    }
}
