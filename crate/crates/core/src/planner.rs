//! Desired-control selection.
//!
//! Every planner scores a joint action by the weighted posterior trace the
//! team would reach one step ahead, computed by
//! [`oracle_posterior_traces`](crate::estimation::oracle_posterior_traces).
//! Planners see beliefs only, never ground truth.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::belief::{Control, JointBelief, Vec2};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::estimation::oracle_posterior_traces;
use crate::models::NoiseModel;

/// Largest joint action space the exhaustive planner will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

pub const CEM_POPULATION: usize = 32;
pub const CEM_ELITE_FRACTION: f64 = 0.25;
pub const CEM_MIN_IMPROVEMENT: f64 = 1e-6;

/// Candidate inputs `U_i` for every robot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    pub per_robot: Vec<Vec<Control>>,
}

impl ActionSet {
    /// Every robot gets the same candidate list.
    pub fn uniform(n_robots: usize, candidates: Vec<Control>) -> Self {
        Self {
            per_robot: vec![candidates; n_robots],
        }
    }

    pub fn total_candidates(&self) -> usize {
        self.per_robot.iter().map(Vec::len).sum()
    }

    fn check(&self, belief: &JointBelief) -> Result<()> {
        if self.per_robot.len() != belief.robots.len() {
            return Err(Error::Shape(format!(
                "action sets for {} robots, belief has {}",
                self.per_robot.len(),
                belief.robots.len()
            )));
        }
        if let Some(i) = self.per_robot.iter().position(Vec::is_empty) {
            return Err(Error::Shape(format!("robot {i} has no candidate actions")));
        }
        Ok(())
    }
}

/// `headings` equally spaced directions at `magnitude`, then the zero action.
/// Duplicates collapse, so a zero magnitude yields the zero action only.
pub fn action_candidates(magnitude: f64, headings: usize) -> Vec<Control> {
    let mut out: Vec<Control> = Vec::with_capacity(headings + 1);
    let snap = |v: f64| if v.abs() < 1e-12 * magnitude.max(1.0) { 0.0 } else { v };
    for k in 0..headings {
        let angle = std::f64::consts::TAU * k as f64 / headings as f64;
        let u = Control::new(snap(magnitude * angle.cos()), snap(magnitude * angle.sin()));
        if !out.contains(&u) {
            out.push(u);
        }
    }
    if !out.contains(&Control::zeros()) {
        out.push(Control::zeros());
    }
    out
}

pub fn default_action_set(cfg: &ScenarioConfig) -> ActionSet {
    ActionSet::uniform(
        cfg.n_robots,
        action_candidates(cfg.action_magnitude, cfg.action_headings),
    )
}

/// Everything a planner needs besides the belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanContext {
    pub noise: NoiseModel,
    pub dt: f64,
    /// `(w_R, w_T)` on the robot and target posterior traces.
    pub weights: [f64; 2],
}

impl PlanContext {
    pub fn new(noise: NoiseModel, dt: f64) -> Self {
        Self {
            noise,
            dt,
            weights: [1.0, 1.0],
        }
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            noise: cfg.noise_model(),
            dt: cfg.dt,
            weights: cfg.trace_weights,
        }
    }

    /// Weighted posterior trace with the robots at `positions`.
    pub fn score(&self, belief: &JointBelief, positions: &[Vec2]) -> Result<f64> {
        let (tr_r, tr_t) = oracle_posterior_traces(positions, belief, &self.noise)?;
        Ok(self.weights[0] * tr_r + self.weights[1] * tr_t)
    }

    /// Weighted posterior trace if every robot applied its input in `controls`.
    pub fn score_controls(&self, belief: &JointBelief, controls: &[Control]) -> Result<f64> {
        let positions: Vec<Vec2> = belief
            .robots
            .iter()
            .zip(controls)
            .map(|(r, u)| r.mean + u * self.dt)
            .collect();
        self.score(belief, &positions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub desired: Vec<Control>,
    /// Weighted posterior trace of the returned tuple, m².
    pub predicted_trace: f64,
    pub evaluations: usize,
    /// Seconds.
    pub wall_time: f64,
}

/// Sequential greedy selection.
///
/// Robots choose in index order. Robot `i` tries each candidate with robots
/// before it at their chosen positions and robots after it at their current
/// estimates, and keeps the first candidate of minimal score.
pub fn greedy_select(belief: &JointBelief, actions: &ActionSet, ctx: &PlanContext) -> Result<PlanResult> {
    actions.check(belief)?;
    let start = Instant::now();
    let mut positions = belief.robot_means();
    let mut desired = Vec::with_capacity(positions.len());
    let mut evaluations = 0;
    let mut best_trace = f64::INFINITY;
    for (i, candidates) in actions.per_robot.iter().enumerate() {
        let origin = belief.robots[i].mean;
        let mut best = (f64::INFINITY, 0);
        for (k, u) in candidates.iter().enumerate() {
            positions[i] = origin + u * ctx.dt;
            let score = ctx.score(belief, &positions)?;
            evaluations += 1;
            if score < best.0 {
                best = (score, k);
            }
        }
        let chosen = candidates[best.1];
        positions[i] = origin + chosen * ctx.dt;
        desired.push(chosen);
        best_trace = best.0;
    }
    Ok(PlanResult {
        desired,
        predicted_trace: best_trace,
        evaluations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Enumerates every joint action; ties go to the lexicographically first tuple.
pub fn exhaustive_select(belief: &JointBelief, actions: &ActionSet, ctx: &PlanContext) -> Result<PlanResult> {
    actions.check(belief)?;
    let size = actions
        .per_robot
        .iter()
        .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
        .unwrap_or(u128::MAX);
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let start = Instant::now();
    let n = actions.per_robot.len();
    let mut index = vec![0usize; n];
    let mut best = (f64::INFINITY, index.clone());
    let mut evaluations = 0;
    loop {
        let controls: Vec<Control> = index.iter().zip(&actions.per_robot).map(|(&k, c)| c[k]).collect();
        let score = ctx.score_controls(belief, &controls)?;
        evaluations += 1;
        if score < best.0 {
            best = (score, index.clone());
        }
        // Odometer increment, last robot fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                let desired = best.1.iter().zip(&actions.per_robot).map(|(&k, c)| c[k]).collect();
                return Ok(PlanResult {
                    desired,
                    predicted_trace: best.0,
                    evaluations,
                    wall_time: start.elapsed().as_secs_f64(),
                });
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < actions.per_robot[pos].len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

/// Independent uniform draw per robot, scored once.
pub fn random_select<R: Rng + ?Sized>(
    belief: &JointBelief,
    actions: &ActionSet,
    ctx: &PlanContext,
    rng: &mut R,
) -> Result<PlanResult> {
    actions.check(belief)?;
    let start = Instant::now();
    let desired: Vec<Control> = actions
        .per_robot
        .iter()
        .map(|c| c[rng.random_range(0..c.len())])
        .collect();
    let predicted_trace = ctx.score_controls(belief, &desired)?;
    Ok(PlanResult {
        desired,
        predicted_trace,
        evaluations: 1,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn project_to_balls(x: &mut [f64], radius: f64) {
    for block in x.chunks_mut(2) {
        let norm = block[0].hypot(block[1]);
        if norm > radius {
            block[0] *= radius / norm;
            block[1] *= radius / norm;
        }
    }
}

/// Cross-entropy search over the joint input space `{‖u_i‖ ≤ radius}`.
///
/// Each generation draws [`CEM_POPULATION`] samples from a diagonal Gaussian,
/// projects them onto the per-robot balls, and refits the Gaussian to the
/// best quarter. Stops when another generation would exceed `budget`
/// evaluations or the elite mean score improves by less than
/// [`CEM_MIN_IMPROVEMENT`].
pub fn continuous_optimize<R: Rng + ?Sized>(
    belief: &JointBelief,
    ctx: &PlanContext,
    radius: f64,
    budget: usize,
    rng: &mut R,
) -> Result<PlanResult> {
    if budget < CEM_POPULATION {
        return Err(Error::Shape(format!(
            "budget {budget} is below one generation of {CEM_POPULATION}"
        )));
    }
    let start = Instant::now();
    let dim = 2 * belief.robots.len();
    let n_elite = ((CEM_POPULATION as f64 * CEM_ELITE_FRACTION).round() as usize).max(1);
    let mut mean = vec![0.0; dim];
    let mut std = vec![radius; dim];
    let mut best: (f64, Vec<f64>) = (f64::INFINITY, vec![0.0; dim]);
    let mut evaluations = 0;
    let mut last_elite_score = f64::INFINITY;

    while evaluations + CEM_POPULATION <= budget {
        let mut scored = Vec::with_capacity(CEM_POPULATION);
        for _ in 0..CEM_POPULATION {
            let mut x: Vec<f64> = (0..dim)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean[d] + std[d] * z
                })
                .collect();
            project_to_balls(&mut x, radius);
            let controls: Vec<Control> = x.chunks(2).map(|c| Control::new(c[0], c[1])).collect();
            let score = ctx.score_controls(belief, &controls)?;
            evaluations += 1;
            scored.push((score, x));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scored[0].0 < best.0 {
            best = scored[0].clone();
        }
        let elites = &scored[..n_elite];
        for d in 0..dim {
            let m = elites.iter().map(|e| e.1[d]).sum::<f64>() / n_elite as f64;
            let v = elites.iter().map(|e| (e.1[d] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[d] = m;
            std[d] = v.sqrt();
        }
        let elite_score = elites.iter().map(|e| e.0).sum::<f64>() / n_elite as f64;
        if last_elite_score - elite_score < CEM_MIN_IMPROVEMENT {
            break;
        }
        last_elite_score = elite_score;
    }

    Ok(PlanResult {
        desired: best.1.chunks(2).map(|c| Control::new(c[0], c[1])).collect(),
        predicted_trace: best.0,
        evaluations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
