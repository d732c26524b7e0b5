//! Single-step planner benchmark: continuous vs greedy vs random on
//! identical randomized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{EntityBelief, JointBelief, Mat2, Vec2};
use crate::error::{Error, Result};
use crate::estimation::{ekf_update_robots, ekf_update_targets, stack_robot_measurements, stack_target_measurements};
use crate::models::{sample_gaussian, sample_measurement, EntityId, MeasurementKind, NoiseModel};
use crate::planner::{
    action_candidates, continuous_optimize, greedy_select, random_select, ActionSet, PlanContext, PlanResult,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareSettings {
    pub noise: NoiseModel,
    /// Side of the square arena, m.
    pub arena: f64,
    pub init_cov_robot: f64,
    pub init_cov_target: f64,
    /// Step length of the discrete planners, m.
    pub action_magnitude: f64,
    pub action_headings: usize,
    /// Search radius of the continuous planner, m.
    pub continuous_radius: f64,
    /// Continuous-planner evaluations per input dimension.
    pub budget_per_dim: usize,
    pub seed: u64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            noise: NoiseModel {
                q_robot: 0.01,
                q_target: 0.01,
                sigma_range: 0.1,
                sigma_bearing: 0.05,
                sigma_gps: 0.5,
                range_noise_scale: 0.0,
            },
            arena: 10.0,
            init_cov_robot: 1.0,
            init_cov_target: 10.0,
            action_magnitude: 1.5,
            action_headings: 8,
            continuous_radius: 3.0,
            budget_per_dim: 100,
            seed: 0,
        }
    }
}

impl CompareSettings {
    pub fn actions(&self, n: usize) -> ActionSet {
        ActionSet::uniform(n, action_candidates(self.action_magnitude, self.action_headings))
    }

    pub fn context(&self) -> PlanContext {
        PlanContext::new(self.noise, 1.0)
    }

    fn rng(&self, n: usize, trial: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((n as u64) << 32) ^ trial as u64);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Belief before the first measurement.
    pub initial: JointBelief,
    /// Belief after one measurement and update; what the planners see.
    pub belief: JointBelief,
    pub true_robots: Vec<Vec2>,
    pub true_targets: Vec<Vec2>,
}

/// `n` robots and `n` targets uniform in the arena, one full measurement and
/// EKF update applied. No placement constraints.
pub fn single_step_instance(n: usize, trial: usize, settings: &CompareSettings) -> Result<Instance> {
    if n == 0 {
        return Err(Error::Shape("instance needs at least one robot".into()));
    }
    let mut rng = settings.rng(n, trial, 0);
    let nm = &settings.noise;
    let place = |rng: &mut ChaCha8Rng| {
        Vec2::new(
            rng.random_range(0.0..settings.arena),
            rng.random_range(0.0..settings.arena),
        )
    };
    let true_robots: Vec<Vec2> = (0..n).map(|_| place(&mut rng)).collect();
    let true_targets: Vec<Vec2> = (0..n).map(|_| place(&mut rng)).collect();
    let draw = |rng: &mut ChaCha8Rng, x: &Vec2, var: f64| {
        EntityBelief::isotropic(x + sample_gaussian(rng, &(Mat2::identity() * var)), var)
    };
    let robots = true_robots
        .iter()
        .map(|x| draw(&mut rng, x, settings.init_cov_robot))
        .collect();
    let targets = true_targets
        .iter()
        .map(|x| draw(&mut rng, x, settings.init_cov_target))
        .collect();
    let initial = JointBelief::new(robots, targets)?;

    let mut readings = Vec::with_capacity(n * 2 * n);
    for (i, xi) in true_robots.iter().enumerate() {
        let me = (EntityId::Robot(i), xi);
        readings.push(sample_measurement(&mut rng, MeasurementKind::Gps, me, me, nm)?);
        for (j, xj) in true_robots.iter().enumerate().filter(|&(j, _)| j != i) {
            readings.push(sample_measurement(
                &mut rng,
                MeasurementKind::RangeBearing,
                me,
                (EntityId::Robot(j), xj),
                nm,
            )?);
        }
        for (j, xj) in true_targets.iter().enumerate() {
            readings.push(sample_measurement(
                &mut rng,
                MeasurementKind::RangeBearing,
                me,
                (EntityId::Target(j), xj),
                nm,
            )?);
        }
    }
    let robot_means = initial.robot_means();
    let tm = stack_target_measurements(&robot_means, &initial.target_means(), &readings, nm)?;
    let tracked = ekf_update_targets(&initial, &tm)?;
    let rm = stack_robot_measurements(&robot_means, &readings, nm)?;
    let belief = ekf_update_robots(&tracked, &rm)?;
    Ok(Instance {
        initial,
        belief,
        true_robots,
        true_targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Continuous,
    Greedy,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Continuous, Method::Greedy, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Continuous => "continuous",
            Method::Greedy => "greedy",
            Method::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub n: usize,
    pub trial: usize,
    pub method: Method,
    pub trace: f64,
    pub seconds: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub n: usize,
    pub method: Method,
    pub trials: usize,
    pub mean_trace: f64,
    pub std_trace: f64,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub mean_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub(crate) fn mean_std(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

impl ComparisonTable {
    /// Mean ± (population) std per `(n, method)`, ordered by `n` then method.
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut out = Vec::new();
        for n in ns {
            for method in Method::ALL {
                let rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.n == n && r.method == method).collect();
                let (mean_trace, std_trace) = mean_std(rows.iter().map(|r| r.trace));
                let (mean_seconds, std_seconds) = mean_std(rows.iter().map(|r| r.seconds));
                out.push(MethodSummary {
                    n,
                    method,
                    trials: rows.len(),
                    mean_trace,
                    std_trace,
                    mean_seconds,
                    std_seconds,
                    mean_evaluations: mean_std(rows.iter().map(|r| r.evaluations as f64)).0,
                });
            }
        }
        out
    }

    pub fn mean_trace(&self, n: usize, method: Method) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.n == n && s.method == method)
            .map(|s| s.mean_trace)
    }
}

/// All three planners on one instance, in the order of [`Method::ALL`].
pub fn run_trial(n: usize, trial: usize, settings: &CompareSettings) -> Result<Vec<ComparisonRow>> {
    let inst = single_step_instance(n, trial, settings)?;
    let ctx = settings.context();
    let actions = settings.actions(n);
    let budget = settings.budget_per_dim * 2 * n;
    let row = |method, r: PlanResult| ComparisonRow {
        n,
        trial,
        method,
        trace: r.predicted_trace,
        seconds: r.wall_time,
        evaluations: r.evaluations,
    };
    Ok(vec![
        row(
            Method::Continuous,
            continuous_optimize(
                &inst.belief,
                &ctx,
                settings.continuous_radius,
                budget,
                &mut settings.rng(n, trial, 1),
            )?,
        ),
        row(Method::Greedy, greedy_select(&inst.belief, &actions, &ctx)?),
        row(
            Method::Random,
            random_select(&inst.belief, &actions, &ctx, &mut settings.rng(n, trial, 2))?,
        ),
    ])
}

/// Every `(n, trial)` pair; trials run in parallel, rows come back in
/// `(n, trial, method)` order.
pub fn compare(n_values: &[usize], trials: usize, settings: &CompareSettings) -> Result<ComparisonTable> {
    if trials == 0 {
        return Err(Error::Shape("need at least one trial".into()));
    }
    let jobs: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..trials).map(move |t| (n, t)))
        .collect();
    let results: Vec<Result<Vec<ComparisonRow>>> = jobs.par_iter().map(|&(n, t)| run_trial(n, t, settings)).collect();
    let mut rows = Vec::with_capacity(3 * jobs.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::exhaustive_select;

    #[test]
    fn initial_covariances() {
        let inst = single_step_instance(3, 0, &CompareSettings::default()).unwrap();
        for t in &inst.initial.targets {
            assert!((t.cov.trace() - 20.0).abs() < 1e-12);
        }
        for r in &inst.initial.robots {
            assert!((r.cov.trace() - 2.0).abs() < 1e-12);
        }
        assert!(inst.belief.target_trace() < inst.initial.target_trace());
    }

    #[test]
    fn instances_are_reproducible() {
        let s = CompareSettings::default();
        assert_eq!(
            single_step_instance(4, 7, &s).unwrap(),
            single_step_instance(4, 7, &s).unwrap()
        );
        assert_ne!(
            single_step_instance(4, 7, &s).unwrap(),
            single_step_instance(4, 8, &s).unwrap()
        );
    }

    #[test]
    fn single_robot_greedy_is_exhaustive() {
        let s = CompareSettings::default();
        let inst = single_step_instance(1, 0, &s).unwrap();
        let g = greedy_select(&inst.belief, &s.actions(1), &s.context()).unwrap();
        let e = exhaustive_select(&inst.belief, &s.actions(1), &s.context()).unwrap();
        assert_eq!(g.predicted_trace, e.predicted_trace);
    }

    #[test]
    fn table_shape_and_counts() {
        let s = CompareSettings {
            budget_per_dim: 50,
            ..CompareSettings::default()
        };
        let table = compare(&[2], 2, &s).unwrap();
        assert_eq!(table.rows.len(), 6);
        let greedy: Vec<_> = table.rows.iter().filter(|r| r.method == Method::Greedy).collect();
        assert!(greedy.iter().all(|r| r.evaluations == 2 * 9));
        let summary = table.summary();
        assert_eq!(summary.len(), 3);
        assert!(summary.iter().all(|m| m.trials == 2));
    }
}
