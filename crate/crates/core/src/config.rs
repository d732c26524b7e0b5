//! Scenario configuration: the JSON document that drives a simulation run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::Control;
use crate::error::ConfigError;
use crate::models::NoiseModel;

/// Default connectivity floor on λ₂.
pub const DEFAULT_EPS_CONN: f64 = 1e-5;

/// Adjacency normalizer that pins the largest possible edge weight
/// (coincident robots) to exactly 1: `r_c⁴ / ln 2`.
pub fn default_sigma_norm(r_c: f64) -> f64 {
    r_c.powi(4) / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Greedy,
    Random,
    Continuous,
    Exhaustive,
}

impl std::str::FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "random" => Ok(Self::Random),
            "continuous" => Ok(Self::Continuous),
            "exhaustive" => Ok(Self::Exhaustive),
            other => Err(format!("unknown planner `{other}`")),
        }
    }
}

/// One leg of a piecewise target schedule, active from `from_step` until the
/// next segment starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub from_step: usize,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetMotion {
    Stationary,
    Constant { velocity: [f64; 2] },
    Piecewise { segments: Vec<ScriptSegment> },
}

/// Predefined control schedule of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetScript {
    pub motion: TargetMotion,
    /// Speed bound applied to every commanded velocity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
}

impl TargetScript {
    pub fn stationary() -> Self {
        Self {
            motion: TargetMotion::Stationary,
            max_speed: None,
        }
    }

    pub fn constant(vx: f64, vy: f64) -> Self {
        Self {
            motion: TargetMotion::Constant { velocity: [vx, vy] },
            max_speed: None,
        }
    }

    pub fn piecewise(segments: impl IntoIterator<Item = (usize, [f64; 2])>) -> Self {
        Self {
            motion: TargetMotion::Piecewise {
                segments: segments
                    .into_iter()
                    .map(|(from_step, velocity)| ScriptSegment { from_step, velocity })
                    .collect(),
            },
            max_speed: None,
        }
    }

    /// Commanded velocity at `step`, clamped to `max_speed`.
    pub fn input_at(&self, step: usize) -> Control {
        let raw = match &self.motion {
            TargetMotion::Stationary => Control::zeros(),
            TargetMotion::Constant { velocity } => Control::new(velocity[0], velocity[1]),
            TargetMotion::Piecewise { segments } => segments
                .iter()
                .rev()
                .find(|s| s.from_step <= step)
                .map(|s| Control::new(s.velocity[0], s.velocity[1]))
                .unwrap_or_else(Control::zeros),
        };
        match self.max_speed {
            Some(vmax) if raw.norm() > vmax => raw * (vmax / raw.norm()),
            _ => raw,
        }
    }

    /// Largest speed the script can command.
    pub fn peak_speed(&self) -> f64 {
        let peak = match &self.motion {
            TargetMotion::Stationary => 0.0,
            TargetMotion::Constant { velocity } => Control::from(*velocity).norm(),
            TargetMotion::Piecewise { segments } => segments
                .iter()
                .map(|s| Control::from(s.velocity).norm())
                .fold(0.0, f64::max),
        };
        self.max_speed.map_or(peak, |v| peak.min(v))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let field = "target_scripts";
        if let Some(v) = self.max_speed {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(field, "max_speed must be finite and >= 0"));
            }
        }
        match &self.motion {
            TargetMotion::Stationary => Ok(()),
            TargetMotion::Constant { velocity } => check_velocity(velocity),
            TargetMotion::Piecewise { segments } => {
                if segments.is_empty() {
                    return Err(ConfigError::invalid(field, "piecewise script has no segments"));
                }
                if segments.windows(2).any(|w| w[0].from_step >= w[1].from_step) {
                    return Err(ConfigError::invalid(
                        field,
                        "piecewise segments must have strictly increasing from_step",
                    ));
                }
                segments.iter().try_for_each(|s| check_velocity(&s.velocity))
            }
        }
    }
}

fn check_velocity(v: &[f64; 2]) -> Result<(), ConfigError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError::invalid("target_scripts", "velocity must be finite"))
    }
}

fn default_dt() -> f64 {
    1.0
}
fn default_eps_conn() -> f64 {
    DEFAULT_EPS_CONN
}
fn default_headings() -> usize {
    8
}
fn default_arena() -> [f64; 2] {
    [10.0, 10.0]
}
fn default_gain() -> f64 {
    1.0
}
fn default_trace_weights() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_modes() -> usize {
    1
}
fn default_budget() -> usize {
    1000
}

/// All parameters of one closed-loop scenario.
///
/// Optional fields are filled by [`validate_config`]; after validation every
/// `Option` is `Some`, so a validated config serializes to a fully explicit
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_robots: usize,
    pub n_targets: usize,
    /// Communication range, m.
    pub r_c: f64,
    /// Minimum inter-robot separation, m.
    pub d_min: f64,
    /// Per-robot speed limit, m/step.
    pub u_max: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: usize,
    #[serde(default = "default_eps_conn")]
    pub eps_conn: f64,
    /// Adjacency normalizer, m⁴. Defaults to `r_c⁴ / ln 2`.
    #[serde(default)]
    pub sigma_norm: Option<f64>,
    pub action_magnitude: f64,
    #[serde(default = "default_headings")]
    pub action_headings: usize,
    pub q_robot: f64,
    /// Target process variance, m². Defaults to the square of the fastest
    /// scripted target speed, so the tracker absorbs the unmodeled motion.
    #[serde(default)]
    pub q_target: Option<f64>,
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    pub sigma_gps: f64,
    #[serde(default)]
    pub range_noise_scale: f64,
    pub init_cov_robot: f64,
    pub init_cov_target: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub planner: PlannerKind,
    /// One script per target; empty means every target is stationary.
    #[serde(default)]
    pub target_scripts: Vec<TargetScript>,
    /// Arena width and height, m. The arena spans `[0, w] × [0, h]`.
    #[serde(default = "default_arena")]
    pub arena: [f64; 2],
    /// Class-κ gain on the collision barrier's cubic term.
    #[serde(default = "default_gain")]
    pub cbf_gamma: f64,
    /// Class-κ gain on the connectivity barrier's `λ₂ − ε` offset.
    #[serde(default = "default_gain")]
    pub cbf_gamma_conn: f64,
    /// Lowest nonzero Laplacian eigenvalues given their own connectivity
    /// constraint; 1 constrains `λ₂` alone.
    #[serde(default = "default_modes")]
    pub connectivity_modes: usize,
    /// Weights `(w_R, w_T)` on the robot and target covariance traces.
    #[serde(default = "default_trace_weights")]
    pub trace_weights: [f64; 2],
    /// Evaluation budget of the continuous planner, per step.
    #[serde(default = "default_budget")]
    pub continuous_budget: usize,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads, parses, and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        validate_config(Self::from_json(&text)?)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_norm.unwrap_or_else(|| default_sigma_norm(self.r_c))
    }

    pub fn q_target(&self) -> f64 {
        self.q_target.unwrap_or_else(|| {
            let peak = self
                .target_scripts
                .iter()
                .map(TargetScript::peak_speed)
                .fold(0.0, f64::max);
            peak * peak
        })
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            q_robot: self.q_robot,
            q_target: self.q_target(),
            sigma_range: self.sigma_range,
            sigma_bearing: self.sigma_bearing,
            sigma_gps: self.sigma_gps,
            range_noise_scale: self.range_noise_scale,
        }
    }

    pub fn script(&self, target: usize) -> TargetScript {
        self.target_scripts
            .get(target)
            .cloned()
            .unwrap_or_else(TargetScript::stationary)
    }

    /// Five robots tracking five targets under the settings of the
    /// connectivity/collision demonstration: `r_c = 10`, `d_min = 3`,
    /// `u_max = 1`, initial covariances 25 and 1000, 50 steps.
    pub fn demo() -> Self {
        let scripts = vec![
            TargetScript::piecewise([(0, [-0.1, 0.1]), (25, [-0.1, 0.0])]),
            TargetScript::constant(-0.1, 0.1),
            TargetScript::piecewise([(0, [0.0, 0.1]), (25, [-0.1, 0.1])]),
            TargetScript::constant(0.1, -0.1),
            TargetScript::piecewise([(0, [0.1, 0.0]), (25, [0.1, -0.1])]),
        ];
        let cfg = Self {
            n_robots: 5,
            n_targets: 5,
            r_c: 10.0,
            d_min: 3.0,
            u_max: 1.0,
            dt: 1.0,
            horizon: 50,
            eps_conn: DEFAULT_EPS_CONN,
            sigma_norm: None,
            action_magnitude: 1.0,
            action_headings: 8,
            q_robot: 0.001,
            q_target: None,
            sigma_range: 0.1,
            sigma_bearing: 0.05,
            sigma_gps: 0.5,
            range_noise_scale: 0.0,
            init_cov_robot: 25.0,
            init_cov_target: 1000.0,
            seed: 0,
            planner: PlannerKind::Greedy,
            target_scripts: scripts,
            arena: [10.0, 10.0],
            cbf_gamma: 1e-3,
            cbf_gamma_conn: 0.1,
            connectivity_modes: 4,
            trace_weights: [1.0, 1.0],
            continuous_budget: 1000,
        };
        validate_config(cfg).expect("demo config is valid")
    }
}

/// Checks every invariant of a scenario and fills omitted optional fields.
///
/// Fails with the first violated invariant.
pub fn validate_config(mut cfg: ScenarioConfig) -> Result<ScenarioConfig, ConfigError> {
    check_structure(&cfg)?;
    if cfg.horizon < 1 {
        return Err(ConfigError::invalid("horizon", "must be at least 1"));
    }
    cfg.sigma_norm = Some(cfg.sigma());
    cfg.q_target = Some(cfg.q_target());
    Ok(cfg)
}

/// Every invariant except the horizon bound; a zero-step run is still a
/// well-defined (if trivial) simulation.
pub(crate) fn check_structure(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    use ConfigError as E;

    if cfg.n_robots < 1 {
        return Err(E::invalid("n_robots", "must be at least 1"));
    }
    if cfg.n_targets < 1 {
        return Err(E::invalid("n_targets", "must be at least 1"));
    }
    let positive = [
        ("d_min", cfg.d_min),
        ("u_max", cfg.u_max),
        ("dt", cfg.dt),
        ("eps_conn", cfg.eps_conn),
        ("cbf_gamma", cfg.cbf_gamma),
        ("cbf_gamma_conn", cfg.cbf_gamma_conn),
    ];
    for (field, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(E::invalid(field, format!("must be finite and > 0, got {value}")));
        }
    }
    if !(cfg.r_c.is_finite() && cfg.r_c > cfg.d_min) {
        return Err(E::invalid(
            "r_c",
            format!("must exceed d_min ({} <= {})", cfg.r_c, cfg.d_min),
        ));
    }
    if let Some(s) = cfg.sigma_norm {
        if !(s.is_finite() && s > 0.0) {
            return Err(E::invalid("sigma_norm", format!("must be finite and > 0, got {s}")));
        }
    }
    let nonneg = [
        ("q_robot", cfg.q_robot),
        ("q_target", cfg.q_target.unwrap_or(0.0)),
        ("sigma_range", cfg.sigma_range),
        ("sigma_bearing", cfg.sigma_bearing),
        ("sigma_gps", cfg.sigma_gps),
        ("range_noise_scale", cfg.range_noise_scale),
        ("init_cov_robot", cfg.init_cov_robot),
        ("init_cov_target", cfg.init_cov_target),
        ("action_magnitude", cfg.action_magnitude),
        ("trace_weights", cfg.trace_weights[0]),
        ("trace_weights", cfg.trace_weights[1]),
    ];
    for (field, value) in nonneg {
        if !(value.is_finite() && value >= 0.0) {
            return Err(E::invalid(field, format!("must be finite and >= 0, got {value}")));
        }
    }
    if cfg.action_magnitude > cfg.u_max {
        return Err(E::invalid(
            "action_magnitude",
            format!("exceeds u_max ({} > {})", cfg.action_magnitude, cfg.u_max),
        ));
    }
    if cfg.action_headings < 1 {
        return Err(E::invalid("action_headings", "must be at least 1"));
    }
    if cfg.connectivity_modes < 1 {
        return Err(E::invalid("connectivity_modes", "must be at least 1"));
    }
    if cfg.arena.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(E::invalid("arena", "width and height must be finite and > 0"));
    }
    if cfg.continuous_budget < 100 {
        return Err(E::invalid("continuous_budget", "must be at least 100"));
    }
    if !cfg.target_scripts.is_empty() && cfg.target_scripts.len() != cfg.n_targets {
        return Err(E::invalid(
            "target_scripts",
            format!(
                "expected {} scripts (or none), got {}",
                cfg.n_targets,
                cfg.target_scripts.len()
            ),
        ));
    }
    cfg.target_scripts.iter().try_for_each(TargetScript::validate)
}
