//! Multi-robot team localization and multi-target tracking.
//!
//! A team of single-integrator robots carries range-bearing sensors and GPS.
//! Each step a planner picks desired inputs that minimize the predicted
//! posterior covariance trace, a control-barrier safety filter bends them as
//! little as possible to keep the communication graph connected and the robots
//! apart, and a decoupled EKF fuses the resulting readings.
//!
//! ```
//! use tracklink::{config::ScenarioConfig, sim};
//!
//! let mut cfg = ScenarioConfig::demo();
//! cfg.horizon = 3;
//! let rows = sim::run(&cfg).unwrap();
//! assert_eq!(rows.len(), 4);
//! assert!(rows[3].trace_track < rows[0].trace_track);
//! ```

pub mod belief;
pub mod cli;
pub mod compare;
pub mod config;
pub mod connectivity;
pub mod error;
pub mod estimation;
pub mod models;
pub mod planner;
pub mod safety;
pub mod sim;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/connectivity.md")]
    mod connectivity {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/safety.md")]
    mod safety {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/comparison.md")]
    mod comparison {}
}

pub use belief::{Control, EntityBelief, JointBelief, Mat2, Vec2};
pub use config::{validate_config, PlannerKind, ScenarioConfig, TargetScript};
pub use error::{ConfigError, Error, Result};
