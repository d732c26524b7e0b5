use thiserror::Error;

/// A scenario configuration that fails validation or cannot be parsed.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    /// Two entities are (numerically) on top of each other, so bearing and
    /// its Jacobian are undefined.
    #[error("degenerate geometry: entities {distance:.3e} m apart")]
    DegenerateGeometry { distance: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },

    #[error("joint action space has {size} tuples, limit is {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },

    #[error("could not place a connected, collision-free team after {attempts} attempts")]
    PlacementFailed { attempts: usize },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            other => Error::Step {
                step,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
