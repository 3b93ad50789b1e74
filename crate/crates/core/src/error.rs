use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("bad value at row {row}, column `{column}`: {message}")]
    BadValue {
        row: usize,
        column: String,
        message: String,
    },

    #[error("arm {arm} has {count} subjects; at least 2 are required")]
    EmptyArm { arm: u8, count: usize },

    #[error("arm {arm} has no observed events")]
    NoEventsInArm { arm: u8 },

    #[error("Cox fit for arm {arm} did not converge after {iterations} iterations: {reason}")]
    NonConvergence {
        arm: u8,
        iterations: usize,
        reason: String,
    },

    #[error("observed information matrix for arm {arm} is singular")]
    SingularInformation { arm: u8 },

    #[error("conditional survival is zero at the censoring time {time}")]
    DegenerateSurvival { time: f64 },

    #[error("restricted mean time lost in the control arm is zero")]
    ZeroDenominator,

    #[error("quantile at level {level} is undefined for arm {arm}")]
    QuantileUndefined { arm: u8, level: f64 },

    #[error("estimated survival density is zero at the quantile of arm {arm}")]
    DensityZero { arm: u8 },

    #[error("invalid estimand: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} Monte Carlo replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
