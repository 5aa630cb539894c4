use thiserror::Error;

/// Errors raised by the junction model, the solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("density {value} outside the admissible range [0, {rho_jam}]")]
    Domain { value: f64, rho_jam: f64 },

    #[error("flux {value} is negative")]
    NegativeFlux { value: f64 },

    #[error("flux {value} exceeds the maximum flux {f_max}")]
    InfeasibleFlux { value: f64, f_max: f64 },

    #[error("time step {dt} violates the stability bound {bound}")]
    StepSize { dt: f64, bound: f64 },

    #[error("position x = {x} lies on the wrong side of the junction for road {road}")]
    WrongSide { road: usize, x: f64 },

    #[error("road index {0} out of range")]
    RoadIndex(usize),

    #[error("a wave may have reached the far boundary of road {road} (max speed {speed} * t {t} >= L {length})")]
    WaveReachedBoundary {
        road: usize,
        speed: f64,
        t: f64,
        length: f64,
    },

    #[error("invariant violated at t = {time}: {message}")]
    Invariant { time: f64, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("failed to serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
