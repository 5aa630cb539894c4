//! Buffered junction model for LWR traffic flow at a single intersection,
//! the limit Riemann solver obtained as the buffer shrinks to zero, and a
//! Godunov simulator with an experiment harness comparing the two.

pub mod error;
pub mod experiments;
pub mod flux;
pub mod lrs;
pub mod netsim;
pub mod riemann;
pub mod sbj;

pub use error::{Error, Result};
pub use flux::{make_quadratic_flux, FluxModel, FluxShape, Regime};
pub use lrs::{
    gamma, lrs_solve, solve_sbar, well_prepared_queues, well_prepared_queues_split, JunctionSpec,
    LrsSolution,
};
pub use netsim::{NetworkState, Orientation, RoadGrid};
pub use riemann::{evaluate_fan, godunov_flux, solve_riemann, RiemannFan, Wave};
pub use sbj::{advance_queues, node_fluxes, queue_threshold, BufferState, NodeFluxes};
