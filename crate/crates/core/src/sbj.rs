//! Single buffer junction: admission of incoming flux according to the free
//! space in the buffer, release of queued vehicles at the outgoing supply, and
//! the forward-Euler update of the queues.
//!
//! A buffer of size `M * epsilon` with admission rates `c_i / epsilon` is the
//! rescaled model; `epsilon = 1` is the plain one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrs::JunctionSpec;

/// Fraction of the relaxation time `epsilon / sum(c_i)` allowed per step.
pub const RELAXATION_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferState {
    pub q: Vec<f64>,
    pub capacity: f64,
    pub epsilon: f64,
}

impl BufferState {
    /// Buffer of size `spec.capacity() * epsilon` holding `queues`.
    pub fn new(spec: &JunctionSpec, queues: Vec<f64>, epsilon: f64) -> Result<Self> {
        if queues.len() != spec.outgoing() {
            return Err(Error::Config(format!(
                "expected {} initial queues, got {}",
                spec.outgoing(),
                queues.len()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Some(q) = queues.iter().find(|q| !(**q >= 0.0)) {
            return Err(Error::Config(format!("queue lengths must be nonnegative, got {q}")));
        }
        let capacity = spec.capacity() * epsilon;
        let total: f64 = queues.iter().sum();
        if total > capacity {
            return Err(Error::Config(format!(
                "(IQ) violated: initial queues total {total} exceed buffer size {capacity}"
            )));
        }
        Ok(Self {
            q: queues,
            capacity,
            epsilon,
        })
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn free_space(&self) -> f64 {
        (self.capacity - self.total()).max(0.0)
    }
}

/// Boundary fluxes at the junction for one time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFluxes {
    pub f_in: Vec<f64>,
    pub f_out: Vec<f64>,
}

impl NodeFluxes {
    /// Flow `sum_i f_i theta_ij` entering the queue of outgoing road `j`.
    pub fn arrivals(&self, spec: &JunctionSpec, j: usize) -> f64 {
        self.f_in
            .iter()
            .zip(spec.theta())
            .map(|(f, row)| f * row[j])
            .sum()
    }
}

/// Boundary fluxes prescribed by the buffer for the given demands and supplies.
pub fn node_fluxes(
    spec: &JunctionSpec,
    buf: &BufferState,
    omega_in: &[f64],
    omega_out: &[f64],
) -> NodeFluxes {
    let space = buf.free_space();
    let f_in: Vec<f64> = spec
        .priorities()
        .iter()
        .zip(omega_in)
        .map(|(c, w)| w.min(c / buf.epsilon * space))
        .collect();
    let mut fluxes = NodeFluxes {
        f_in,
        f_out: Vec::with_capacity(omega_out.len()),
    };
    for (j, (q, w)) in buf.q.iter().zip(omega_out).enumerate() {
        let f = if *q > 0.0 {
            *w
        } else {
            w.min(fluxes.arrivals(spec, j))
        };
        fluxes.f_out.push(f);
    }
    fluxes
}

/// Queue level `M - omega_i / c_i` below which road `i` is admitted freely.
pub fn queue_threshold(spec: &JunctionSpec, omega_in: &[f64], i: usize) -> f64 {
    spec.capacity() - omega_in[i] / spec.priorities()[i]
}

/// Largest stable time step for the queue update: a fraction of the
/// relaxation time, further capped so that admitted flow cannot overfill the
/// buffer within one step.
pub fn stable_dt(spec: &JunctionSpec, buf: &BufferState, fluxes: &NodeFluxes) -> f64 {
    let rate: f64 = spec.priorities().iter().sum();
    let mut bound = RELAXATION_FRACTION * buf.epsilon / rate;
    let inflow: f64 = fluxes.f_in.iter().sum();
    if inflow > 0.0 {
        bound = bound.min(buf.free_space() / inflow);
    }
    bound
}

/// Reduces outgoing fluxes of queues that would be emptied within `dt`, so the
/// queue lands exactly on zero instead of going negative.
///
/// The limited flux is what the adjacent road cell receives, so road mass and
/// queue mass stay balanced.
pub fn limit_outflows(spec: &JunctionSpec, buf: &BufferState, fluxes: &mut NodeFluxes, dt: f64) {
    for j in 0..buf.q.len() {
        let available = buf.q[j] / dt + fluxes.arrivals(spec, j);
        if fluxes.f_out[j] > available {
            fluxes.f_out[j] = available.max(0.0);
        }
    }
}

/// Forward-Euler step of `q_j' = sum_i f_i theta_ij - f_j`, clamped at zero.
pub fn advance_queues(
    spec: &JunctionSpec,
    buf: &BufferState,
    fluxes: &NodeFluxes,
    dt: f64,
) -> Result<BufferState> {
    let rate: f64 = spec.priorities().iter().sum();
    let bound = RELAXATION_FRACTION * buf.epsilon / rate;
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, bound });
    }
    let inflow: f64 = fluxes.f_in.iter().sum();
    if dt * inflow > buf.free_space() * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::StepSize {
            dt,
            bound: buf.free_space() / inflow,
        });
    }
    let q = buf
        .q
        .iter()
        .enumerate()
        .map(|(j, q)| (q + dt * (fluxes.arrivals(spec, j) - fluxes.f_out[j])).max(0.0))
        .collect();
    Ok(BufferState {
        q,
        capacity: buf.capacity,
        epsilon: buf.epsilon,
    })
}
