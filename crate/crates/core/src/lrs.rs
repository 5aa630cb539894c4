//! The limit Riemann solver: junction fluxes for Riemann data in the limit of
//! a vanishing buffer, the resulting self-similar solution on every road, and
//! the initial queues that make the buffered model reproduce it exactly.
//!
//! Roads are indexed `0..m` for incoming and `m..m + n` for outgoing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{FluxModel, Regime};
use crate::riemann::{solve_riemann, RiemannFan};

const ROW_SUM_TOL: f64 = 1e-12;
const BINDING_TOL: f64 = 1e-12;

/// Immutable junction configuration: turning fractions, priorities and buffer size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionSpec {
    theta: Vec<Vec<f64>>,
    priorities: Vec<f64>,
    capacity: f64,
}

impl JunctionSpec {
    /// `theta[i][j]` is the fraction of drivers from incoming road `i` heading
    /// to outgoing road `j`; `priorities[i]` is the admission rate `c_i`.
    pub fn new(theta: Vec<Vec<f64>>, priorities: Vec<f64>, capacity: f64) -> Result<Self> {
        let m = theta.len();
        if m == 0 {
            return Err(Error::Config("junction needs at least one incoming road".into()));
        }
        let n = theta[0].len();
        if n == 0 {
            return Err(Error::Config("junction needs at least one outgoing road".into()));
        }
        for (i, row) in theta.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "(Tij) violated: row {} of theta has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::Config(format!(
                    "(Tij) violated: theta entry {bad} in row {} outside [0, 1]",
                    i + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "(Tij) violated: row {} of theta sums to {sum}",
                    i + 1
                )));
            }
        }
        if priorities.len() != m {
            return Err(Error::Config(format!(
                "expected {m} priority rates, got {}",
                priorities.len()
            )));
        }
        if let Some((i, c)) = priorities
            .iter()
            .enumerate()
            .find(|(_, c)| !(**c > 0.0 && c.is_finite()))
        {
            return Err(Error::Config(format!(
                "priority c_{} must be positive, got {c}",
                i + 1
            )));
        }
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::Config(format!(
                "buffer size M must be positive, got {capacity}"
            )));
        }
        Ok(Self {
            theta,
            priorities,
            capacity,
        })
    }

    pub fn incoming(&self) -> usize {
        self.theta.len()
    }

    pub fn outgoing(&self) -> usize {
        self.theta[0].len()
    }

    pub fn roads(&self) -> usize {
        self.incoming() + self.outgoing()
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Checks `c_i * M > f_i^max` for every incoming road.
    pub fn check_admission(&self, incoming: &[FluxModel]) -> Result<()> {
        if incoming.len() != self.incoming() {
            return Err(Error::Config(format!(
                "expected {} incoming flux models, got {}",
                self.incoming(),
                incoming.len()
            )));
        }
        for (i, (c, model)) in self.priorities.iter().zip(incoming).enumerate() {
            if c * self.capacity <= model.f_max() {
                return Err(Error::Config(format!(
                    "(Mi) violated for road {}: c*M = {} <= f_max = {}",
                    i + 1,
                    c * self.capacity,
                    model.f_max()
                )));
            }
        }
        Ok(())
    }

    /// Load `sum_i min(c_i s, omega_i) theta_ij` placed on outgoing road `j`.
    pub fn constraint_load(&self, omega_in: &[f64], j: usize, s: f64) -> f64 {
        self.theta
            .iter()
            .zip(&self.priorities)
            .zip(omega_in)
            .map(|((row, c), w)| (c * s).min(*w) * row[j])
            .sum()
    }
}

/// `gamma(s)_i = min(c_i s, omega_i)`.
pub fn gamma(spec: &JunctionSpec, omega_in: &[f64], s: f64) -> Vec<f64> {
    spec.priorities
        .iter()
        .zip(omega_in)
        .map(|(c, w)| (c * s).min(*w))
        .collect()
}

/// Largest `s` in `[0, M]` whose `gamma(s)` respects every outgoing supply.
///
/// Each constraint load is concave, piecewise linear and nondecreasing in `s`
/// with breakpoints at `omega_i / c_i`, so its crossing with `omega_j` is found
/// exactly on the right segment.
pub fn solve_sbar(spec: &JunctionSpec, omega_in: &[f64], omega_out: &[f64]) -> f64 {
    let mut breakpoints: Vec<f64> = spec
        .priorities
        .iter()
        .zip(omega_in)
        .map(|(c, w)| w / c)
        .filter(|b| *b > 0.0 && *b < spec.capacity)
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    breakpoints.push(spec.capacity);

    (0..spec.outgoing())
        .map(|j| constraint_threshold(spec, omega_in, j, omega_out[j], &breakpoints))
        .fold(spec.capacity, f64::min)
}

fn constraint_threshold(
    spec: &JunctionSpec,
    omega_in: &[f64],
    j: usize,
    supply: f64,
    breakpoints: &[f64],
) -> f64 {
    if spec.constraint_load(omega_in, j, spec.capacity) <= supply {
        return spec.capacity;
    }
    let mut lo = 0.0;
    for &hi in breakpoints {
        if spec.constraint_load(omega_in, j, hi) > supply {
            // On [lo, hi] the load is A + B s: saturated roads contribute
            // omega_i theta_ij, the others c_i theta_ij s.
            let (mut offset, mut slope) = (0.0, 0.0);
            for ((row, c), w) in spec.theta.iter().zip(&spec.priorities).zip(omega_in) {
                if w / c <= lo {
                    offset += w * row[j];
                } else {
                    slope += c * row[j];
                }
            }
            if slope <= 0.0 {
                return lo;
            }
            return ((supply - offset) / slope).clamp(lo, hi);
        }
        lo = hi;
    }
    spec.capacity
}

/// Output of the limit Riemann solver for one set of Riemann data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrsSolution {
    pub s_bar: f64,
    pub capacity: f64,
    pub rho_init: Vec<f64>,
    pub omega_in: Vec<f64>,
    pub omega_out: Vec<f64>,
    pub f_in: Vec<f64>,
    pub f_out: Vec<f64>,
    pub rho0_in: Vec<f64>,
    pub rho0_out: Vec<f64>,
    /// Outgoing roads (0-based among the outgoing ones) whose supply
    /// constraint is active at `s_bar`.
    pub binding_out: Vec<usize>,
    pub models: Vec<FluxModel>,
    pub fans: Vec<RiemannFan>,
}

impl LrsSolution {
    pub fn incoming(&self) -> usize {
        self.f_in.len()
    }

    pub fn outgoing(&self) -> usize {
        self.f_out.len()
    }

    /// Boundary flux of road `k` in global numbering.
    pub fn flux(&self, road: usize) -> f64 {
        let m = self.incoming();
        if road < m {
            self.f_in[road]
        } else {
            self.f_out[road - m]
        }
    }

    /// `omega` at time zero for road `k`.
    pub fn omega(&self, road: usize) -> f64 {
        let m = self.incoming();
        if road < m {
            self.omega_in[road]
        } else {
            self.omega_out[road - m]
        }
    }

    pub fn boundary_state(&self, road: usize) -> f64 {
        let m = self.incoming();
        if road < m {
            self.rho0_in[road]
        } else {
            self.rho0_out[road - m]
        }
    }

    /// Asymptotic total queue `M - s_bar`.
    pub fn q_star(&self) -> f64 {
        self.capacity - self.s_bar
    }

    /// Self-similar density on `road` at `(t, x)`; `x <= 0` on incoming roads
    /// and `x >= 0` on outgoing ones.
    pub fn evaluate_self_similar(&self, road: usize, t: f64, x: f64) -> Result<f64> {
        let fan = self.fans.get(road).ok_or(Error::RoadIndex(road))?;
        let incoming = road < self.incoming();
        if (incoming && x > 0.0) || (!incoming && x < 0.0) {
            return Err(Error::WrongSide { road, x });
        }
        if t <= 0.0 {
            return Ok(self.rho_init[road]);
        }
        let xi = x / t;
        let model = &self.models[road];
        // The trace at x = 0 is the boundary state, whichever side of a
        // zero-speed wave it sits on.
        if xi == 0.0 {
            return Ok(self.boundary_state(road));
        }
        Ok(fan.evaluate(model, xi))
    }
}

impl fmt::Display for LrsSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.incoming();
        writeln!(f, "s_bar      = {:.12}", self.s_bar)?;
        writeln!(f, "q*         = {:.12}", self.q_star())?;
        let binding: Vec<String> = self
            .binding_out
            .iter()
            .map(|j| format!("{}", m + j + 1))
            .collect();
        writeln!(f, "binding    = [{}]", binding.join(", "))?;
        writeln!(
            f,
            "{:>5} {:>4} {:>14} {:>14} {:>14} {:>14}",
            "road", "kind", "rho_init", "omega", "flux", "rho_boundary"
        )?;
        for k in 0..self.rho_init.len() {
            writeln!(
                f,
                "{:>5} {:>4} {:>14.10} {:>14.10} {:>14.10} {:>14.10}",
                k + 1,
                if k < m { "in" } else { "out" },
                self.rho_init[k],
                self.omega(k),
                self.flux(k),
                self.boundary_state(k)
            )?;
        }
        Ok(())
    }
}

/// Solves the junction Riemann problem with the limit Riemann solver.
///
/// `models` and `rho_init` cover all `m + n` roads, incoming first.
pub fn lrs_solve(spec: &JunctionSpec, models: &[FluxModel], rho_init: &[f64]) -> Result<LrsSolution> {
    let (m, n) = (spec.incoming(), spec.outgoing());
    if models.len() != m + n || rho_init.len() != m + n {
        return Err(Error::Config(format!(
            "expected {} flux models and densities, got {} and {}",
            m + n,
            models.len(),
            rho_init.len()
        )));
    }
    let rho_init = rho_init
        .iter()
        .zip(models)
        .map(|(rho, model)| model.check_density(*rho))
        .collect::<Result<Vec<_>>>()?;

    let omega_in: Vec<f64> = (0..m)
        .map(|i| models[i].demand_unchecked(rho_init[i]))
        .collect();
    let omega_out: Vec<f64> = (m..m + n)
        .map(|j| models[j].supply_unchecked(rho_init[j]))
        .collect();

    let s_bar = solve_sbar(spec, &omega_in, &omega_out);
    let f_in = gamma(spec, &omega_in, s_bar);
    let f_out: Vec<f64> = (0..n)
        .map(|j| f_in.iter().zip(spec.theta()).map(|(f, row)| f * row[j]).sum())
        .collect();

    let binding_out = binding_constraints(spec, &omega_in, &omega_out, s_bar);

    let mut rho0_in = Vec::with_capacity(m);
    let mut rho0_out = Vec::with_capacity(n);
    let mut fans = Vec::with_capacity(m + n);
    for i in 0..m {
        let rho0 = boundary_state(&models[i], rho_init[i], f_in[i], Regime::Congested)?;
        fans.push(solve_riemann(&models[i], rho_init[i], rho0)?);
        rho0_in.push(rho0);
    }
    for j in 0..n {
        let k = m + j;
        let rho0 = boundary_state(&models[k], rho_init[k], f_out[j], Regime::Free)?;
        fans.push(solve_riemann(&models[k], rho0, rho_init[k])?);
        rho0_out.push(rho0);
    }

    Ok(LrsSolution {
        s_bar,
        capacity: spec.capacity(),
        rho_init,
        omega_in,
        omega_out,
        f_in,
        f_out,
        rho0_in,
        rho0_out,
        binding_out,
        models: models.to_vec(),
        fans,
    })
}

fn binding_constraints(
    spec: &JunctionSpec,
    omega_in: &[f64],
    omega_out: &[f64],
    s_bar: f64,
) -> Vec<usize> {
    let scale = omega_in.iter().sum::<f64>().max(1.0);
    let mut binding: Vec<usize> = (0..spec.outgoing())
        .filter(|&j| {
            let load = spec.constraint_load(omega_in, j, s_bar);
            load >= omega_out[j] - BINDING_TOL * scale
        })
        .collect();
    if binding.is_empty() && s_bar < spec.capacity() {
        // Round-off can leave the active constraint a few ulps short; the
        // tightest one is binding by construction.
        let tightest = (0..spec.outgoing())
            .min_by(|&a, &b| {
                let ga = omega_out[a] - spec.constraint_load(omega_in, a, s_bar);
                let gb = omega_out[b] - spec.constraint_load(omega_in, b, s_bar);
                ga.total_cmp(&gb)
            })
            .expect("at least one outgoing road");
        binding.push(tightest);
    }
    binding
}

/// Boundary state with flux `flux`: the initial state itself when its flux
/// already matches, otherwise the root on `branch` (congested for incoming
/// roads, free for outgoing roads).
fn boundary_state(model: &FluxModel, rho: f64, flux: f64, branch: Regime) -> Result<f64> {
    let own = model.value(rho);
    if (flux - own).abs() <= 1e-14 * model.f_max() {
        Ok(rho)
    } else {
        model.invert(flux, branch)
    }
}

/// Initial queues that make the buffered model stationary at the LRS solution.
///
/// With `s_bar = M` the buffer stays empty; otherwise the whole queue
/// `M - s_bar` sits on the smallest binding outgoing road.
pub fn well_prepared_queues(sol: &LrsSolution, spec: &JunctionSpec) -> Vec<f64> {
    well_prepared_queues_split(sol, spec, 1.0)
}

/// As [`well_prepared_queues`], but splitting the queue `alpha : 1 - alpha`
/// between the first two binding roads when there are at least two.
pub fn well_prepared_queues_split(sol: &LrsSolution, spec: &JunctionSpec, alpha: f64) -> Vec<f64> {
    let mut queues = vec![0.0; spec.outgoing()];
    if sol.s_bar >= spec.capacity() {
        return queues;
    }
    let q_star = spec.capacity() - sol.s_bar;
    let alpha = alpha.clamp(0.0, 1.0);
    match sol.binding_out.as_slice() {
        [] => {}
        [only] => queues[*only] = q_star,
        [first, second, ..] => {
            queues[*first] = alpha * q_star;
            queues[*second] = (1.0 - alpha) * q_star;
        }
    }
    queues
}
