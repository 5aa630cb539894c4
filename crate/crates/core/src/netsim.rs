//! Godunov finite-volume evolution of all roads around one buffered junction.
//!
//! Incoming roads cover `[-L, 0]` with the last cell touching the junction;
//! outgoing roads cover `[0, L]` with the first cell touching it. The far end
//! of an incoming road is fed by a ghost cell frozen at the initial density,
//! the far end of an outgoing road lets traffic leave freely.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::FluxModel;
use crate::lrs::{JunctionSpec, LrsSolution};
use crate::riemann::godunov_flux_unchecked;
use crate::sbj::{self, BufferState, NodeFluxes};

/// Tolerance on cell averages leaving `[0, rho_jam]` by round-off.
const RANGE_SLACK: f64 = 1e-12;
const CFL_SLACK: f64 = 1e-12;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Orientation {
    Incoming,
    Outgoing,
}

/// Uniform cell averages on one road.
#[derive(Clone, Debug)]
pub struct RoadGrid {
    pub orientation: Orientation,
    pub length: f64,
    pub rho: Vec<f64>,
    pub model: FluxModel,
    /// State of the ghost cell beyond the far end of an incoming road.
    pub far_state: f64,
}

impl RoadGrid {
    pub fn uniform(
        orientation: Orientation,
        model: FluxModel,
        rho: f64,
        length: f64,
        cells: usize,
    ) -> Result<Self> {
        let rho = model.check_density(rho)?;
        if !(length > 0.0) || cells == 0 {
            return Err(Error::Config(format!(
                "road grid needs positive length and cells, got L = {length}, N = {cells}"
            )));
        }
        Ok(Self {
            orientation,
            length,
            rho: vec![rho; cells],
            model,
            far_state: rho,
        })
    }

    pub fn cells(&self) -> usize {
        self.rho.len()
    }

    pub fn dx(&self) -> f64 {
        self.length / self.rho.len() as f64
    }

    /// Left edge of cell `k`.
    pub fn cell_left(&self, k: usize) -> f64 {
        match self.orientation {
            Orientation::Incoming => -self.length + k as f64 * self.dx(),
            Orientation::Outgoing => k as f64 * self.dx(),
        }
    }

    pub fn cell_center(&self, k: usize) -> f64 {
        self.cell_left(k) + 0.5 * self.dx()
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.dx()
    }

    /// Cell average abutting the junction.
    pub fn trace(&self) -> f64 {
        match self.orientation {
            Orientation::Incoming => self.rho[self.rho.len() - 1],
            Orientation::Outgoing => self.rho[0],
        }
    }

    /// Demand of an incoming road or supply of an outgoing road at its trace.
    pub fn omega(&self) -> f64 {
        match self.orientation {
            Orientation::Incoming => self.model.demand_unchecked(self.trace()),
            Orientation::Outgoing => self.model.supply_unchecked(self.trace()),
        }
    }

    /// Godunov update with the junction flux on the junction side; returns
    /// the flux through the far boundary (into the road for incoming roads,
    /// out of it for outgoing roads).
    fn godunov_step(&mut self, junction_flux: f64, dt: f64) -> f64 {
        let n = self.rho.len();
        let model = &self.model;
        let (far_flux, mut inflow) = match self.orientation {
            Orientation::Incoming => {
                let f = godunov_flux_unchecked(model, self.far_state, self.rho[0]);
                (f, f)
            }
            Orientation::Outgoing => (model.value(self.rho[n - 1]), junction_flux),
        };
        let ratio = dt / self.dx();
        for k in 0..n {
            let outflow = if k + 1 < n {
                godunov_flux_unchecked(model, self.rho[k], self.rho[k + 1])
            } else {
                match self.orientation {
                    Orientation::Incoming => junction_flux,
                    Orientation::Outgoing => far_flux,
                }
            };
            // Interface k + 1 was evaluated from old values; rho[k] is not read again.
            self.rho[k] -= ratio * (outflow - inflow);
            inflow = outflow;
        }
        far_flux
    }
}

/// Density, maximum flux and applied flux at the junction end of a road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryTrace {
    pub rho: f64,
    pub omega: f64,
    pub flux: f64,
}

/// Result of the flux dichotomy check on one road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DichotomyCheck {
    pub road: usize,
    pub omega: f64,
    /// Distance of `omega` from the set `{omega_initial, f_max}`.
    pub deviation: f64,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub dt: f64,
    pub omega: Vec<f64>,
    pub fluxes: NodeFluxes,
}

/// One snapshot row: `(time, road_id, x_center, rho)` with 1-based road ids.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SnapshotRow {
    pub time: f64,
    pub road_id: usize,
    pub x_center: f64,
    pub rho: f64,
}

/// All roads, the buffer and the bookkeeping needed for conservation checks.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub roads: Vec<RoadGrid>,
    pub buffer: BufferState,
    pub time: f64,
    pub spec: JunctionSpec,
    pub last_step: Option<StepRecord>,
    steps: usize,
    initial_mass: f64,
    far_inflow: f64,
    far_outflow: f64,
    max_conservation_error: f64,
}

impl NetworkState {
    /// Riemann data: constant density on every road, incoming roads first.
    pub fn riemann(
        spec: JunctionSpec,
        models: &[FluxModel],
        rho_init: &[f64],
        buffer: BufferState,
        length: f64,
        cells: usize,
    ) -> Result<Self> {
        let m = spec.incoming();
        if models.len() != spec.roads() || rho_init.len() != spec.roads() {
            return Err(Error::Config(format!(
                "expected {} roads, got {} flux models and {} densities",
                spec.roads(),
                models.len(),
                rho_init.len()
            )));
        }
        let roads = models
            .iter()
            .zip(rho_init)
            .enumerate()
            .map(|(k, (model, rho))| {
                let orientation = if k < m {
                    Orientation::Incoming
                } else {
                    Orientation::Outgoing
                };
                RoadGrid::uniform(orientation, model.clone(), *rho, length, cells)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(spec, roads, buffer))
    }

    pub fn from_parts(spec: JunctionSpec, roads: Vec<RoadGrid>, buffer: BufferState) -> Self {
        let initial_mass = roads.iter().map(RoadGrid::mass).sum::<f64>() + buffer.total();
        Self {
            roads,
            buffer,
            time: 0.0,
            spec,
            last_step: None,
            steps: 0,
            initial_mass,
            far_inflow: 0.0,
            far_outflow: 0.0,
            max_conservation_error: 0.0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Vehicles on all roads plus the buffer.
    pub fn total_mass(&self) -> f64 {
        self.roads.iter().map(RoadGrid::mass).sum::<f64>() + self.buffer.total()
    }

    /// Mismatch of the current total against the initial total corrected by
    /// the far-boundary fluxes.
    pub fn conservation_error(&self) -> f64 {
        (self.total_mass() - (self.initial_mass + self.far_inflow - self.far_outflow)).abs()
    }

    /// Largest conservation error seen at the end of any step so far.
    pub fn max_conservation_error(&self) -> f64 {
        self.max_conservation_error
    }

    /// Time step allowed by the CFL number on every road.
    pub fn cfl_dt(&self, cfl: f64) -> f64 {
        self.roads
            .iter()
            .map(|r| cfl * r.dx() / r.model.max_speed())
            .fold(f64::INFINITY, f64::min)
    }

    fn omegas(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.spec.incoming();
        let omega_in = self.roads[..m].iter().map(RoadGrid::omega).collect();
        let omega_out = self.roads[m..].iter().map(RoadGrid::omega).collect();
        (omega_in, omega_out)
    }

    /// Node fluxes the buffer would prescribe for the current traces.
    pub fn current_node_fluxes(&self) -> NodeFluxes {
        let (omega_in, omega_out) = self.omegas();
        sbj::node_fluxes(&self.spec, &self.buffer, &omega_in, &omega_out)
    }

    /// One synchronized step of length at most the CFL and buffer bounds.
    pub fn step(&mut self, cfl: f64) -> Result<f64> {
        self.step_capped(cfl, f64::INFINITY)
    }

    /// Steps until `t_target`, shortening the last step to land on it exactly.
    pub fn advance_to(&mut self, t_target: f64, cfl: f64) -> Result<()> {
        while self.time < t_target {
            let remaining = t_target - self.time;
            self.step_capped(cfl, remaining)?;
            if t_target - self.time < 1e-12 * t_target.max(1.0) {
                self.time = t_target;
            }
        }
        Ok(())
    }

    fn step_capped(&mut self, cfl: f64, max_dt: f64) -> Result<f64> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Config(format!("CFL number must lie in (0, 1], got {cfl}")));
        }
        let m = self.spec.incoming();
        let (omega_in, omega_out) = self.omegas();
        let mut fluxes = sbj::node_fluxes(&self.spec, &self.buffer, &omega_in, &omega_out);
        let dt = self
            .cfl_dt(cfl)
            .min(sbj::stable_dt(&self.spec, &self.buffer, &fluxes))
            .min(max_dt);
        if !(dt > 0.0) {
            return Err(self.invariant(format!("non-positive time step {dt}")));
        }
        for (k, road) in self.roads.iter().enumerate() {
            let courant = dt * road.model.max_speed() / road.dx();
            if courant > 1.0 + CFL_SLACK {
                return Err(self.invariant(format!("CFL number {courant} on road {}", k + 1)));
            }
        }
        sbj::limit_outflows(&self.spec, &self.buffer, &mut fluxes, dt);

        for (i, road) in self.roads[..m].iter_mut().enumerate() {
            self.far_inflow += dt * road.godunov_step(fluxes.f_in[i], dt);
        }
        for (j, road) in self.roads[m..].iter_mut().enumerate() {
            self.far_outflow += dt * road.godunov_step(fluxes.f_out[j], dt);
        }
        self.buffer = sbj::advance_queues(&self.spec, &self.buffer, &fluxes, dt)?;
        self.time += dt;
        self.steps += 1;

        self.check_ranges()?;
        if self.buffer.total() > self.buffer.capacity * (1.0 + 1e-12) {
            return Err(self.invariant(format!(
                "buffer holds {} > capacity {}",
                self.buffer.total(),
                self.buffer.capacity
            )));
        }
        let mut omega = omega_in;
        omega.extend(omega_out);
        self.last_step = Some(StepRecord { dt, omega, fluxes });
        self.max_conservation_error = self.max_conservation_error.max(self.conservation_error());
        Ok(dt)
    }

    fn check_ranges(&mut self) -> Result<()> {
        let time = self.time;
        for (k, road) in self.roads.iter_mut().enumerate() {
            let jam = road.model.rho_jam();
            let slack = RANGE_SLACK * jam;
            for rho in road.rho.iter_mut() {
                if !(*rho >= -slack && *rho <= jam + slack) {
                    return Err(Error::Invariant {
                        time,
                        message: format!("density {rho} leaves [0, {jam}] on road {}", k + 1),
                    });
                }
                *rho = rho.clamp(0.0, jam);
            }
        }
        Ok(())
    }

    fn invariant(&self, message: String) -> Error {
        Error::Invariant {
            time: self.time,
            message,
        }
    }

    /// Trace density, maximum flux and junction flux of every road. Before
    /// the first step the flux is the one the buffer currently prescribes.
    pub fn boundary_traces(&self) -> Vec<BoundaryTrace> {
        let m = self.spec.incoming();
        let fluxes = match &self.last_step {
            Some(rec) => rec.fluxes.clone(),
            None => self.current_node_fluxes(),
        };
        self.roads
            .iter()
            .enumerate()
            .map(|(k, road)| BoundaryTrace {
                rho: road.trace(),
                omega: road.omega(),
                flux: if k < m {
                    fluxes.f_in[k]
                } else {
                    fluxes.f_out[k - m]
                },
            })
            .collect()
    }

    /// Default dichotomy tolerance for road `k`: `2 * max|f'| * dx`.
    pub fn default_dichotomy_tolerance(&self, road: usize) -> f64 {
        let r = &self.roads[road];
        2.0 * r.model.max_speed() * r.dx()
    }

    /// Checks that each road's current `omega` is close to either its initial
    /// value or its maximum flux.
    pub fn lemma1_monitor(&self, omega_initial: &[f64]) -> Vec<DichotomyCheck> {
        self.roads
            .iter()
            .zip(omega_initial)
            .enumerate()
            .map(|(k, (road, w0))| {
                let omega = road.omega();
                let deviation = (omega - w0).abs().min((omega - road.model.f_max()).abs());
                let tolerance = self.default_dichotomy_tolerance(k);
                DichotomyCheck {
                    road: k,
                    omega,
                    deviation,
                    tolerance,
                    holds: deviation <= tolerance,
                }
            })
            .collect()
    }

    /// `sum_roads int |rho_num - exact| dx`, with the exact profile integrated
    /// by 5-point Gauss quadrature per cell. `exact(road, x)` must be defined
    /// on the road's side of the junction.
    pub fn l1_distance_with(&self, exact: impl Fn(usize, f64) -> Result<f64>) -> Result<f64> {
        Ok(self.l1_by_road_with(exact)?.iter().sum())
    }

    pub fn l1_by_road_with(&self, exact: impl Fn(usize, f64) -> Result<f64>) -> Result<Vec<f64>> {
        self.roads
            .iter()
            .enumerate()
            .map(|(k, road)| {
                let half = 0.5 * road.dx();
                let mut total = 0.0;
                for (c, rho) in road.rho.iter().enumerate() {
                    let mid = road.cell_center(c);
                    for (node, weight) in GAUSS5 {
                        let x = mid + half * node;
                        total += weight * half * (rho - exact(k, x)?).abs();
                    }
                }
                Ok(total)
            })
            .collect()
    }

    /// Fails if a wave moving at the fastest characteristic speed could have
    /// reached the far end of some road.
    pub fn check_truncation(&self) -> Result<()> {
        for (k, road) in self.roads.iter().enumerate() {
            let speed = road.model.max_speed();
            if speed * self.time >= road.length {
                return Err(Error::WaveReachedBoundary {
                    road: k,
                    speed,
                    t: self.time,
                    length: road.length,
                });
            }
        }
        Ok(())
    }

    /// L1 distance to the self-similar LRS solution at the current time.
    pub fn l1_distance_to_lrs(&self, sol: &LrsSolution) -> Result<f64> {
        Ok(self.l1_by_road_to_lrs(sol)?.iter().sum())
    }

    pub fn l1_by_road_to_lrs(&self, sol: &LrsSolution) -> Result<Vec<f64>> {
        self.check_truncation()?;
        let t = self.time;
        self.l1_by_road_with(|k, x| sol.evaluate_self_similar(k, t, x))
    }

    pub fn snapshot(&self) -> Vec<SnapshotRow> {
        self.roads
            .iter()
            .enumerate()
            .flat_map(|(k, road)| {
                road.rho.iter().enumerate().map(move |(c, rho)| SnapshotRow {
                    time: self.time,
                    road_id: k + 1,
                    x_center: road.cell_center(c),
                    rho: *rho,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::make_quadratic_flux;
    use crate::lrs::{lrs_solve, well_prepared_queues};

    fn unit() -> FluxModel {
        make_quadratic_flux(1.0, 1.0).unwrap()
    }

    fn network(theta: Vec<Vec<f64>>, rho: &[f64], queues: Vec<f64>, cells: usize) -> NetworkState {
        let m = theta.len();
        let spec = JunctionSpec::new(theta, vec![1.0; m], 1.0).unwrap();
        let buffer = BufferState::new(&spec, queues, 1.0).unwrap();
        let models = vec![unit(); rho.len()];
        NetworkState::riemann(spec, &models, rho, buffer, 10.0, cells).unwrap()
    }

    #[test]
    fn free_equilibrium_is_steady() {
        // 0.16 from the incoming road splits into 0.08 per outgoing road,
        // carried by the free state with f(rho) = 0.08.
        let rho_out = unit().invert(0.08, crate::flux::Regime::Free).unwrap();
        let mut net = network(vec![vec![0.5, 0.5]], &[0.2, rho_out, rho_out], vec![0.0, 0.0], 50);
        let initial: Vec<Vec<f64>> = net.roads.iter().map(|r| r.rho.clone()).collect();
        for _ in 0..100 {
            net.step(0.9).unwrap();
            for (road, init) in net.roads.iter().zip(&initial) {
                for (a, b) in road.rho.iter().zip(init) {
                    assert!((a - b).abs() < 1e-12 * net.steps() as f64);
                }
            }
            assert_eq!(net.buffer.q, vec![0.0, 0.0]);
        }
        assert!(net.max_conservation_error() < 1e-12);
    }

    #[test]
    fn well_prepared_queue_is_stationary() {
        let spec = JunctionSpec::new(vec![vec![1.0]], vec![1.0], 1.0).unwrap();
        let models = vec![unit(), unit()];
        let sol = lrs_solve(&spec, &models, &[0.2, 0.9]).unwrap();
        let q = well_prepared_queues(&sol, &spec);
        let buffer = BufferState::new(&spec, q.clone(), 1.0).unwrap();
        let mut net = NetworkState::riemann(spec, &models, &[0.2, 0.9], buffer, 20.0, 400).unwrap();
        while net.time < 10.0 {
            net.step(0.9).unwrap();
            assert!((net.buffer.q[0] - q[0]).abs() < 1e-10);
            let traces = net.boundary_traces();
            assert!((traces[0].flux - sol.f_in[0]).abs() < 1e-12);
            assert!((traces[1].flux - sol.f_out[0]).abs() < 1e-12);
        }
        assert!(net.max_conservation_error() < 1e-12);
        let l1 = net.l1_distance_to_lrs(&sol).unwrap();
        assert!(l1 < 10.0 * net.roads[0].dx(), "l1 = {l1}");
    }

    #[test]
    fn advance_to_lands_on_target() {
        let mut net = network(vec![vec![1.0]], &[0.3, 0.6], vec![0.0], 40);
        net.advance_to(0.77, 0.5).unwrap();
        assert_eq!(net.time, 0.77);
    }

    #[test]
    fn truncation_guard() {
        let mut net = network(vec![vec![1.0]], &[0.3, 0.6], vec![0.0], 20);
        net.advance_to(10.5, 0.9).unwrap();
        assert!(matches!(
            net.check_truncation(),
            Err(Error::WaveReachedBoundary { .. })
        ));
    }

    #[test]
    fn rejects_bad_cfl() {
        let mut net = network(vec![vec![1.0]], &[0.3, 0.6], vec![0.0], 20);
        assert!(net.step(1.5).is_err());
        assert!(net.step(0.0).is_err());
    }

    #[test]
    fn traces_report_applied_fluxes() {
        let mut net = network(vec![vec![1.0]], &[0.8, 0.2], vec![0.0], 40);
        let t0 = net.boundary_traces();
        assert_eq!(t0[0].rho, 0.8);
        assert_eq!(t0[0].omega, 0.25);
        assert_eq!(t0[0].flux, 0.25);
        net.step(0.9).unwrap();
        let rec = net.last_step.clone().unwrap();
        let t1 = net.boundary_traces();
        assert_eq!(t1[0].flux, rec.fluxes.f_in[0]);
        assert_eq!(t1[1].flux, rec.fluxes.f_out[0]);
    }

    #[test]
    fn densities_stay_admissible_and_dichotomy_holds() {
        let rho = [0.3, 0.7, 0.9, 0.1];
        let mut net = network(vec![vec![0.5, 0.5], vec![0.3, 0.7]], &rho, vec![0.0, 0.0], 100);
        let omega0: Vec<f64> = net.roads.iter().map(RoadGrid::omega).collect();
        for _ in 0..10 {
            net.advance_to(net.time + 0.8, 0.9).unwrap();
            for road in &net.roads {
                assert!(road.rho.iter().all(|r| (0.0..=1.0).contains(r)));
            }
            assert!(net.lemma1_monitor(&omega0).iter().all(|c| c.holds));
        }
        assert!(net.max_conservation_error() < 1e-12);
    }
}
