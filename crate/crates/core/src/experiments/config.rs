//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "case2"
//! kind = "theorem2"            # lrs-only | theorem1 | theorem2 | corollary | lipschitz
//!
//! [junction]
//! theta = [[1.0]]              # m rows of n turning fractions
//! priorities = [1.0]           # c_i
//! buffer_size = 1.0            # M
//! initial_queues = [0.0]       # q_j at t = 0
//! epsilon = 1.0                # optional buffer scale, default 1
//!
//! [[incoming]]
//! density = 0.2
//! flux = { model = "quadratic", v_free = 1.0, rho_jam = 1.0 }
//!
//! [[outgoing]]
//! density = 0.9
//! flux = { model = "quadratic", v_free = 1.0, rho_jam = 1.0 }
//!
//! [grid]
//! length = 60.0
//! cells = 400
//! cfl = 0.9
//! t_end = 50.0
//! output_times = [10.0, 25.0, 50.0]
//! ```
//!
//! Optional `[corollary]` (`epsilons`, `tau`) and `[lipschitz]` (`trials`,
//! `steps`, `seed`) tables configure those experiments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{FluxModel, FluxShape};
use crate::lrs::JunctionSpec;
use crate::sbj::BufferState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LrsOnly,
    Theorem1,
    Theorem2,
    Corollary,
    Lipschitz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionConfig {
    pub theta: Vec<Vec<f64>>,
    pub priorities: Vec<f64>,
    pub buffer_size: f64,
    pub initial_queues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadConfig {
    pub density: f64,
    pub flux: FluxShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub length: f64,
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
    #[serde(default)]
    pub output_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryConfig {
    pub epsilons: Vec<f64>,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub trials: usize,
    pub steps: Vec<f64>,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            steps: vec![1e-3, 1e-4, 1e-5],
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub junction: JunctionConfig,
    pub incoming: Vec<RoadConfig>,
    pub outgoing: Vec<RoadConfig>,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corollary: Option<CorollaryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzConfig>,
}

/// A validated scenario with the model objects built.
#[derive(Clone, Debug)]
pub struct Setup {
    pub spec: JunctionSpec,
    pub models: Vec<FluxModel>,
    pub rho: Vec<f64>,
    pub queues: Vec<f64>,
    pub epsilon: f64,
    pub length: f64,
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
    pub output_times: Vec<f64>,
}

impl Setup {
    pub fn incoming(&self) -> usize {
        self.spec.incoming()
    }

    pub fn buffer(&self, queues: Vec<f64>, epsilon: f64) -> Result<BufferState> {
        BufferState::new(&self.spec, queues, epsilon)
    }

    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn max_speed(&self) -> f64 {
        self.models
            .iter()
            .map(FluxModel::max_speed)
            .fold(0.0, f64::max)
    }

    pub fn max_flux(&self) -> f64 {
        self.models.iter().map(FluxModel::f_max).fold(0.0, f64::max)
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    cfg.setup()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.junction.epsilon.unwrap_or(1.0)
    }

    /// Validates the scenario against the constraints its experiment needs
    /// and builds the model objects.
    pub fn setup(&self) -> Result<Setup> {
        let spec = JunctionSpec::new(
            self.junction.theta.clone(),
            self.junction.priorities.clone(),
            self.junction.buffer_size,
        )?;
        if self.incoming.len() != spec.incoming() || self.outgoing.len() != spec.outgoing() {
            return Err(Error::Config(format!(
                "theta is {}x{} but the scenario lists {} incoming and {} outgoing roads",
                spec.incoming(),
                spec.outgoing(),
                self.incoming.len(),
                self.outgoing.len()
            )));
        }
        let roads = self.incoming.iter().chain(&self.outgoing);
        let models = roads
            .clone()
            .map(|r| FluxModel::new(r.flux))
            .collect::<Result<Vec<_>>>()?;
        let rho: Vec<f64> = roads.map(|r| r.density).collect();
        for (k, (model, density)) in models.iter().zip(&rho).enumerate() {
            model.check_density(*density)?;
            if *density >= model.rho_jam() {
                return Err(Error::Config(format!(
                    "(RD) violated for road {}: density {density} must stay below rho_jam = {}",
                    k + 1,
                    model.rho_jam()
                )));
            }
        }
        spec.check_admission(&models[..spec.incoming()])?;

        let epsilon = self.epsilon();
        let buffer = BufferState::new(&spec, self.junction.initial_queues.clone(), epsilon)?;

        let needs_positive_theta = matches!(
            self.kind,
            ExperimentKind::Theorem2 | ExperimentKind::Corollary
        );
        if needs_positive_theta {
            if let Some((i, j)) = positions(&self.junction.theta).find(|(i, j)| {
                self.junction.theta[*i][*j] <= 0.0
            }) {
                return Err(Error::Config(format!(
                    "attraction experiments need theta > 0, but theta[{}][{}] = 0",
                    i + 1,
                    j + 1
                )));
            }
            if buffer.total() >= buffer.capacity {
                return Err(Error::Config(format!(
                    "(IQ) violated: initial queues total {} must stay below the buffer size {}",
                    buffer.total(),
                    buffer.capacity
                )));
            }
        }

        let grid = &self.grid;
        if !(grid.length > 0.0) || grid.cells == 0 {
            return Err(Error::Config("grid needs positive length and cells".into()));
        }
        if !(grid.cfl > 0.0 && grid.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", grid.cfl)));
        }
        if !(grid.t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {}", grid.t_end)));
        }
        let setup = Setup {
            spec,
            models,
            rho,
            queues: buffer.q,
            epsilon,
            length: grid.length,
            cells: grid.cells,
            cfl: grid.cfl,
            t_end: grid.t_end,
            output_times: grid.output_times.clone(),
        };
        let horizon = self
            .corollary
            .as_ref()
            .map_or(grid.t_end, |c| c.tau.max(grid.t_end));
        if setup.max_speed() * horizon >= setup.length {
            return Err(Error::Config(format!(
                "road length {} too short: waves travel {} by t = {horizon}",
                setup.length,
                setup.max_speed() * horizon
            )));
        }
        if let Some(t) = grid.output_times.iter().find(|t| !(**t > 0.0 && **t <= grid.t_end)) {
            return Err(Error::Config(format!("output time {t} outside (0, t_end]")));
        }
        Ok(setup)
    }
}

fn positions(theta: &[Vec<f64>]) -> impl Iterator<Item = (usize, usize)> + '_ {
    theta
        .iter()
        .enumerate()
        .flat_map(|(i, row)| (0..row.len()).map(move |j| (i, j)))
}
