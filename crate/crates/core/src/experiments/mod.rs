//! Scenario files, experiment drivers and report output.

pub mod config;
pub mod report;
pub mod runs;

pub use config::{parse_scenario, ExperimentKind, LipschitzConfig, ScenarioConfig, Setup};
pub use report::{write_report, ExperimentReport, Table, TimeSample, Verdict};
pub use runs::{
    bundled_scenarios_dir, run_corollary, run_lipschitz, run_lrs, run_suite, run_theorem1,
    run_theorem2, simulate, simulate_setup,
    RunOptions, SimulationPlan, SimulationRun,
};
