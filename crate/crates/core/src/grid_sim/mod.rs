//! Phasor-domain simulation of a PLL-synchronized current source on an
//! inductive network with scripted faults and flux-decay generators.
//!
//! The network is quasi-static at nominal frequency, so the PCC voltage is
//! `E + Z·I` for the ground-truth reduction `(E, Z)` at every instant.

pub mod network;
pub mod scenario;
pub mod sim;

use thiserror::Error;

use crate::stability_control::ControlError;
use crate::te_estimator::EstimatorError;

pub use network::{
    max_outage_reactance, thevenin_reduce, Branch, ClearingAction, FaultEvent,
    FluxDecayGenParams, Network, Reduction, Source, SourceKind, Topology,
};
pub use scenario::{builtin_scenarios, builtin_source, BuiltinScenarios, ConfigError, Scenario};
pub use sim::{
    gate_config, gate_x_max, run_scenario, ConverterModel, FaultWindow, GenState, IssuedCommand,
    ScenarioRun, SimState, Simulator, StateLogRow, TruthSample,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("the PCC has no path to any source or ground")]
    DisconnectedPcc,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("no pre-fault operating point exists for the converter command")]
    NoOperatingPoint,
    #[error("invalid simulation step {0} s (must lie in (0, 1e-4])")]
    InvalidStep(f64),
    #[error("simulation diverged at t = {0} s")]
    NonFinite(f64),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Control(#[from] ControlError),
}
