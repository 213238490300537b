//! Grid synchronization toolkit for grid-following converters.

pub mod core_types;
pub mod pll_dynamics;
pub mod stability_control;
pub mod te_estimator;
pub mod grid_sim;
pub mod scenario_runner;
