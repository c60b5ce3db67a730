//! Event-driven simulator and analytic engine for massive machine-type random
//! access in an LTE cell.
//!
//! Modules, from the bottom up: [`kernel`] (clock, event queue, random
//! streams), [`traffic`], [`rach`], [`energy`], [`cobalt`], [`analytic`],
//! then [`scenario`], [`sim`], [`report`] and [`sweep`] for the outer surface.

pub mod analytic;
pub mod cobalt;
pub mod energy;
pub mod kernel;
pub mod rach;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod traffic;

pub use report::{emit_report, Format, MetricsReport};
pub use scenario::{load_scenario, parse_scenario, Scenario};
pub use sim::{SimError, Simulation};
