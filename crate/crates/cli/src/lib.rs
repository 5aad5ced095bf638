//! Scenario-driven front end for the riskclimb planner: scenario parsing,
//! plan and sweep runs, synthetic pull-test datasets and re-certification.

pub mod config;
pub mod run;

pub use config::{Scenario, ScenarioConfig};
pub use run::{Exit, PlanDocument};
