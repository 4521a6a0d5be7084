//! Scenario generation, experiments, persistence and charts.

pub mod charts;
pub mod dynamics;
pub mod experiments;
pub mod records;
pub mod scenario;
pub mod verify;
