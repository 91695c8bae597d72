//! Simulation core for a sensor-driven greenhouse controller.

pub mod config;
pub mod control;
pub mod pipeline;
pub mod plant;
pub mod predictor;
pub mod reliability;
pub mod resources;
pub mod rng;
pub mod sensing;
pub mod sim;
pub mod telemetry;
pub mod types;
