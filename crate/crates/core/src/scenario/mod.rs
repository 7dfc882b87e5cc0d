//! Scenario harness: seeded traffic and pedestrians, right-of-way
//! arbitration, the overhead sensor, and the closed-loop runner.

pub mod agents;
pub mod arbiter;
pub mod controller;
pub mod localization;
pub mod routes;
mod runner;
pub mod smart_circle;
pub mod spec;

pub use controller::{ControlOutput, Controller, Frame, GuidanceController, ZeroController};
pub use runner::{run_scenario, Scenario, SPAWN_STREAM};
pub use spec::{ScenarioKind, ScenarioSpec};

use thiserror::Error;

use crate::guidance::RouteError;
use crate::map_ingest::MapError;
use crate::ndt::NdtError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("map element not found: {0}")]
    MissingElement(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Ndt(#[from] NdtError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad document: {0}")]
    Json(#[from] serde_json::Error),
    /// The external controller went away mid-run.
    #[error("controller disconnected: {0}")]
    Disconnected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}
