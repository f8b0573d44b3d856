//! Microscopic simulator of one signal-free intersection shared by
//! optimal-control CAVs and human car-following drivers. Vehicles travel a
//! control zone toward a conflict-point merging zone; CAVs receive crossing
//! slots from a decentralized first-come-first-served scheduler and follow
//! closed-form energy-optimal trajectories, while human drivers follow a
//! psychophysical car-following model and are arbitrated at the stop bar.

pub mod arbitration;
pub mod cav;
pub mod config;
pub mod core;
pub mod engine;
pub mod harness;
pub mod scheduler;
pub mod wiedemann;

pub use crate::core::{
    approach_relation, classify_relation, gap, mz_exit_time, Approach, ConstraintBounds,
    CoreError, IntersectionGeometry, Relation, Road, Route, VehicleClass, VehicleId,
    VehicleState, APPROACHES,
};
pub use crate::engine::{
    run_scenario, Arrival, CavFollower, CollisionResponse, EnergyModel, EngineError,
    MetricsReport, PolyTerm, ScenarioConfig, ScheduleLogEntry, TraceRow, VehicleRecord,
};
