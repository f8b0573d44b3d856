//! Scenario assembly and the fixed-step run loop.

mod arrivals;
mod metrics;
mod world;

pub use arrivals::{generate_arrivals, Arrival};
pub use metrics::{
    EnergyModel, MetricsReport, PolyTerm, ScheduleLogEntry, TraceRow, VehicleRecord,
};

use thiserror::Error;

use crate::arbitration::ConflictRule;
use crate::cav::ObjectiveWeights;
use crate::core::{ConstraintBounds, IntersectionGeometry, Road};
use crate::wiedemann::WiedemannParams;

use world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CavFollower {
    /// Energy-optimal tracking of the predecessor at the configured gap.
    OptimalAf,
    /// Human car-following model behind human leaders, plans otherwise.
    Wiedemann,
    /// Plans only; no reaction to the vehicle ahead.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionResponse {
    /// Colliding vehicles stop in place and keep blocking their lane.
    Freeze,
    /// The run stops at the end of the step that detected contact.
    Halt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub geometry: IntersectionGeometry,
    pub bounds: ConstraintBounds,
    pub weights: ObjectiveWeights,
    pub wiedemann: WiedemannParams,
    pub rule: ConflictRule,
    pub cav_follower: CavFollower,
    /// Spacing the scheduler and the adaptive follower both hold (m).
    pub min_gap: f64,
    /// Gap at which a CAV latches onto its predecessor (m).
    pub engage_gap: f64,
    /// Fraction of arrivals that are CAVs.
    pub penetration: f64,
    /// Arrival rate per approach lane (veh/h).
    pub flow_rate: f64,
    pub horizon: f64,
    /// Trips starting before this are excluded from aggregate means (s).
    pub warmup: f64,
    pub dt: f64,
    pub seed: u64,
    pub initial_speed_range: (f64, f64),
    pub energy_model: EnergyModel,
    pub collision_response: CollisionResponse,
    pub record_trace: bool,
    /// Fixed entry list replacing the stochastic stream when set.
    pub scripted_arrivals: Option<Vec<Arrival>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            geometry: IntersectionGeometry { cz_length: 400.0, mz_length: 30.0 },
            bounds: ConstraintBounds { v_min: 0.0, v_max: 13.0, u_min: -6.0, u_max: 3.0 },
            weights: ObjectiveWeights::default(),
            wiedemann: WiedemannParams::default(),
            rule: ConflictRule::Ca2Partial { major: Road::NorthSouth },
            cav_follower: CavFollower::OptimalAf,
            min_gap: 10.0,
            engage_gap: 10.0,
            penetration: 1.0,
            flow_rate: 700.0,
            horizon: 1800.0,
            warmup: 300.0,
            dt: 0.05,
            seed: 1,
            initial_speed_range: (10.9, 11.1),
            energy_model: EnergyModel::default(),
            collision_response: CollisionResponse::Freeze,
            record_trace: false,
            scripted_arrivals: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("time step must be in (0, 0.5], got {0}")]
    InvalidTimeStep(f64),
    #[error("penetration must be in [0, 1], got {0}")]
    InvalidPenetration(f64),
    #[error("flow rate must be positive and finite, got {0}")]
    InvalidFlowRate(f64),
    #[error("horizon must be nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error("warmup {0} does not fit inside horizon {1}")]
    InvalidWarmup(f64, f64),
    #[error("initial speeds must satisfy 0 <= lo <= hi <= v_max, got ({0}, {1})")]
    InvalidSpeedRange(f64, f64),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("geometry must satisfy 0 < mz_length < cz_length, got ({0}, {1})")]
    InvalidGeometry(f64, f64),
    #[error("speed bounds must satisfy 0 <= v_min < v_max, got [{0}, {1}]")]
    InvalidSpeedBounds(f64, f64),
    #[error("accel bounds must satisfy u_min < 0 < u_max, got [{0}, {1}]")]
    InvalidAccelBounds(f64, f64),
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let g = &self.geometry;
        if !(g.mz_length > 0.0 && g.cz_length > g.mz_length) {
            return Err(EngineError::InvalidGeometry(g.cz_length, g.mz_length));
        }
        let b = &self.bounds;
        if !(b.v_min >= 0.0 && b.v_max > b.v_min) {
            return Err(EngineError::InvalidSpeedBounds(b.v_min, b.v_max));
        }
        if !(b.u_min < 0.0 && b.u_max > 0.0) {
            return Err(EngineError::InvalidAccelBounds(b.u_min, b.u_max));
        }
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return Err(EngineError::InvalidTimeStep(self.dt));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(EngineError::InvalidPenetration(self.penetration));
        }
        if !(self.flow_rate > 0.0 && self.flow_rate.is_finite()) {
            return Err(EngineError::InvalidFlowRate(self.flow_rate));
        }
        if !(self.horizon >= 0.0) {
            return Err(EngineError::InvalidHorizon(self.horizon));
        }
        if self.warmup < 0.0 || self.warmup > self.horizon {
            return Err(EngineError::InvalidWarmup(self.warmup, self.horizon));
        }
        let (lo, hi) = self.initial_speed_range;
        if !(0.0 <= lo && lo <= hi && hi <= b.v_max) {
            return Err(EngineError::InvalidSpeedRange(lo, hi));
        }
        for (name, value) in [
            ("min_gap", self.min_gap),
            ("engage_gap", self.engage_gap),
            ("accel_weight", self.weights.accel_weight),
            ("gap_weight", self.weights.gap_weight),
            ("effort_scale", self.weights.effort_scale),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EngineError::NonPositive(name, value));
            }
        }
        Ok(())
    }
}

/// Runs one scenario to its horizon and returns the aggregated report.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, EngineError> {
    cfg.validate()?;
    let mut world = World::new(cfg);
    let steps = ((cfg.horizon / cfg.dt) - 1e-9).ceil().max(0.0) as u64;
    for k in 0..steps {
        let t0 = k as f64 * cfg.dt;
        world.step(t0, t0 + cfg.dt);
        if world.halted() {
            break;
        }
    }
    Ok(world.into_report())
}
