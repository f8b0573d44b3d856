//! Merging-zone entry arbitration for mixed traffic. Three non-signalized
//! policies with increasing control (none, minor road yields, full
//! first-come-first-served mutual exclusion) plus a fixed-cycle traffic light
//! baseline. Decisions are pure functions of an occupancy snapshot so the
//! engine can evaluate all requesters against consistent state.

use crate::core::{approach_relation, Approach, Relation, Road, VehicleClass, VehicleId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ArbitrationError {
    #[error("signal durations must be positive (green_ns={0}, green_ew={1}, all_red={2})")]
    InvalidCycle(f64, f64, f64),
}

/// Fixed signal timing: green per road separated by all-red clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalCycle {
    pub green_ns: f64,
    pub green_ew: f64,
    pub all_red: f64,
    pub offset: f64,
}

impl SignalCycle {
    pub fn new(green_ns: f64, green_ew: f64, all_red: f64, offset: f64) -> Result<Self, ArbitrationError> {
        if green_ns <= 0.0 || green_ew <= 0.0 || all_red <= 0.0 {
            return Err(ArbitrationError::InvalidCycle(green_ns, green_ew, all_red));
        }
        Ok(Self { green_ns, green_ew, all_red, offset })
    }

    pub fn period(&self) -> f64 {
        self.green_ns + self.green_ew + 2.0 * self.all_red
    }

    pub fn is_green(&self, road: Road, t: f64) -> bool {
        match tlc_phase(t, self) {
            Phase::NsGreen => road == Road::NorthSouth,
            Phase::EwGreen => road == Road::EastWest,
            Phase::AllRed => false,
        }
    }
}

impl Default for SignalCycle {
    fn default() -> Self {
        Self { green_ns: 30.0, green_ew: 30.0, all_red: 3.0, offset: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    NsGreen,
    EwGreen,
    AllRed,
}

/// Phase at time `t`: north-south green, clearance, east-west green, clearance.
pub fn tlc_phase(t: f64, cycle: &SignalCycle) -> Phase {
    let tau = (t - cycle.offset).rem_euclid(cycle.period());
    if tau < cycle.green_ns {
        Phase::NsGreen
    } else if tau < cycle.green_ns + cycle.all_red {
        Phase::AllRed
    } else if tau < cycle.green_ns + cycle.all_red + cycle.green_ew {
        Phase::EwGreen
    } else {
        Phase::AllRed
    }
}

/// Entry policy at the merging zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConflictRule {
    /// Nobody is controlled; collisions are possible and merely counted.
    Ca1Passive,
    /// The major road has priority; the other road yields to it.
    Ca2Partial { major: Road },
    /// Full mutual exclusion of conflicting approaches, first come first served.
    Ca3Full,
    /// Fixed-cycle signal; entry needs green and a clear box.
    Tlc(SignalCycle),
}

/// One vehicle's claim on the merging zone: either measured (already inside,
/// `entry_time <= now`) or predicted for a vehicle still approaching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyWindow {
    pub vehicle: VehicleId,
    pub approach: Approach,
    pub class: VehicleClass,
    pub entry_time: f64,
    pub predicted_exit: f64,
}

impl OccupancyWindow {
    pub fn is_inside(&self, t: f64) -> bool {
        self.entry_time <= t
    }

    pub fn overlaps(&self, entry: f64, exit: f64) -> bool {
        self.entry_time < exit && entry < self.predicted_exit
    }
}

/// Snapshot of current and imminent merging-zone claims.
#[derive(Debug, Clone, Default)]
pub struct MzOccupancy {
    windows: Vec<OccupancyWindow>,
}

impl MzOccupancy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn windows(&self) -> &[OccupancyWindow] {
        &self.windows
    }

    pub fn insert(&mut self, w: OccupancyWindow) {
        self.remove(w.vehicle);
        self.windows.push(w);
    }

    pub fn remove(&mut self, vehicle: VehicleId) {
        self.windows.retain(|w| w.vehicle != vehicle);
    }

    pub fn refresh_exit(&mut self, vehicle: VehicleId, predicted_exit: f64) {
        if let Some(w) = self.windows.iter_mut().find(|w| w.vehicle == vehicle) {
            w.predicted_exit = predicted_exit;
        }
    }

    fn conflicting_inside(&self, approach: Approach, t: f64) -> bool {
        self.windows.iter().any(|w| {
            w.is_inside(t) && approach_relation(approach, w.approach) == Relation::Conflicting
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Proceed,
    Yield,
}

/// A vehicle asking to enter the merging zone, with the transit window it
/// would occupy if allowed to go now and its crossing-queue seniority.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MzRequest {
    pub vehicle: VehicleId,
    pub approach: Approach,
    pub entry_time: f64,
    pub exit_time: f64,
    pub queue_index: usize,
}

/// Entry decision for `req` at time `t`. `peers` are the other vehicles
/// requesting entry in the same step; only the FCFS policy consults them.
pub fn request_mz_entry(
    req: &MzRequest,
    occupancy: &MzOccupancy,
    rule: &ConflictRule,
    t: f64,
    peers: &[MzRequest],
) -> Decision {
    match rule {
        ConflictRule::Ca1Passive => Decision::Proceed,
        ConflictRule::Ca2Partial { major } => {
            if req.approach.road() == *major {
                return Decision::Proceed;
            }
            let blocked = occupancy.windows().iter().any(|w| {
                w.approach.road() == *major
                    && approach_relation(req.approach, w.approach) == Relation::Conflicting
                    && w.overlaps(req.entry_time, req.exit_time)
            });
            if blocked {
                Decision::Yield
            } else {
                Decision::Proceed
            }
        }
        ConflictRule::Ca3Full => {
            if occupancy.conflicting_inside(req.approach, t) {
                return Decision::Yield;
            }
            let senior_waiting = peers.iter().any(|p| {
                p.vehicle != req.vehicle
                    && p.queue_index < req.queue_index
                    && approach_relation(req.approach, p.approach) == Relation::Conflicting
            });
            if senior_waiting {
                Decision::Yield
            } else {
                Decision::Proceed
            }
        }
        ConflictRule::Tlc(cycle) => {
            if cycle.is_green(req.approach.road(), t) && !occupancy.conflicting_inside(req.approach, t)
            {
                Decision::Proceed
            } else {
                Decision::Yield
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideDirective {
    /// No human driver threatens the crossing: keep the scheduled plan.
    KeepPlan,
    /// Abandon the constant-speed crossing and obey the entry policy.
    Obey(Decision),
}

/// A CAV reaching its slot checks for human-driven vehicles inside or about
/// to cross the zone on a conflicting route. Only then does it drop its
/// scheduled crossing and defer to the shared entry policy; opposite-road
/// traffic can never collide with it and never triggers the override.
pub fn cav_mz_override(
    req: &MzRequest,
    occupancy: &MzOccupancy,
    rule: &ConflictRule,
    t: f64,
    peers: &[MzRequest],
) -> OverrideDirective {
    let human_threat = occupancy.windows().iter().any(|w| {
        w.class == VehicleClass::Human
            && approach_relation(req.approach, w.approach) == Relation::Conflicting
            && w.overlaps(req.entry_time, req.exit_time)
    });
    if human_threat {
        OverrideDirective::Obey(request_mz_entry(req, occupancy, rule, t, peers))
    } else {
        OverrideDirective::KeepPlan
    }
}
