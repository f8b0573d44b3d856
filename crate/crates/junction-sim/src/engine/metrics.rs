//! Energy accounting and the per-run report.

use crate::core::{Approach, VehicleClass, VehicleId};
use crate::scheduler::CaseTag;

/// Instantaneous power integrand. The quadratic form charges control effort
/// in both directions; the polynomial form models a fuel map and only burns
/// fuel while the engine pushes, so u enters through max(u, 0).
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    HalfUSquared,
    Polynomial(Vec<PolyTerm>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyTerm {
    pub v_pow: u8,
    pub u_pow: u8,
    pub coeff: f64,
}

impl EnergyModel {
    pub fn integrand(&self, v: f64, u: f64) -> f64 {
        match self {
            EnergyModel::HalfUSquared => 0.5 * u * u,
            EnergyModel::Polynomial(terms) => {
                let pushed = u.max(0.0);
                terms
                    .iter()
                    .map(|t| {
                        let uf = if t.u_pow == 0 { 1.0 } else { pushed.powi(t.u_pow as i32) };
                        t.coeff * v.powi(t.v_pow as i32) * uf
                    })
                    .sum()
            }
        }
    }
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel::HalfUSquared
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub approach: Approach,
    pub entered_at: f64,
    /// Merge-zone exit time; None for vehicles still in the system at the end.
    pub exited_at: Option<f64>,
    pub energy: f64,
    pub saturation_count: u32,
    pub min_gap: f64,
    pub frozen: bool,
}

impl VehicleRecord {
    pub fn travel_time(&self) -> Option<f64> {
        self.exited_at.map(|t| t - self.entered_at)
    }
}

/// Final committed crossing slot for one vehicle, kept after it leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleLogEntry {
    pub vehicle: VehicleId,
    pub approach: Approach,
    pub class: VehicleClass,
    pub t_c: f64,
    pub t_m: f64,
    pub v_m: f64,
    pub t_f: f64,
    pub case: CaseTag,
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub vehicle: VehicleId,
    pub class: VehicleClass,
    pub approach: Approach,
    pub mode: &'static str,
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    /// Mean of energy/travel_time over completed post-warmup unfrozen trips.
    pub mean_energy_per_s: f64,
    pub mean_travel_time_s: f64,
    pub rear_end_violations: u32,
    pub lateral_collisions: u32,
    /// Merge-zone exits inside [warmup, horizon].
    pub throughput_veh: u32,
    pub frozen_veh: u32,
    pub spawned_veh: u32,
    pub completed_veh: u32,
    pub halted: bool,
    pub vehicles: Vec<VehicleRecord>,
    pub schedule_log: Vec<ScheduleLogEntry>,
    pub trace: Vec<TraceRow>,
}

impl MetricsReport {
    /// Aggregates from per-vehicle records; counting window and exclusions
    /// are fixed here so every caller reports the same statistics.
    pub(crate) fn finalize(&mut self, warmup: f64) {
        let mut energy = 0.0;
        let mut time = 0.0;
        let mut n = 0u32;
        for r in &self.vehicles {
            if r.frozen || r.entered_at < warmup {
                continue;
            }
            if let Some(tt) = r.travel_time() {
                energy += r.energy;
                time += tt;
                n += 1;
            }
        }
        self.mean_energy_per_s = if time > 0.0 { energy / time } else { 0.0 };
        self.mean_travel_time_s = if n > 0 { time / n as f64 } else { 0.0 };
    }
}
