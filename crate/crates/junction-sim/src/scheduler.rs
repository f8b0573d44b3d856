//! First-come-first-served crossing scheduler. Vehicles joining the control
//! zone enqueue in entry order; each CAV is committed a merging-zone arrival
//! time no earlier than its kinematic lower bound, its lane predecessor's
//! arrival plus a headway term, and the guarded exit of every conflicting
//! vehicle already queued. Human-driven vehicles participate through
//! constant-speed estimates that are re-evaluated when their speed drifts.

use crate::core::{approach_relation, mz_exit_time, Approach, Relation, VehicleClass, VehicleId};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("vehicle {0} is not in the crossing queue")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} is already enqueued")]
    DuplicateVehicle(VehicleId),
    #[error("lane predecessor {0} has no committed record or estimate yet")]
    PredecessorUnscheduled(VehicleId),
    #[error("cannot extrapolate a crossing time at speed {0} m/s")]
    EstimateUnavailable(f64),
}

/// How a vehicle's slot was constrained, named for the relation of the
/// immediately preceding queue entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    First,
    ParallelOrOpposite,
    SameLane,
    Conflicting,
    EstimatedPredecessor,
}

impl CaseTag {
    pub fn label(self) -> &'static str {
        match self {
            CaseTag::First => "first",
            CaseTag::ParallelOrOpposite => "parallel_or_opposite",
            CaseTag::SameLane => "same_lane",
            CaseTag::Conflicting => "conflicting",
            CaseTag::EstimatedPredecessor => "estimated_pred",
        }
    }
}

/// Committed crossing slot. For CAVs the values come from the assignment
/// recursion and the solved plan; for human drivers they are constant-speed
/// extrapolations (`estimated` set) subject to re-evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalTimeRecord {
    pub vehicle: VehicleId,
    pub t_c: f64,
    pub t_m: f64,
    pub v_m: f64,
    pub t_f: f64,
    pub case_tag: CaseTag,
    pub estimated: bool,
}

/// One queue position: identity is fixed at CZ entry, the record may lag
/// behind it (a stopped human yields no estimate until it moves).
#[derive(Debug, Clone, Copy)]
pub struct QueueSlot {
    pub vehicle: VehicleId,
    pub approach: Approach,
    pub class: VehicleClass,
    pub record: Option<TerminalTimeRecord>,
}

/// Earliest merging-zone arrival reachable from `(t0, v0)` over distance `l`
/// under the acceleration cap: accelerate at `u_max` and, if the speed limit
/// is reached on the way, cruise the remainder at `v_max`.
pub fn lower_bound_tc(t0: f64, v0: f64, l: f64, v_max: f64, u_max: f64) -> f64 {
    let v_term = (2.0 * l * u_max + v0 * v0).sqrt();
    if v_term > v_max {
        t0 + l / v_max + (v_max - v0) * (v_max - v0) / (2.0 * u_max * v_max)
    } else {
        t0 + (v_term - v0) / u_max
    }
}

/// Constant-speed extrapolation of a human driver's merging-zone arrival,
/// observed at time `t_obs` at position `p` moving at `v`.
pub fn estimate_noncav_exit(t_obs: f64, p: f64, v: f64, cz_length: f64) -> Result<f64, ScheduleError> {
    if v <= 0.0 || !v.is_finite() {
        return Err(ScheduleError::EstimateUnavailable(v));
    }
    Ok(t_obs + (cz_length - p) / v)
}

/// FCFS queue of crossing slots with the spacing parameters baked in.
#[derive(Debug, Clone)]
pub struct CrossingQueue {
    slots: Vec<QueueSlot>,
    min_gap: f64,
    mz_length: f64,
    /// Small buffer added after a conflicting exit so back-to-back windows
    /// cannot be collapsed into overlap by integration granularity.
    guard: f64,
}

impl CrossingQueue {
    pub fn new(min_gap: f64, mz_length: f64, guard: f64) -> Self {
        Self { slots: Vec::new(), min_gap, mz_length, guard }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[QueueSlot] {
        &self.slots
    }

    pub fn position(&self, vehicle: VehicleId) -> Option<usize> {
        self.slots.iter().position(|s| s.vehicle == vehicle)
    }

    pub fn get(&self, vehicle: VehicleId) -> Option<&QueueSlot> {
        self.slots.iter().find(|s| s.vehicle == vehicle)
    }

    /// Appends a vehicle at the queue tail at CZ entry. Simultaneous entries
    /// are ordered by the caller before enqueueing.
    pub fn enqueue(
        &mut self,
        vehicle: VehicleId,
        approach: Approach,
        class: VehicleClass,
    ) -> Result<(), ScheduleError> {
        if self.position(vehicle).is_some() {
            return Err(ScheduleError::DuplicateVehicle(vehicle));
        }
        self.slots.push(QueueSlot { vehicle, approach, class, record: None });
        Ok(())
    }

    /// Stores or replaces the record for an enqueued vehicle.
    pub fn commit(&mut self, record: TerminalTimeRecord) -> Result<(), ScheduleError> {
        let idx = self
            .position(record.vehicle)
            .ok_or(ScheduleError::UnknownVehicle(record.vehicle))?;
        self.slots[idx].record = Some(record);
        Ok(())
    }

    /// Drops a vehicle (merging-zone exit, or a despawn before scheduling).
    pub fn remove(&mut self, vehicle: VehicleId) {
        self.slots.retain(|s| s.vehicle != vehicle);
    }

    /// Drops the record but keeps the slot. A stopped or disabled vehicle
    /// stops claiming a crossing window yet still blocks same-lane
    /// successors from being assigned past it.
    pub fn clear_record(&mut self, vehicle: VehicleId) -> Result<(), ScheduleError> {
        let idx = self.position(vehicle).ok_or(ScheduleError::UnknownVehicle(vehicle))?;
        self.slots[idx].record = None;
        Ok(())
    }

    /// Crossing-slot recursion for an enqueued vehicle with kinematic lower
    /// bound `t_c`. The committed time is the max of:
    ///   - `t_c` itself,
    ///   - the previous queue entry's arrival (keeps FCFS order),
    ///   - the nearest same-lane predecessor's arrival plus the headway
    ///     `min_gap / v_m` needed at its crossing speed,
    ///   - every conflicting prior's guarded exit time (keeps merging-zone
    ///     windows of crossing routes disjoint pairwise, not just for
    ///     adjacent queue entries).
    /// A same-lane predecessor without a record blocks assignment; an
    /// unscheduled conflicting prior is skipped here and held off by the
    /// entry arbitration instead.
    pub fn assign_terminal_time(
        &self,
        vehicle: VehicleId,
        t_c: f64,
    ) -> Result<(f64, CaseTag), ScheduleError> {
        let idx = self.position(vehicle).ok_or(ScheduleError::UnknownVehicle(vehicle))?;
        let slot = &self.slots[idx];
        let priors = &self.slots[..idx];
        let Some(prev) = priors.last() else {
            return Ok((t_c, CaseTag::First));
        };

        let tag = if prev.record.map(|r| r.estimated).unwrap_or(prev.class == VehicleClass::Human)
        {
            CaseTag::EstimatedPredecessor
        } else {
            match approach_relation(slot.approach, prev.approach) {
                Relation::SameLaneAhead => CaseTag::SameLane,
                Relation::Conflicting => CaseTag::Conflicting,
                Relation::Opposite | Relation::SameRoadOtherLane => CaseTag::ParallelOrOpposite,
            }
        };

        let mut t_m = t_c;
        if let Some(r) = prev.record {
            t_m = t_m.max(r.t_m);
        }
        let lane_pred = priors.iter().rev().find(|s| s.approach == slot.approach);
        if let Some(k) = lane_pred {
            match k.record {
                Some(r) => t_m = t_m.max(r.t_m + self.min_gap / r.v_m),
                None => return Err(ScheduleError::PredecessorUnscheduled(k.vehicle)),
            }
        }
        for j in priors {
            if approach_relation(slot.approach, j.approach) == Relation::Conflicting {
                if let Some(r) = j.record {
                    t_m = t_m.max(r.t_f + self.guard);
                }
            }
        }
        Ok((t_m, tag))
    }

    /// Builds and stores a human driver's provisional record from observed
    /// motion. Fails while the driver is (near) standstill.
    pub fn commit_estimate(
        &mut self,
        vehicle: VehicleId,
        t_obs: f64,
        p: f64,
        v: f64,
        cz_length: f64,
    ) -> Result<TerminalTimeRecord, ScheduleError> {
        let t_m = estimate_noncav_exit(t_obs, p, v, cz_length)?;
        let t_f = mz_exit_time(t_m, v, self.mz_length)
            .map_err(|_| ScheduleError::EstimateUnavailable(v))?;
        let record = TerminalTimeRecord {
            vehicle,
            t_c: t_m,
            t_m,
            v_m: v,
            t_f,
            case_tag: CaseTag::EstimatedPredecessor,
            estimated: true,
        };
        self.commit(record)?;
        Ok(record)
    }

    /// Vehicles queued after `vehicle` whose committed slots must be
    /// re-evaluated when its record changes, in queue order.
    pub fn successors_of(&self, vehicle: VehicleId) -> Vec<VehicleId> {
        match self.position(vehicle) {
            Some(idx) => self.slots[idx + 1..]
                .iter()
                .filter(|s| s.record.is_some())
                .map(|s| s.vehicle)
                .collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DELTA: f64 = 10.0;
    const MZ: f64 = 30.0;
    const GUARD: f64 = 0.05;

    fn queue() -> CrossingQueue {
        CrossingQueue::new(DELTA, MZ, GUARD)
    }

    fn cav_record(id: u32, t_c: f64, t_m: f64, v_m: f64) -> TerminalTimeRecord {
        TerminalTimeRecord {
            vehicle: VehicleId(id),
            t_c,
            t_m,
            v_m,
            t_f: t_m + MZ / v_m,
            case_tag: CaseTag::First,
            estimated: false,
        }
    }

    fn seed(q: &mut CrossingQueue, id: u32, approach: Approach, t_m: f64, v_m: f64) {
        q.enqueue(VehicleId(id), approach, VehicleClass::Cav).unwrap();
        q.commit(cav_record(id, 0.0, t_m, v_m)).unwrap();
    }

    #[test]
    fn lower_bound_keeps_accelerating_when_limit_stays_out_of_reach() {
        assert_relative_eq!(lower_bound_tc(0.0, 10.0, 400.0, 60.0, 3.0), 40.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn lower_bound_cruises_after_hitting_the_speed_limit() {
        assert_relative_eq!(
            lower_bound_tc(0.0, 10.0, 400.0, 30.0, 3.0),
            400.0 / 30.0 + 400.0 / 180.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lower_bound_at_the_limit_is_pure_cruise() {
        assert_relative_eq!(lower_bound_tc(5.0, 13.0, 400.0, 13.0, 3.0), 5.0 + 400.0 / 13.0, max_relative = 1e-12);
    }

    #[test]
    fn estimate_extrapolates_at_constant_speed() {
        assert_relative_eq!(estimate_noncav_exit(2.0, 20.0, 10.0, 400.0).unwrap(), 40.0, max_relative = 1e-12);
        assert_relative_eq!(estimate_noncav_exit(7.0, 400.0, 9.0, 400.0).unwrap(), 7.0, max_relative = 1e-12);
        assert_relative_eq!(estimate_noncav_exit(0.0, 0.0, 20.0, 400.0).unwrap(), 20.0, max_relative = 1e-12);
        assert!(matches!(
            estimate_noncav_exit(0.0, 100.0, 0.0, 400.0),
            Err(ScheduleError::EstimateUnavailable(_))
        ));
    }

    #[test]
    fn first_vehicle_gets_its_lower_bound() {
        let mut q = queue();
        q.enqueue(VehicleId(1), Approach::North, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(1), 40.0 / 3.0).unwrap();
        assert_relative_eq!(t_m, 40.0 / 3.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::First);
    }

    #[test]
    fn lane_predecessor_adds_headway_at_its_crossing_speed() {
        let mut q = queue();
        seed(&mut q, 1, Approach::North, 40.0, 10.0);
        q.enqueue(VehicleId(2), Approach::North, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(2), 38.0).unwrap();
        assert_relative_eq!(t_m, 41.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::SameLane);
    }

    #[test]
    fn conflicting_predecessor_must_clear_the_zone_first() {
        let mut q = queue();
        seed(&mut q, 1, Approach::East, 40.0, 10.0);
        q.enqueue(VehicleId(2), Approach::North, VehicleClass::Cav).unwrap();
        // guarded exit 43.05 loses to the later lower bound
        let (t_m, tag) = q.assign_terminal_time(VehicleId(2), 45.0).unwrap();
        assert_relative_eq!(t_m, 45.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::Conflicting);
        // and binds when the lower bound is early
        let (t_m, _) = q.assign_terminal_time(VehicleId(2), 30.0).unwrap();
        assert_relative_eq!(t_m, 43.0 + GUARD, max_relative = 1e-12);
    }

    #[test]
    fn opposite_predecessor_only_holds_queue_order() {
        let mut q = queue();
        seed(&mut q, 1, Approach::North, 38.0, 10.0);
        q.enqueue(VehicleId(2), Approach::South, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(2), 36.0).unwrap();
        assert_relative_eq!(t_m, 38.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::ParallelOrOpposite);
    }

    #[test]
    fn conflicting_priors_bind_past_an_intervening_vehicle() {
        // the entry immediately ahead does not conflict, but an earlier one
        // does and its window still forces the wait
        let mut q = queue();
        seed(&mut q, 1, Approach::East, 40.0, 3.0); // exits at 50
        seed(&mut q, 2, Approach::South, 44.0, 10.0);
        q.enqueue(VehicleId(3), Approach::North, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(3), 30.0).unwrap();
        assert_relative_eq!(t_m, 50.0 + GUARD, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::ParallelOrOpposite);
    }

    #[test]
    fn unscheduled_lane_predecessor_blocks_assignment() {
        let mut q = queue();
        q.enqueue(VehicleId(1), Approach::North, VehicleClass::Human).unwrap();
        q.enqueue(VehicleId(2), Approach::North, VehicleClass::Cav).unwrap();
        assert_eq!(
            q.assign_terminal_time(VehicleId(2), 20.0),
            Err(ScheduleError::PredecessorUnscheduled(VehicleId(1)))
        );
        // stalled conflicting priors are skipped; entry arbitration covers them
        q.enqueue(VehicleId(3), Approach::East, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(3), 20.0).unwrap();
        assert_relative_eq!(t_m, 20.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::Conflicting);
    }

    #[test]
    fn estimates_enter_the_recursion_like_records() {
        let mut q = queue();
        q.enqueue(VehicleId(1), Approach::North, VehicleClass::Human).unwrap();
        let rec = q.commit_estimate(VehicleId(1), 2.0, 20.0, 10.0, 400.0).unwrap();
        assert_relative_eq!(rec.t_m, 40.0, max_relative = 1e-12);
        assert_relative_eq!(rec.t_f, 43.0, max_relative = 1e-12);
        assert!(rec.estimated);
        q.enqueue(VehicleId(2), Approach::North, VehicleClass::Cav).unwrap();
        let (t_m, tag) = q.assign_terminal_time(VehicleId(2), 22.0).unwrap();
        assert_relative_eq!(t_m, 41.0, max_relative = 1e-12);
        assert_eq!(tag, CaseTag::EstimatedPredecessor);
    }

    #[test]
    fn exits_free_their_slots() {
        let mut q = queue();
        seed(&mut q, 1, Approach::East, 40.0, 10.0);
        seed(&mut q, 2, Approach::North, 43.05, 10.0);
        q.remove(VehicleId(1));
        assert_eq!(q.len(), 1);
        assert_eq!(q.position(VehicleId(2)), Some(0));
        assert_eq!(q.successors_of(VehicleId(2)), vec![]);
    }

    #[test]
    fn clearing_a_record_turns_the_slot_back_into_a_pending_block() {
        let mut q = queue();
        seed(&mut q, 1, Approach::North, 40.0, 10.0);
        q.enqueue(VehicleId(2), Approach::North, VehicleClass::Cav).unwrap();
        assert!(q.assign_terminal_time(VehicleId(2), 20.0).is_ok());
        q.clear_record(VehicleId(1)).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(
            q.assign_terminal_time(VehicleId(2), 20.0),
            Err(ScheduleError::PredecessorUnscheduled(VehicleId(1)))
        );
    }

    proptest! {
        // sequentially assigned queues keep crossing order, lane headways and
        // pairwise-disjoint conflict windows no matter the arrival pattern
        #[test]
        fn assigned_slots_never_overlap(picks in proptest::collection::vec((0usize..4, 0.0f64..20.0, 2.0f64..13.0), 2..24)) {
            let mut q = queue();
            let mut t_c = 15.0;
            for (i, (ap, dt, v_m)) in picks.iter().enumerate() {
                let id = VehicleId(i as u32);
                let approach = crate::core::APPROACHES[*ap];
                t_c += dt;
                q.enqueue(id, approach, VehicleClass::Cav).unwrap();
                let (t_m, tag) = q.assign_terminal_time(id, t_c).unwrap();
                prop_assert!(t_m >= t_c);
                if i == 0 { prop_assert_eq!(tag, CaseTag::First); }
                q.commit(TerminalTimeRecord {
                    vehicle: id, t_c, t_m, v_m: *v_m, t_f: t_m + MZ / v_m,
                    case_tag: tag, estimated: false,
                }).unwrap();
            }
            let recs: Vec<_> = q.slots().iter().map(|s| (s.approach, s.record.unwrap())).collect();
            for w in recs.windows(2) {
                prop_assert!(w[1].1.t_m >= w[0].1.t_m, "queue order broken");
            }
            for (i, (ap_i, r_i)) in recs.iter().enumerate() {
                for (ap_j, r_j) in recs.iter().skip(i + 1) {
                    match approach_relation(*ap_j, *ap_i) {
                        Relation::SameLaneAhead =>
                            prop_assert!(r_j.t_m - r_i.t_m >= DELTA / r_i.v_m - 1e-9),
                        Relation::Conflicting =>
                            prop_assert!(r_j.t_m >= r_i.t_f, "windows overlap: {:?} {:?}", r_i, r_j),
                        _ => {}
                    }
                }
            }
        }
    }
}
