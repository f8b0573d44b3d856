//! Fixed-step deterministic world. Each step: admit due arrivals, refresh
//! schedule records against observed motion, decide every control from the
//! start-of-step snapshot, integrate, then settle merging-zone entries and
//! exits, collisions and despawns in exact interpolated event order.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arbitration::{
    cav_mz_override, request_mz_entry, ConflictRule, Decision, MzOccupancy, MzRequest,
    OccupancyWindow, OverrideDirective, SignalCycle,
};
use crate::cav::{
    clamp_controls, min_feasible_horizon, solve_af, solve_fd, transition_mode, AfCoefficients,
    CavMode, FdCoefficients, PredecessorAnchor,
};
use crate::core::{approach_relation, Approach, Relation, Road, VehicleClass, VehicleId};
use crate::scheduler::{lower_bound_tc, CrossingQueue, TerminalTimeRecord};
use crate::wiedemann::{dither, follow_accel, sample_driver, stopping_accel};

use super::arrivals::{generate_arrivals, Arrival};
use super::metrics::{MetricsReport, ScheduleLogEntry, TraceRow, VehicleRecord};
use super::{CavFollower, CollisionResponse, ScenarioConfig};

/// Stop line short of the merging zone for yielding vehicles (m).
const STOP_MARGIN: f64 = 2.0;
/// Where a blocked approach holds position, just short of the bar (m).
const BAR_STANDOFF: f64 = 0.4;
/// Hold point during a long block, set back far enough that the release can
/// rebuild most of its crossing speed before the line (m).
const STAGING_BACK: f64 = 12.0;
/// Vehicles this close to the bar take part in entry arbitration (m).
const REQUEST_HORIZON: f64 = 50.0;
/// CAVs this close to the bar run the occupancy gate and override check (m).
const GATE_HORIZON: f64 = 40.0;
/// Vehicles are dropped this far past the merging zone (m).
const DESPAWN_MARGIN: f64 = 30.0;
/// Speed drift that invalidates a human's constant-speed estimate (m/s).
const DRIFT_TOL: f64 = 0.5;
/// Below this a vehicle counts as stopped and claims no crossing window (m/s).
const STILL_SPEED: f64 = 0.05;
/// A stopped human is re-estimated once it moves at least this fast (m/s).
const RESTART_SPEED: f64 = 0.5;
/// A committed slot is re-assigned when it falls this far behind what is
/// kinematically reachable from the vehicle's current state (s).
const STALE_SLACK: f64 = 0.5;
/// Cruise plans whose terminal speed falls below this are junk (m/s).
const PLAN_TERMINAL_FLOOR: f64 = 1.0;
/// Air between consecutive conflicting windows in the schedule (s). Must
/// exceed the entry guard below or on-time flow would trip the gate.
const SCHEDULE_AIR: f64 = 0.3;
/// The entry gate treats a conflicting window as busy this long past its
/// predicted end, absorbing arrival drift the schedule cannot see (s).
const ZONE_ENTRY_GUARD: f64 = 0.25;
/// Last-resort brake distance to a slower leader (m).
const EMERGENCY_GAP: f64 = 3.0;
/// Leaders slower than this are held behind rather than tracked (m/s).
const HOLD_LEADER_SPEED: f64 = 0.5;
/// Allowed bound overshoot before a cruise plan is abandoned for pacing.
const RANGE_TOL: f64 = 0.15;
/// Plans are re-solved when their horizon drifts this far off the record (s).
const PLAN_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Cruise,
    Pace,
    FollowAf,
    FollowW,
    Hold,
    Yield,
    Inside,
    Out,
}

#[derive(Debug, Clone, Copy)]
enum Plan {
    Fd(FdCoefficients),
    Af(AfCoefficients),
}

impl Plan {
    fn accel(&self, t: f64) -> f64 {
        match self {
            Plan::Fd(p) => p.accel(t),
            Plan::Af(p) => p.accel(t),
        }
    }

    fn valid_to(&self) -> f64 {
        match self {
            Plan::Fd(p) => p.valid_to,
            Plan::Af(p) => p.valid_to,
        }
    }
}

struct Vehicle {
    id: VehicleId,
    class: VehicleClass,
    approach: Approach,
    entered_at: f64,
    p: f64,
    v: f64,
    u: f64,
    driver: crate::wiedemann::WiedemannParams,
    driver_seed: u64,
    phase: Phase,
    following: bool,
    plan: Option<Plan>,
    anchor_id: Option<VehicleId>,
    replan: bool,
    mz_entry: Option<f64>,
    mz_exit: Option<f64>,
    frozen: bool,
    energy: f64,
    saturation_count: u32,
    min_gap: f64,
    label: &'static str,
}

#[derive(Debug, Clone, Copy)]
struct LeaderInfo {
    idx: usize,
    gap: f64,
    v: f64,
    class: VehicleClass,
}

#[derive(Debug, Clone, Copy)]
enum Law {
    /// Follow the solved plan; fall back to pacing toward `t_m` without one.
    Plan { t_m: f64 },
    /// Car-following toward the leader, optionally braking for the stop line.
    Drive { leader: Option<(f64, f64)>, stop_at_bar: bool },
    /// Zone transit at full available speed; a slower leader forces braking.
    Inside { leader: Option<(f64, f64)> },
    /// Timed run at a blocked bar: arrive rolling as the zone clears.
    /// `hold_short` keeps the speed inside a stoppable envelope for occupants
    /// whose exit could still slip later; firm clear times are taken at pace.
    Approach { clear_at: f64, leader: Option<(f64, f64)>, hold_short: bool },
    Coast,
}

struct Directive {
    law: Law,
    phase: Phase,
    following: bool,
    label: &'static str,
    solve_fd_to: Option<f64>,
    solve_af_to: Option<(f64, PredecessorAnchor, VehicleId)>,
    release: bool,
    emergency: Option<(f64, f64)>,
}

fn road_idx(road: Road) -> usize {
    match road {
        Road::NorthSouth => 0,
        Road::EastWest => 1,
    }
}

/// Terminal speed of the cruise cubic from state (p, v) at `now` to the bar
/// at `t_m`; lets records carry the speed a plan would end with before (or
/// without) actually solving it.
fn projected_terminal(now: f64, p: f64, v: f64, t_m: f64, bar: f64) -> f64 {
    1.5 * (bar - p) / (t_m - now) - 0.5 * v
}

/// Time to cover `dist` entering at `v0` under full throttle up to the
/// ceiling. A vehicle in the merging zone has an empty reserved path ahead,
/// so this is what its transit actually takes.
fn zone_transit_time(v0: f64, dist: f64, bounds: &crate::core::ConstraintBounds) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let v0 = v0.clamp(0.0, bounds.v_max);
    let d_accel = (bounds.v_max * bounds.v_max - v0 * v0) / (2.0 * bounds.u_max);
    if d_accel >= dist {
        ((v0 * v0 + 2.0 * bounds.u_max * dist).sqrt() - v0) / bounds.u_max
    } else {
        (bounds.v_max - v0) / bounds.u_max + (dist - d_accel) / bounds.v_max
    }
}

pub(crate) struct World {
    cfg: ScenarioConfig,
    queue: CrossingQueue,
    vehicles: Vec<Vehicle>,
    pending: VecDeque<Arrival>,
    prev_p: Vec<f64>,
    next_id: u32,
    /// Guarded exit time of the last merging-zone exit per requesting road;
    /// keeps re-assigned slots from reaching back across a finished crossing.
    conflict_floor: [f64; 2],
    /// Earliest queue index whose successors must be re-assigned this step.
    dirty_from: usize,
    spawned: u32,
    despawned: u32,
    completed: u32,
    throughput: u32,
    rear_end: u32,
    lateral: u32,
    frozen_count: u32,
    log: BTreeMap<u32, ScheduleLogEntry>,
    finished: Vec<VehicleRecord>,
    trace: Vec<TraceRow>,
    halted: bool,
}

impl World {
    pub(crate) fn new(cfg: &ScenarioConfig) -> World {
        let arrivals = match &cfg.scripted_arrivals {
            Some(list) => {
                let mut list = list.clone();
                list.sort_by(|a, b| {
                    a.time.total_cmp(&b.time).then(a.approach.index().cmp(&b.approach.index()))
                });
                list
            }
            None => generate_arrivals(
                cfg.flow_rate,
                cfg.penetration,
                cfg.horizon,
                cfg.seed,
                cfg.initial_speed_range,
            ),
        };
        World {
            queue: CrossingQueue::new(
                cfg.min_gap,
                cfg.geometry.mz_length,
                cfg.dt.max(SCHEDULE_AIR),
            ),
            vehicles: Vec::new(),
            pending: arrivals.into(),
            prev_p: Vec::new(),
            next_id: 0,
            conflict_floor: [f64::NEG_INFINITY; 2],
            dirty_from: usize::MAX,
            spawned: 0,
            despawned: 0,
            completed: 0,
            throughput: 0,
            rear_end: 0,
            lateral: 0,
            frozen_count: 0,
            log: BTreeMap::new(),
            finished: Vec::new(),
            trace: Vec::new(),
            halted: false,
            cfg: cfg.clone(),
        }
    }

    pub(crate) fn halted(&self) -> bool {
        self.halted
    }

    fn veh_idx(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id.0, |v| v.id.0).ok()
    }

    fn bar(&self) -> f64 {
        self.cfg.geometry.cz_length
    }

    fn zone_end(&self) -> f64 {
        self.cfg.geometry.cz_length + self.cfg.geometry.mz_length
    }

    pub(crate) fn step(&mut self, t0: f64, t1: f64) {
        self.admit_arrivals(t0, t1);
        self.refresh_records(t0);
        let leaders = self.leaders();
        let dirs = self.decide(&leaders, t0);
        self.apply(dirs, t0);
        self.integrate(&leaders, t0, t1);
        self.settle_events(&leaders, t0, t1);
        self.despawn();
        debug_assert_eq!(self.spawned as usize, self.vehicles.len() + self.despawned as usize);
    }

    // ---- spawning ----

    fn admit_arrivals(&mut self, t0: f64, t1: f64) {
        let mut blocked = [false; 4];
        let mut retry: Vec<Arrival> = Vec::new();
        while let Some(front) = self.pending.front() {
            if front.time > t1 + 1e-12 {
                break;
            }
            let arrival = self.pending.pop_front().unwrap();
            let lane = arrival.approach.index();
            if blocked[lane] || !self.insertion_clear(&arrival) {
                // keep lane order: later arrivals on this approach must wait too
                blocked[lane] = true;
                retry.push(Arrival { time: t1, ..arrival });
                continue;
            }
            self.spawn(arrival, t0.max(arrival.time));
        }
        for a in retry.into_iter().rev() {
            self.pending.push_front(a);
        }
    }

    fn insertion_clear(&self, arrival: &Arrival) -> bool {
        let rear = self
            .vehicles
            .iter()
            .filter(|v| v.approach == arrival.approach)
            .min_by(|a, b| a.p.total_cmp(&b.p));
        match rear {
            None => true,
            Some(r) => {
                // reject spawns that could not brake out of a collision, with
                // half a second of reaction distance on top of the kinematics
                let closing = (arrival.v0 * arrival.v0 - r.v * r.v).max(0.0)
                    / (2.0 * self.cfg.bounds.u_min.abs());
                let margin = self.cfg.wiedemann.standstill_gap + closing + 0.5 * arrival.v0;
                r.p >= self.cfg.min_gap.max(margin)
            }
        }
    }

    fn spawn(&mut self, arrival: Arrival, now: f64) {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.spawned += 1;
        let driver = match arrival.class {
            VehicleClass::Human => {
                let mut rng = ChaCha8Rng::seed_from_u64(arrival.driver_seed);
                sample_driver(&self.cfg.wiedemann, &mut rng)
            }
            VehicleClass::Cav => self.cfg.wiedemann,
        };
        self.vehicles.push(Vehicle {
            id,
            class: arrival.class,
            approach: arrival.approach,
            entered_at: now,
            p: 0.0,
            v: arrival.v0,
            u: 0.0,
            driver,
            driver_seed: arrival.driver_seed,
            phase: Phase::Cruise,
            following: false,
            plan: None,
            anchor_id: None,
            replan: false,
            mz_entry: None,
            mz_exit: None,
            frozen: false,
            energy: 0.0,
            saturation_count: 0,
            min_gap: f64::INFINITY,
            label: "spawn",
        });
        self.prev_p.push(0.0);
        self.queue.enqueue(id, arrival.approach, arrival.class).expect("fresh id");
        let idx = self.vehicles.len() - 1;
        match arrival.class {
            VehicleClass::Cav => {
                if self.try_assign(idx, now) {
                    self.solve_cruise(idx, now);
                }
            }
            VehicleClass::Human => {
                let rec = self
                    .queue
                    .commit_estimate(id, now, 0.0, arrival.v0, self.bar())
                    .expect("moving at spawn");
                self.upsert_log(id, arrival.approach, arrival.class, &rec);
            }
        }
    }

    // ---- schedule upkeep ----

    /// Re-assigns the vehicle's crossing slot from its current state. Commits
    /// (and logs) the record when it changed; plans catch up in the control
    /// pass. Returns false while a same-lane predecessor stays unscheduled.
    fn try_assign(&mut self, idx: usize, now: f64) -> bool {
        let (id, approach, p, v) = {
            let veh = &self.vehicles[idx];
            (veh.id, veh.approach, veh.p, veh.v)
        };
        let d = self.bar() - p;
        if d <= 0.0 {
            return false;
        }
        let bounds = self.cfg.bounds;
        let kinematic = (now + min_feasible_horizon(v, d, &bounds))
            .max(lower_bound_tc(now, v, d, bounds.v_max, bounds.u_max));
        let t_c = kinematic.max(self.conflict_floor[road_idx(approach.road())]);
        let Ok((t_m, tag)) = self.queue.assign_terminal_time(id, t_c) else {
            return false;
        };
        let old = self.queue.get(id).and_then(|s| s.record);
        if let Some(r) = old {
            if (r.t_m - t_m).abs() <= 1e-9 {
                return true;
            }
        }
        // The recorded speed is the mean the vehicle will hold across the
        // zone, not the instantaneous bar speed: a head discharging from a
        // creep accelerates through its reservation, and quoting the creep
        // would stretch its window toward minutes and feed the very backlog
        // that slowed it down. In free flow the two speeds coincide.
        let at_bar = projected_terminal(now, p, v, t_m, self.bar())
            .clamp(0.0, bounds.v_max);
        let mz = self.cfg.geometry.mz_length;
        let v_m = mz / zone_transit_time(at_bar, mz, &bounds);
        let rec = TerminalTimeRecord {
            vehicle: id,
            t_c,
            t_m,
            v_m,
            t_f: t_m + self.cfg.geometry.mz_length / v_m,
            case_tag: tag,
            estimated: false,
        };
        self.queue.commit(rec).expect("queued");
        self.upsert_log(id, approach, VehicleClass::Cav, &rec);
        if let Some(qidx) = self.queue.position(id) {
            self.dirty_from = self.dirty_from.min(qidx + 1);
        }
        true
    }

    fn solve_cruise(&mut self, idx: usize, now: f64) {
        let (id, p, v) = {
            let veh = &self.vehicles[idx];
            (veh.id, veh.p, veh.v)
        };
        let Some(rec) = self.queue.get(id).and_then(|s| s.record) else {
            self.vehicles[idx].plan = None;
            return;
        };
        let bounds = self.cfg.bounds;
        let plan = solve_fd(now, p, v, rec.t_m, self.bar()).ok().filter(|pl| {
            pl.terminal_speed() >= 0.9 * PLAN_TERMINAL_FLOOR
                && pl.range_check().within(&bounds, RANGE_TOL)
        });
        let veh = &mut self.vehicles[idx];
        veh.plan = plan.map(Plan::Fd);
        veh.anchor_id = None;
        veh.replan = false;
    }

    /// One ordered pass over the queue: stopped humans drop their estimates,
    /// drifting ones are re-estimated, stale or upstream-shaken slots are
    /// re-assigned. Changes propagate left to right within the same pass.
    fn refresh_records(&mut self, t0: f64) {
        let mut force_from = self.dirty_from;
        self.dirty_from = usize::MAX;
        for qidx in 0..self.queue.len() {
            let slot = self.queue.slots()[qidx];
            let Some(idx) = self.veh_idx(slot.vehicle) else { continue };
            let (p, v, frozen) = {
                let veh = &self.vehicles[idx];
                (veh.p, veh.v, veh.frozen)
            };
            if p >= self.bar() {
                continue;
            }
            if frozen {
                if slot.record.is_some() {
                    self.queue.clear_record(slot.vehicle).expect("queued");
                    force_from = force_from.min(qidx + 1);
                }
                continue;
            }
            match slot.class {
                VehicleClass::Human => {
                    let changed = match slot.record {
                        Some(_) if v <= STILL_SPEED => {
                            self.queue.clear_record(slot.vehicle).expect("queued");
                            true
                        }
                        Some(r) => {
                            if (v - r.v_m).abs() > DRIFT_TOL {
                                let rec = self
                                    .queue
                                    .commit_estimate(slot.vehicle, t0, p, v, self.bar())
                                    .expect("moving");
                                self.upsert_log(slot.vehicle, slot.approach, slot.class, &rec);
                                true
                            } else {
                                false
                            }
                        }
                        None if v >= RESTART_SPEED => {
                            let rec = self
                                .queue
                                .commit_estimate(slot.vehicle, t0, p, v, self.bar())
                                .expect("moving");
                            self.upsert_log(slot.vehicle, slot.approach, slot.class, &rec);
                            true
                        }
                        None => false,
                    };
                    if changed {
                        force_from = force_from.min(qidx + 1);
                    }
                }
                VehicleClass::Cav => {
                    let stale = match slot.record {
                        Some(r) => {
                            let reachable =
                                t0 + min_feasible_horizon(v, self.bar() - p, &self.cfg.bounds);
                            r.t_m < reachable - STALE_SLACK
                        }
                        None => true,
                    };
                    if stale || qidx >= force_from {
                        let before = self.queue.get(slot.vehicle).and_then(|s| s.record);
                        if self.try_assign(idx, t0) {
                            let after = self.queue.get(slot.vehicle).and_then(|s| s.record);
                            let moved = match (before, after) {
                                (Some(a), Some(b)) => (a.t_m - b.t_m).abs() > 1e-9,
                                _ => true,
                            };
                            if moved {
                                force_from = force_from.min(qidx + 1);
                            }
                        }
                    }
                }
            }
        }
    }

    // ---- control ----

    fn leaders(&self) -> Vec<Option<LeaderInfo>> {
        let mut by_lane: [Vec<usize>; 4] = Default::default();
        for (i, veh) in self.vehicles.iter().enumerate() {
            by_lane[veh.approach.index()].push(i);
        }
        let mut out = vec![None; self.vehicles.len()];
        for lane in &mut by_lane {
            lane.sort_by(|&a, &b| self.vehicles[a].p.total_cmp(&self.vehicles[b].p));
            for pair in lane.windows(2) {
                let (behind, ahead) = (pair[0], pair[1]);
                out[behind] = Some(LeaderInfo {
                    idx: ahead,
                    gap: self.vehicles[ahead].p - self.vehicles[behind].p,
                    v: self.vehicles[ahead].v,
                    class: self.vehicles[ahead].class,
                });
            }
        }
        out
    }

    fn build_occupancy(&self, leaders: &[Option<LeaderInfo>], t0: f64) -> MzOccupancy {
        let mut occ = MzOccupancy::new();
        for (i, veh) in self.vehicles.iter().enumerate() {
            let w = match (veh.mz_entry, veh.mz_exit) {
                (Some(entry), None) => {
                    // a CAV holds full throttle across the zone, but only if
                    // nothing ahead paces it; with a leader close enough to
                    // matter for the rest of the transit, credit no
                    // acceleration. Human exits are projected at current
                    // speed, which errs on the busy side.
                    let left = self.zone_end() - veh.p;
                    let paced = leaders[i].is_some_and(|l| l.gap < left + 25.0);
                    let remaining = match veh.class {
                        VehicleClass::Cav if !paced => {
                            zone_transit_time(veh.v, left, &self.cfg.bounds)
                        }
                        _ => left / veh.v.max(0.2),
                    };
                    Some(OccupancyWindow {
                        vehicle: veh.id,
                        approach: veh.approach,
                        class: veh.class,
                        entry_time: entry,
                        predicted_exit: t0 + remaining,
                    })
                }
                (None, _) if !veh.frozen => {
                    self.queue.get(veh.id).and_then(|s| s.record).map(|r| OccupancyWindow {
                        vehicle: veh.id,
                        approach: veh.approach,
                        class: veh.class,
                        entry_time: r.t_m,
                        predicted_exit: r.t_f,
                    })
                }
                _ => None,
            };
            if let Some(w) = w {
                occ.insert(w);
            }
        }
        occ
    }

    fn request_for(&self, veh: &Vehicle, t0: f64) -> MzRequest {
        let (entry, exit) = match self.queue.get(veh.id).and_then(|s| s.record) {
            Some(r) => (r.t_m, r.t_f),
            None => {
                let entry = t0 + (self.bar() - veh.p) / veh.v.max(0.3);
                (entry, entry + self.cfg.geometry.mz_length / veh.v.max(0.3))
            }
        };
        MzRequest {
            vehicle: veh.id,
            approach: veh.approach,
            entry_time: entry,
            exit_time: exit,
            queue_index: self.queue.position(veh.id).unwrap_or(usize::MAX),
        }
    }

    /// A blocking window is fragile when its predicted end could still slip
    /// later: the occupant is physically inside and stopped, frozen, or held
    /// under the speed ceiling by traffic close enough ahead to pace it for
    /// the rest of its transit. Scheduled-but-absent windows only order
    /// entries and cannot be hit, and a rolling occupant with open road holds
    /// full throttle, so its exit prediction can only come forward.
    fn exit_is_fragile(&self, w: &OccupancyWindow, leaders: &[Option<LeaderInfo>]) -> bool {
        let Some(j) = self.veh_idx(w.vehicle) else { return false };
        let occupant = &self.vehicles[j];
        if occupant.mz_entry.is_none() || occupant.mz_exit.is_some() {
            return false;
        }
        if occupant.frozen || occupant.v < 3.0 {
            return true;
        }
        match leaders[j] {
            Some(l) => {
                l.v < self.cfg.bounds.v_max - 1.0
                    && l.gap < (self.zone_end() - occupant.p) + 15.0
            }
            None => false,
        }
    }

    fn decide(&self, leaders: &[Option<LeaderInfo>], t0: f64) -> Vec<Directive> {
        let occ = self.build_occupancy(leaders, t0);
        let peers: Vec<MzRequest> = self
            .vehicles
            .iter()
            .filter(|v| {
                !v.frozen && v.p < self.bar() && v.p >= self.bar() - REQUEST_HORIZON
            })
            .map(|v| self.request_for(v, t0))
            .collect();

        self.vehicles
            .iter()
            .enumerate()
            .map(|(i, veh)| self.decide_one(veh, leaders[i], leaders, &occ, &peers, t0))
            .collect()
    }

    fn decide_one(
        &self,
        veh: &Vehicle,
        leader: Option<LeaderInfo>,
        leaders: &[Option<LeaderInfo>],
        occ: &MzOccupancy,
        peers: &[MzRequest],
        t0: f64,
    ) -> Directive {
        let mut dir = Directive {
            law: Law::Coast,
            phase: veh.phase,
            following: veh.following,
            label: "frozen",
            solve_fd_to: None,
            solve_af_to: None,
            release: false,
            emergency: None,
        };
        if veh.frozen {
            return dir;
        }
        let leader_gv = leader.map(|l| (l.gap, l.v));
        let bar = self.bar();

        if veh.p >= self.zone_end() {
            dir.phase = Phase::Out;
            dir.label = "out";
            dir.law = match veh.class {
                VehicleClass::Cav => Law::Inside { leader: leader_gv },
                VehicleClass::Human => Law::Drive { leader: leader_gv, stop_at_bar: false },
            };
        } else if veh.p >= bar {
            dir.phase = Phase::Inside;
            dir.label = "mz";
            dir.law = match veh.class {
                VehicleClass::Cav => Law::Inside { leader: leader_gv },
                VehicleClass::Human => Law::Drive { leader: leader_gv, stop_at_bar: false },
            };
        } else {
            match veh.class {
                VehicleClass::Human => self.decide_human(veh, leader_gv, occ, peers, t0, &mut dir),
                VehicleClass::Cav => self.decide_cav(veh, leader, leaders, occ, peers, t0, &mut dir),
            }
        }

        if let Some(l) = leader {
            // fire when closing this gap would already take half of full
            // braking authority; a fixed distance is blind to closing speed
            let dv = (veh.v - l.v).max(0.0);
            let room = (l.gap - veh.driver.standstill_gap).max(0.05);
            let needed = dv * dv / (2.0 * room);
            if l.gap <= EMERGENCY_GAP || needed >= 0.5 * self.cfg.bounds.u_min.abs() {
                dir.emergency = Some((l.gap, l.v));
            }
        }
        dir
    }

    fn decide_human(
        &self,
        veh: &Vehicle,
        leader: Option<(f64, f64)>,
        occ: &MzOccupancy,
        peers: &[MzRequest],
        t0: f64,
        dir: &mut Directive,
    ) {
        let mut stop = false;
        if veh.p >= self.bar() - REQUEST_HORIZON {
            let req = self.request_for(veh, t0);
            stop = request_mz_entry(&req, occ, &self.cfg.rule, t0, peers) == Decision::Yield;
        }
        dir.law = Law::Drive { leader, stop_at_bar: stop };
        dir.phase = if stop { Phase::Yield } else { Phase::Cruise };
        dir.label = if stop { "human_yield" } else { "human" };
    }

    fn decide_cav(
        &self,
        veh: &Vehicle,
        leader: Option<LeaderInfo>,
        leaders: &[Option<LeaderInfo>],
        occ: &MzOccupancy,
        peers: &[MzRequest],
        t0: f64,
        dir: &mut Directive,
    ) {
        let bar = self.bar();
        let leader_gv = leader.map(|l| (l.gap, l.v));
        let rec = self.queue.get(veh.id).and_then(|s| s.record);

        let blocked = if veh.p >= bar - GATE_HORIZON {
            let req = self.request_for(veh, t0);
            // schedules drift, so the gate works off the arrival the vehicle
            // will actually make, not the one it was promised; of two
            // overlapping transits the one whose window opens later yields,
            // and a window already physically occupied always opens earliest
            let phys_entry = t0 + (bar - veh.p) / veh.v.max(0.3);
            let phys_exit = phys_entry + self.cfg.geometry.mz_length / veh.v.max(0.3);
            let priority = rec.map_or(phys_entry, |r| r.t_m);
            let mut clear_at = f64::NEG_INFINITY;
            let mut hold_short = false;
            for w in occ.windows() {
                if approach_relation(veh.approach, w.approach) == Relation::Conflicting
                    && w.entry_time < priority - 1e-9
                    && w.entry_time < phys_exit + ZONE_ENTRY_GUARD
                    && w.predicted_exit + ZONE_ENTRY_GUARD > phys_entry
                {
                    clear_at = clear_at.max(w.predicted_exit + ZONE_ENTRY_GUARD);
                    hold_short |= self.exit_is_fragile(w, leaders);
                }
            }
            if let ConflictRule::Tlc(cycle) = &self.cfg.rule {
                if !cycle.is_green(veh.approach.road(), phys_entry) {
                    clear_at =
                        clear_at.max(next_green(cycle, veh.approach.road(), phys_entry.max(t0)));
                }
            }
            let overridden = matches!(
                cav_mz_override(&req, occ, &self.cfg.rule, t0, peers),
                OverrideDirective::Obey(Decision::Yield)
            );
            if clear_at > f64::NEG_INFINITY {
                Some((clear_at, hold_short))
            } else if overridden {
                // an override without a visible window gives no clear time;
                // hold a slow re-evaluated crawl until one shows up
                Some((t0 + 0.5, true))
            } else {
                None
            }
        } else {
            None
        };
        if let Some((clear_at, hold_short)) = blocked {
            dir.law = Law::Approach { clear_at, leader: leader_gv, hold_short };
            dir.phase = Phase::Yield;
            dir.following = false;
            dir.label = "yield";
            return;
        }
        if veh.phase == Phase::Yield {
            // path clear again: take a fresh slot and rebuild the plan
            dir.release = true;
            dir.law = Law::Plan { t_m: f64::NAN };
            dir.phase = Phase::Cruise;
            dir.following = false;
            dir.label = "fd";
            return;
        }

        let mode = if self.cfg.cav_follower == CavFollower::Disabled {
            CavMode::FreeDriving
        } else {
            let current = if veh.following { CavMode::AdaptiveFollowing } else { CavMode::FreeDriving };
            transition_mode(current, leader.map(|l| l.gap), self.cfg.engage_gap)
        };
        dir.following = mode == CavMode::AdaptiveFollowing;

        if dir.following {
            let l = leader.expect("following implies a leader");
            if l.v < HOLD_LEADER_SPEED || self.vehicles[l.idx].frozen {
                dir.law = Law::Drive { leader: leader_gv, stop_at_bar: false };
                dir.phase = Phase::Hold;
                dir.label = "hold";
                return;
            }
            let wiedemann_follower =
                self.cfg.cav_follower == CavFollower::Wiedemann && l.class == VehicleClass::Human;
            if wiedemann_follower || rec.is_none() {
                dir.law = Law::Drive { leader: leader_gv, stop_at_bar: false };
                dir.phase = Phase::FollowW;
                dir.label = "wf";
                return;
            }
            let rec = rec.expect("checked");
            let needs_solve = veh.replan
                || veh.anchor_id != Some(self.vehicles[l.idx].id)
                || match veh.plan {
                    Some(Plan::Af(af)) => {
                        (af.valid_to - rec.t_m).abs() > PLAN_TOL
                            || (af.anchor.speed - l.v).abs() > DRIFT_TOL
                    }
                    _ => true,
                };
            if needs_solve {
                let anchor =
                    PredecessorAnchor { position: self.vehicles[l.idx].p, speed: l.v };
                dir.solve_af_to = Some((rec.t_m, anchor, self.vehicles[l.idx].id));
            }
            dir.law = Law::Plan { t_m: rec.t_m };
            dir.phase = Phase::FollowAf;
            dir.label = "af";
            return;
        }

        match rec {
            Some(r) => {
                let plan_ok = !veh.replan
                    && matches!(veh.plan, Some(Plan::Fd(_)))
                    && (veh.plan.as_ref().unwrap().valid_to() - r.t_m).abs() <= PLAN_TOL;
                if !plan_ok {
                    dir.solve_fd_to = Some(r.t_m);
                }
                dir.law = Law::Plan { t_m: r.t_m };
                dir.phase = if veh.plan.is_some() || dir.solve_fd_to.is_some() {
                    Phase::Cruise
                } else {
                    Phase::Pace
                };
                dir.label = "fd";
            }
            None => {
                // unscheduled behind a stalled predecessor: hang back safely
                dir.law = Law::Drive { leader: leader_gv, stop_at_bar: false };
                dir.phase = Phase::FollowW;
                dir.label = "wf";
            }
        }
    }

    fn apply(&mut self, dirs: Vec<Directive>, t0: f64) {
        let bar = self.bar();
        let dt = self.cfg.dt;
        for (i, mut dir) in dirs.into_iter().enumerate() {
            let start = t0.max(self.vehicles[i].entered_at);
            let dt_i = (t0 + dt - start).max(0.0);
            if self.vehicles[i].frozen || dt_i <= 1e-12 {
                let veh = &mut self.vehicles[i];
                veh.u = 0.0;
                if veh.frozen {
                    veh.label = "frozen";
                }
                continue;
            }
            if dir.release {
                self.try_assign(i, start);
                self.solve_cruise(i, start);
                match self.queue.get(self.vehicles[i].id).and_then(|s| s.record) {
                    Some(r) => dir.law = Law::Plan { t_m: r.t_m },
                    None => {
                        dir.law = Law::Coast;
                        dir.phase = Phase::Hold;
                        dir.label = "hold";
                    }
                }
            }
            if let Some(t_m) = dir.solve_fd_to {
                let (p, v) = (self.vehicles[i].p, self.vehicles[i].v);
                let plan = solve_fd(start, p, v, t_m, bar).ok().filter(|pl| {
                    pl.terminal_speed() >= 0.9 * PLAN_TERMINAL_FLOOR
                        && pl.range_check().within(&self.cfg.bounds, RANGE_TOL)
                });
                let veh = &mut self.vehicles[i];
                veh.plan = plan.map(Plan::Fd);
                veh.anchor_id = None;
                veh.replan = false;
                if veh.plan.is_none() {
                    dir.phase = Phase::Pace;
                    dir.label = "pace";
                }
            }
            if let Some((t_m, anchor, anchor_id)) = dir.solve_af_to {
                let (p, v) = (self.vehicles[i].p, self.vehicles[i].v);
                match solve_af(start, p, v, t_m, bar, anchor, self.cfg.min_gap, &self.cfg.weights)
                {
                    Ok(af) => {
                        let veh = &mut self.vehicles[i];
                        veh.plan = Some(Plan::Af(af));
                        veh.anchor_id = Some(anchor_id);
                        veh.replan = false;
                    }
                    Err(_) => {
                        // horizon too long or ill-conditioned: fall back to
                        // plain car-following until the slot comes nearer
                        let veh = &mut self.vehicles[i];
                        veh.plan = None;
                        veh.anchor_id = None;
                        dir.law = Law::Drive {
                            leader: Some((anchor.position - p, anchor.speed)),
                            stop_at_bar: false,
                        };
                        dir.phase = Phase::FollowW;
                        dir.label = "wf";
                    }
                }
            }

            let veh = &self.vehicles[i];
            let t_mid = start + 0.5 * dt_i;
            let mut u = match dir.law {
                Law::Plan { t_m } => match &veh.plan {
                    Some(plan) => plan.accel(t_mid),
                    None => pace_accel(start, veh.p, veh.v, t_m, bar, &self.cfg.bounds),
                },
                Law::Drive { leader, stop_at_bar } => {
                    let (params, noise) = match veh.class {
                        VehicleClass::Human => (&veh.driver, dither(veh.driver_seed, t0)),
                        VehicleClass::Cav => (&self.cfg.wiedemann, 0.0),
                    };
                    let mut u = follow_accel(veh.v, leader, params, noise);
                    if stop_at_bar {
                        u = u.min(stopping_accel(bar - STOP_MARGIN - veh.p, veh.v, params));
                    }
                    u
                }
                Law::Inside { leader } => {
                    // the transit the schedule quoted assumed full throttle to
                    // the ceiling, and vehicles timing their entry to this
                    // one's exit rely on it; a comfort taper here would let
                    // the real exit slip past the prediction
                    let bounds = &self.cfg.bounds;
                    let mut u = ((bounds.v_max - veh.v) / dt_i).min(bounds.u_max);
                    if leader.is_some() {
                        let mut params = self.cfg.wiedemann;
                        params.desired_speed = bounds.v_max;
                        u = u.min(follow_accel(veh.v, leader, &params, 0.0));
                    }
                    u
                }
                Law::Approach { clear_at, leader, hold_short } => {
                    let bounds = &self.cfg.bounds;
                    let d_standoff = bar - BAR_STANDOFF - veh.p;
                    let t_min = zone_transit_time(veh.v, d_standoff.max(0.0), bounds);
                    let mut u = if !hold_short && start + t_min >= clear_at {
                        // flooring it can no longer reach the line early:
                        // commit and carry speed across the instant it opens
                        ((bounds.v_max - veh.v) / dt_i).min(bounds.u_max)
                    } else {
                        // too early to go. Hold short under an envelope that
                        // can still stop at the hold point; with a long wait
                        // the hold point moves a run-up back from the line so
                        // the eventual go does not launch from a standstill
                        // at the bar. Holding at the line itself would also
                        // risk a float graze reading as an entry.
                        let hold_at = if clear_at - start - t_min > 0.5 {
                            bar - STAGING_BACK
                        } else {
                            bar - BAR_STANDOFF
                        };
                        let d = hold_at - veh.p;
                        if d <= 0.0 {
                            -5.0 * veh.v
                        } else {
                            // ride in on a comfortable stopping profile; the
                            // hard ceiling above it is the last speed that can
                            // still stop at the hold point, and exceeding it
                            // even slightly is unrecoverable, so snap back
                            let v_cap = (1.8 * bounds.u_min.abs() * d).sqrt();
                            let v_ride = (1.2 * bounds.u_min.abs() * d).sqrt();
                            if veh.v > v_cap {
                                (v_cap - veh.v) / dt_i
                            } else {
                                (2.0 * (v_ride - veh.v)).clamp(bounds.u_min, bounds.u_max)
                            }
                        }
                    };
                    if leader.is_some() {
                        let mut params = self.cfg.wiedemann;
                        params.desired_speed = bounds.v_max;
                        u = u.min(follow_accel(veh.v, leader, &params, 0.0));
                    }
                    u
                }
                Law::Coast => 0.0,
            };
            if let Some((gap, v_lead)) = dir.emergency {
                let standstill = match veh.class {
                    VehicleClass::Human => veh.driver.standstill_gap,
                    VehicleClass::Cav => self.cfg.wiedemann.standstill_gap,
                };
                if gap <= standstill {
                    // contact range: the barrier brake below is useless
                    // against a slow drift, so stand on the pedal until the
                    // gap reopens
                    u = self.cfg.bounds.u_min;
                } else if veh.v > v_lead {
                    let dv = veh.v - v_lead;
                    let room = (gap - standstill).max(0.05);
                    u = u.min(-dv * dv / (2.0 * room));
                }
            }

            let veh = &mut self.vehicles[i];
            if veh.class == VehicleClass::Cav {
                let (clamped, saturated) = clamp_controls(u, veh.v, &self.cfg.bounds, dt_i);
                u = clamped;
                if saturated {
                    veh.saturation_count += 1;
                    if matches!(dir.law, Law::Plan { .. }) {
                        veh.replan = true;
                    }
                }
            }
            veh.u = u;
            veh.phase = dir.phase;
            veh.following = dir.following;
            veh.label = dir.label;
        }
    }

    // ---- motion and events ----

    fn integrate(&mut self, leaders: &[Option<LeaderInfo>], t0: f64, t1: f64) {
        self.prev_p.clear();
        self.prev_p.extend(self.vehicles.iter().map(|v| v.p));
        let model = self.cfg.energy_model.clone();
        for (i, veh) in self.vehicles.iter_mut().enumerate() {
            if let Some(l) = leaders[i] {
                veh.min_gap = veh.min_gap.min(l.gap);
            }
            let start = t0.max(veh.entered_at);
            let dt_i = t1 - start;
            if dt_i <= 1e-12 {
                continue;
            }
            if self.cfg.record_trace && !veh.frozen {
                self.trace.push(TraceRow {
                    t: start,
                    vehicle: veh.id,
                    class: veh.class,
                    approach: veh.approach,
                    mode: veh.label,
                    p: veh.p,
                    v: veh.v,
                    u: veh.u,
                });
            }
            if veh.frozen {
                continue;
            }
            let v_new = (veh.v + veh.u * dt_i).max(0.0);
            if veh.mz_exit.is_none() {
                veh.energy += dt_i * model.integrand(0.5 * (veh.v + v_new), veh.u);
            }
            veh.v = v_new;
            veh.p += v_new * dt_i;
        }
    }

    fn settle_events(&mut self, leaders: &[Option<LeaderInfo>], t0: f64, t1: f64) {
        let bar = self.bar();
        let end = self.zone_end();
        // (time, vehicle index, is_exit)
        let mut events: Vec<(f64, usize, bool)> = Vec::new();
        for (i, veh) in self.vehicles.iter().enumerate() {
            if veh.frozen || self.prev_p.len() <= i {
                continue;
            }
            let (p0, p1) = (self.prev_p[i], veh.p);
            if p1 <= p0 {
                continue;
            }
            let start = t0.max(veh.entered_at);
            if p0 < bar && p1 >= bar {
                events.push((start + (t1 - start) * (bar - p0) / (p1 - p0), i, false));
            }
            if p0 < end && p1 >= end {
                events.push((start + (t1 - start) * (end - p0) / (p1 - p0), i, true));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (t_star, i, is_exit) in events {
            if is_exit {
                self.handle_exit(i, t_star);
            } else {
                self.handle_entry(i, t_star);
            }
        }

        // rear-end contact against each start-of-step leader; the pre-step
        // ordering still names the right pair even if the step drove the
        // follower through its leader
        for i in 0..self.vehicles.len() {
            let Some(l) = leaders[i] else { continue };
            let gap = self.vehicles[l.idx].p - self.vehicles[i].p;
            if gap <= 1e-9 && !(self.vehicles[i].frozen && self.vehicles[l.idx].frozen) {
                self.rear_end += 1;
                self.freeze(i);
                self.freeze(l.idx);
                if self.cfg.collision_response == CollisionResponse::Halt {
                    self.halted = true;
                }
            }
        }
    }

    fn handle_entry(&mut self, i: usize, t_star: f64) {
        let approach = self.vehicles[i].approach;
        // lateral conflict: someone on a crossing route is already inside
        let insiders: Vec<usize> = self
            .vehicles
            .iter()
            .enumerate()
            .filter(|(j, other)| {
                *j != i
                    && approach_relation(approach, other.approach) == Relation::Conflicting
                    && other.mz_entry.is_some_and(|e| e <= t_star)
                    && other.mz_exit.is_none_or(|x| x > t_star)
            })
            .map(|(j, _)| j)
            .collect();
        self.vehicles[i].mz_entry = Some(t_star);
        if !insiders.is_empty() {
            for j in insiders {
                self.lateral += 1;
                self.freeze(j);
            }
            self.freeze(i);
            if self.cfg.collision_response == CollisionResponse::Halt {
                self.halted = true;
            }
        }
    }

    fn handle_exit(&mut self, i: usize, t_star: f64) {
        let id = self.vehicles[i].id;
        self.vehicles[i].mz_exit = Some(t_star);
        self.completed += 1;
        if t_star >= self.cfg.warmup && t_star <= self.cfg.horizon {
            self.throughput += 1;
        }
        let qidx = self.queue.position(id);
        if let Some(rec) = self.queue.get(id).and_then(|s| s.record) {
            // A late exit widens the logged window so later assignments keep
            // clearing it; an early exit must not shrink it below the
            // scheduled transit, or the spacing recursion would be violated
            // retroactively by entries that already cleared the old window.
            let reconciled = TerminalTimeRecord { t_f: t_star.max(rec.t_f), ..rec };
            self.upsert_log(id, self.vehicles[i].approach, self.vehicles[i].class, &reconciled);
            let other = match self.vehicles[i].approach.road() {
                Road::NorthSouth => road_idx(Road::EastWest),
                Road::EastWest => road_idx(Road::NorthSouth),
            };
            self.conflict_floor[other] = self.conflict_floor[other]
                .max(reconciled.t_f + SCHEDULE_AIR.max(self.cfg.dt));
        }
        self.queue.remove(id);
        if let Some(qidx) = qidx {
            self.dirty_from = self.dirty_from.min(qidx);
        }
    }

    fn freeze(&mut self, i: usize) {
        let veh = &mut self.vehicles[i];
        if !veh.frozen {
            veh.frozen = true;
            veh.v = 0.0;
            veh.u = 0.0;
            self.frozen_count += 1;
        }
    }

    fn despawn(&mut self) {
        let limit = self.zone_end() + DESPAWN_MARGIN;
        let mut i = 0;
        while i < self.vehicles.len() {
            if !self.vehicles[i].frozen && self.vehicles[i].p > limit {
                let veh = self.vehicles.remove(i);
                self.finished.push(record_of(&veh));
                self.despawned += 1;
            } else {
                i += 1;
            }
        }
    }

    fn upsert_log(
        &mut self,
        id: VehicleId,
        approach: Approach,
        class: VehicleClass,
        rec: &TerminalTimeRecord,
    ) {
        self.log.insert(
            id.0,
            ScheduleLogEntry {
                vehicle: id,
                approach,
                class,
                t_c: rec.t_c,
                t_m: rec.t_m,
                v_m: rec.v_m,
                t_f: rec.t_f,
                case: rec.case_tag,
                estimated: rec.estimated,
            },
        );
    }

    #[cfg(test)]
    pub(crate) fn scheduled_record(&self, id: VehicleId) -> Option<TerminalTimeRecord> {
        self.queue.get(id).and_then(|s| s.record)
    }

    #[cfg(test)]
    pub(crate) fn vehicle_state(&self, id: VehicleId) -> Option<(f64, f64, Option<f64>, f64)> {
        self.veh_idx(id)
            .map(|i| {
                let v = &self.vehicles[i];
                (v.p, v.v, v.mz_entry, v.energy)
            })
    }

    pub(crate) fn into_report(mut self) -> MetricsReport {
        for veh in &self.vehicles {
            self.finished.push(record_of(veh));
        }
        self.finished.sort_by_key(|r| r.id.0);
        let mut report = MetricsReport {
            rear_end_violations: self.rear_end,
            lateral_collisions: self.lateral,
            throughput_veh: self.throughput,
            frozen_veh: self.frozen_count,
            spawned_veh: self.spawned,
            completed_veh: self.completed,
            halted: self.halted,
            vehicles: self.finished,
            schedule_log: self.log.into_values().collect(),
            trace: self.trace,
            ..MetricsReport::default()
        };
        report.finalize(self.cfg.warmup);
        report
    }
}

fn pace_accel(t: f64, p: f64, v: f64, t_m: f64, target: f64, bounds: &crate::core::ConstraintBounds) -> f64 {
    let remain = t_m - t;
    if remain < 0.25 {
        return bounds.u_max;
    }
    let v_tgt = ((target - p) / remain).clamp(0.0, bounds.v_max);
    // close to the deadline, lagging the required mean speed compounds
    // fast; push hard on the slow side but ease off gently when ahead
    let gain = if remain < 5.0 && v < v_tgt { 2.0 } else { 0.5 };
    (gain * (v_tgt - v)).clamp(bounds.u_min, bounds.u_max)
}

/// First green instant at or after `from`, probed on a coarse grid; an extra
/// beat of red is safe, an early release is not.
fn next_green(cycle: &SignalCycle, road: crate::core::Road, from: f64) -> f64 {
    if cycle.is_green(road, from) {
        return from;
    }
    let limit = from + 2.0 * cycle.period();
    let mut t = from;
    while t < limit {
        t += 0.25;
        if cycle.is_green(road, t) {
            return t;
        }
    }
    limit
}

fn record_of(veh: &Vehicle) -> VehicleRecord {
    VehicleRecord {
        id: veh.id,
        class: veh.class,
        approach: veh.approach,
        entered_at: veh.entered_at,
        exited_at: veh.mz_exit,
        energy: veh.energy,
        saturation_count: veh.saturation_count,
        min_gap: veh.min_gap,
        frozen: veh.frozen,
    }
}
