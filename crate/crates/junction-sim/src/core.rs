//! Intersection geometry, vehicle identity and the pairwise relation classes
//! that drive crossing-order constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("control zone must be longer than the merging zone and both positive (got L={0}, S={1})")]
    InvalidGeometry(f64, f64),
    #[error("speed bounds need 0 <= v_min < v_max (got {0}..{1})")]
    InvalidSpeedBounds(f64, f64),
    #[error("accel bounds need u_min < 0 < u_max (got {0}..{1})")]
    InvalidAccelBounds(f64, f64),
    #[error("a vehicle has no relation to itself")]
    IdenticalVehicles,
    #[error("gap is only defined for vehicles on the same approach")]
    DifferentLane,
    #[error("merging-zone transit needs a positive crossing speed (got {0})")]
    NonPositiveCrossingSpeed(f64),
}

/// The four single-lane arms feeding the intersection, named by compass entry side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

pub const APPROACHES: [Approach; 4] = [
    Approach::North,
    Approach::East,
    Approach::South,
    Approach::West,
];

/// One of the two crossing roads; each road owns an opposite-direction approach pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Road {
    NorthSouth,
    EastWest,
}

impl Approach {
    pub fn road(self) -> Road {
        match self {
            Approach::North | Approach::South => Road::NorthSouth,
            Approach::East | Approach::West => Road::EastWest,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Approach::North => 0,
            Approach::East => 1,
            Approach::South => 2,
            Approach::West => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Approach::North => "N",
            Approach::East => "E",
            Approach::South => "S",
            Approach::West => "W",
        }
    }
}

/// Only straight-through movements exist; turning routes are out of scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Cav,
    Human,
}

impl VehicleClass {
    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::Cav => "cav",
            VehicleClass::Human => "human",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Control-zone length `cz_length` (entry to MZ boundary) and merging-zone side
/// `mz_length`, both in meters along each approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionGeometry {
    pub cz_length: f64,
    pub mz_length: f64,
}

impl IntersectionGeometry {
    pub fn new(cz_length: f64, mz_length: f64) -> Result<Self, CoreError> {
        if !(cz_length.is_finite() && mz_length.is_finite()) || cz_length <= mz_length || mz_length <= 0.0 {
            return Err(CoreError::InvalidGeometry(cz_length, mz_length));
        }
        Ok(Self { cz_length, mz_length })
    }
}

/// Speed and acceleration box constraints shared by every controlled vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl ConstraintBounds {
    pub fn new(v_min: f64, v_max: f64, u_min: f64, u_max: f64) -> Result<Self, CoreError> {
        if !(v_min.is_finite() && v_max.is_finite()) || v_min < 0.0 || v_min >= v_max {
            return Err(CoreError::InvalidSpeedBounds(v_min, v_max));
        }
        if !(u_min.is_finite() && u_max.is_finite()) || u_min >= 0.0 || u_max <= 0.0 {
            return Err(CoreError::InvalidAccelBounds(u_min, u_max));
        }
        Ok(Self { v_min, v_max, u_min, u_max })
    }
}

/// Longitudinal state along an approach: `p` runs from 0 at CZ entry to
/// `cz_length` at the MZ boundary and beyond through the MZ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub approach: Approach,
    pub route: Route,
    pub entered_at: f64,
    pub p: f64,
    pub v: f64,
    pub u: f64,
}

/// Relation of another vehicle `j` to a subject `i`, deciding which crossing
/// constraint applies between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    /// Same road, same lane: rear-end headway applies.
    SameLaneAhead,
    /// Same road and direction, different lane. Unreachable with one lane per
    /// approach; kept so multi-lane callers fail loudly instead of silently.
    SameRoadOtherLane,
    /// Different roads with crossing routes: merging-zone windows must not overlap.
    Conflicting,
    /// Same road, opposite direction: may share the merging zone freely.
    Opposite,
}

/// Relation implied by a pair of approaches alone. Straight-through routes on
/// different roads always cross inside the MZ, so the road pair fully
/// determines the relation.
pub fn approach_relation(subject: Approach, other: Approach) -> Relation {
    if subject == other {
        Relation::SameLaneAhead
    } else if subject.road() == other.road() {
        Relation::Opposite
    } else {
        Relation::Conflicting
    }
}

/// Classifies `j` relative to `i`.
pub fn classify_relation(i: &VehicleState, j: &VehicleState) -> Result<Relation, CoreError> {
    if i.id == j.id {
        return Err(CoreError::IdenticalVehicles);
    }
    Ok(approach_relation(i.approach, j.approach))
}

/// Bumper gap from `follower` to `leader` on a shared approach. Negative means
/// overlap, which the engine counts as a rear-end contact.
pub fn gap(follower: &VehicleState, leader: &VehicleState) -> Result<f64, CoreError> {
    if follower.approach != leader.approach {
        return Err(CoreError::DifferentLane);
    }
    Ok(leader.p - follower.p)
}

/// Exit time of a vehicle that enters the MZ at `t_m` and crosses its length
/// `mz_length` at the constant speed `v_m`.
pub fn mz_exit_time(t_m: f64, v_m: f64, mz_length: f64) -> Result<f64, CoreError> {
    if v_m <= 0.0 || !v_m.is_finite() {
        return Err(CoreError::NonPositiveCrossingSpeed(v_m));
    }
    Ok(t_m + mz_length / v_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(id: u32, approach: Approach, p: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            class: VehicleClass::Cav,
            approach,
            route: Route::Straight,
            entered_at: 0.0,
            p,
            v: 10.0,
            u: 0.0,
        }
    }

    #[test]
    fn relations_follow_road_topology() {
        let a = state(4, Approach::North, 120.0);
        let b = state(6, Approach::North, 80.0);
        let c = state(7, Approach::East, 60.0);
        let d = state(3, Approach::South, 90.0);
        assert_eq!(classify_relation(&b, &a).unwrap(), Relation::SameLaneAhead);
        assert_eq!(classify_relation(&c, &b).unwrap(), Relation::Conflicting);
        assert_eq!(classify_relation(&a, &d).unwrap(), Relation::Opposite);
        assert_eq!(classify_relation(&a, &a), Err(CoreError::IdenticalVehicles));
    }

    #[test]
    fn relation_is_symmetric_over_all_pairs() {
        for (ai, &a) in APPROACHES.iter().enumerate() {
            for (bi, &b) in APPROACHES.iter().enumerate() {
                if ai == bi {
                    continue;
                }
                let x = state(1, a, 10.0);
                let y = state(2, b, 20.0);
                assert_eq!(
                    classify_relation(&x, &y).unwrap(),
                    classify_relation(&y, &x).unwrap()
                );
            }
        }
    }

    #[test]
    fn gap_is_signed_leader_minus_follower() {
        let leader = state(1, Approach::West, 20.0);
        let follower = state(2, Approach::West, 0.0);
        assert_eq!(gap(&follower, &leader).unwrap(), 20.0);
        let abreast = state(3, Approach::West, 20.0);
        assert_eq!(gap(&abreast, &leader).unwrap(), 0.0);
        let crossing = state(4, Approach::North, 5.0);
        assert_eq!(gap(&crossing, &leader), Err(CoreError::DifferentLane));
    }

    #[test]
    fn mz_exit_is_entry_plus_transit() {
        assert_eq!(mz_exit_time(40.0, 10.0, 30.0).unwrap(), 43.0);
        assert_eq!(mz_exit_time(10.0, 15.0, 30.0).unwrap(), 12.0);
        assert_eq!(mz_exit_time(5.0, 10.0, 0.0).unwrap(), 5.0);
        assert!(matches!(
            mz_exit_time(40.0, 0.0, 30.0),
            Err(CoreError::NonPositiveCrossingSpeed(_))
        ));
    }

    #[test]
    fn exit_time_monotone_in_speed_and_length() {
        let base = mz_exit_time(40.0, 10.0, 30.0).unwrap();
        assert!(mz_exit_time(40.0, 12.0, 30.0).unwrap() < base);
        assert!(mz_exit_time(40.0, 10.0, 36.0).unwrap() > base);
    }

    #[test]
    fn constructors_reject_degenerate_inputs() {
        assert!(IntersectionGeometry::new(400.0, 30.0).is_ok());
        assert!(IntersectionGeometry::new(30.0, 30.0).is_err());
        assert!(IntersectionGeometry::new(400.0, 0.0).is_err());
        assert!(ConstraintBounds::new(0.0, 13.0, -6.0, 3.0).is_ok());
        assert!(ConstraintBounds::new(-1.0, 13.0, -6.0, 3.0).is_err());
        assert!(ConstraintBounds::new(0.0, 13.0, 6.0, 3.0).is_err());
    }
}
