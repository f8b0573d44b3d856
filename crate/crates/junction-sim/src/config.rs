//! Flat key-value run configuration. Every scenario and sweep field has one
//! top-level key, units spelled out in the name; unknown keys fail parsing
//! so typos cannot silently fall back to defaults.

use serde::Deserialize;
use thiserror::Error;

use crate::arbitration::{ArbitrationError, ConflictRule, SignalCycle};
use crate::core::Road;
use crate::engine::{CavFollower, CollisionResponse, EnergyModel, PolyTerm, ScenarioConfig};
use crate::harness::{SweepSpec, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("rule must be ca1, ca2, ca3 or tlc, got {0:?}")]
    UnknownRule(String),
    #[error("major_road must be north_south or east_west, got {0:?}")]
    UnknownRoad(String),
    #[error("cav_follower must be optimal, wiedemann or disabled, got {0:?}")]
    UnknownFollower(String),
    #[error("energy_model must be quadratic or polynomial, got {0:?}")]
    UnknownEnergyModel(String),
    #[error("collision_response must be freeze or halt, got {0:?}")]
    UnknownCollisionResponse(String),
    #[error("variant must be one of s1..s5 or tlc, got {0:?}")]
    UnknownVariant(String),
    #[error("energy_poly terms are [v_power, u_power, coeff] with small nonnegative integer powers, got {0:?}")]
    BadPolyTerm([f64; 3]),
    #[error(transparent)]
    Signal(#[from] ArbitrationError),
}

/// One optional key per field. Anything left out keeps the built-in default.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub cz_length_m: Option<f64>,
    pub mz_length_m: Option<f64>,
    pub v_min_mps: Option<f64>,
    pub v_max_mps: Option<f64>,
    pub u_min_mps2: Option<f64>,
    pub u_max_mps2: Option<f64>,
    pub accel_weight: Option<f64>,
    pub gap_weight: Option<f64>,
    pub effort_scale: Option<f64>,
    pub desired_speed_mps: Option<f64>,
    pub standstill_gap_m: Option<f64>,
    pub additive_gap: Option<f64>,
    pub multiplicative_gap: Option<f64>,
    pub comfort_accel_mps2: Option<f64>,
    pub comfort_decel_mps2: Option<f64>,
    pub max_decel_mps2: Option<f64>,
    pub perception_range_m: Option<f64>,
    pub approach_horizon_s: Option<f64>,
    pub corridor_factor: Option<f64>,
    pub oscillation_accel_mps2: Option<f64>,
    pub driver_jitter: Option<f64>,
    pub smooth_closeup: Option<bool>,
    pub rule: Option<String>,
    pub major_road: Option<String>,
    pub green_ns_s: Option<f64>,
    pub green_ew_s: Option<f64>,
    pub all_red_s: Option<f64>,
    pub signal_offset_s: Option<f64>,
    pub cav_follower: Option<String>,
    pub min_gap_m: Option<f64>,
    pub engage_gap_m: Option<f64>,
    pub penetration: Option<f64>,
    pub flow_veh_h_lane: Option<f64>,
    pub horizon_s: Option<f64>,
    pub warmup_s: Option<f64>,
    pub dt_s: Option<f64>,
    pub seed: Option<u64>,
    pub speed_lo_mps: Option<f64>,
    pub speed_hi_mps: Option<f64>,
    pub energy_model: Option<String>,
    pub energy_poly: Option<Vec<[f64; 3]>>,
    pub collision_response: Option<String>,
    pub trace: Option<bool>,
    pub variant: Option<String>,
    pub penetrations: Option<Vec<f64>>,
    pub flows: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

fn set(target: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *target = v;
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Scenario assembled from defaults plus whatever keys are present.
    /// Numeric sanity is the engine's job; this layer only shapes values.
    pub fn scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        set(&mut cfg.geometry.cz_length, self.cz_length_m);
        set(&mut cfg.geometry.mz_length, self.mz_length_m);
        set(&mut cfg.bounds.v_min, self.v_min_mps);
        set(&mut cfg.bounds.v_max, self.v_max_mps);
        set(&mut cfg.bounds.u_min, self.u_min_mps2);
        set(&mut cfg.bounds.u_max, self.u_max_mps2);
        set(&mut cfg.weights.accel_weight, self.accel_weight);
        set(&mut cfg.weights.gap_weight, self.gap_weight);
        set(&mut cfg.weights.effort_scale, self.effort_scale);
        set(&mut cfg.wiedemann.desired_speed, self.desired_speed_mps);
        set(&mut cfg.wiedemann.standstill_gap, self.standstill_gap_m);
        set(&mut cfg.wiedemann.additive_gap, self.additive_gap);
        set(&mut cfg.wiedemann.multiplicative_gap, self.multiplicative_gap);
        set(&mut cfg.wiedemann.comfort_accel, self.comfort_accel_mps2);
        set(&mut cfg.wiedemann.comfort_decel, self.comfort_decel_mps2);
        set(&mut cfg.wiedemann.max_decel, self.max_decel_mps2);
        set(&mut cfg.wiedemann.perception_range, self.perception_range_m);
        set(&mut cfg.wiedemann.approach_horizon, self.approach_horizon_s);
        set(&mut cfg.wiedemann.corridor_factor, self.corridor_factor);
        set(&mut cfg.wiedemann.oscillation_accel, self.oscillation_accel_mps2);
        set(&mut cfg.wiedemann.jitter, self.driver_jitter);
        if let Some(v) = self.smooth_closeup {
            cfg.wiedemann.smooth_closeup = v;
        }
        cfg.rule = self.rule_from_keys()?;
        cfg.cav_follower = match self.cav_follower.as_deref() {
            None => cfg.cav_follower,
            Some("optimal") => CavFollower::OptimalAf,
            Some("wiedemann") => CavFollower::Wiedemann,
            Some("disabled") => CavFollower::Disabled,
            Some(other) => return Err(ConfigError::UnknownFollower(other.to_string())),
        };
        set(&mut cfg.min_gap, self.min_gap_m);
        set(&mut cfg.engage_gap, self.engage_gap_m);
        set(&mut cfg.penetration, self.penetration);
        set(&mut cfg.flow_rate, self.flow_veh_h_lane);
        set(&mut cfg.horizon, self.horizon_s);
        set(&mut cfg.warmup, self.warmup_s);
        set(&mut cfg.dt, self.dt_s);
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        set(&mut cfg.initial_speed_range.0, self.speed_lo_mps);
        set(&mut cfg.initial_speed_range.1, self.speed_hi_mps);
        cfg.energy_model = match self.energy_model.as_deref() {
            None => cfg.energy_model,
            Some("quadratic") => EnergyModel::HalfUSquared,
            Some("polynomial") => {
                let raw = self.energy_poly.clone().unwrap_or_default();
                let mut terms = Vec::with_capacity(raw.len());
                for t in raw {
                    let [v_pow, u_pow, coeff] = t;
                    let ok = |x: f64| x >= 0.0 && x <= 8.0 && x.fract() == 0.0;
                    if !(ok(v_pow) && ok(u_pow) && coeff.is_finite()) {
                        return Err(ConfigError::BadPolyTerm(t));
                    }
                    terms.push(PolyTerm { v_pow: v_pow as u8, u_pow: u_pow as u8, coeff });
                }
                EnergyModel::Polynomial(terms)
            }
            Some(other) => return Err(ConfigError::UnknownEnergyModel(other.to_string())),
        };
        cfg.collision_response = match self.collision_response.as_deref() {
            None => cfg.collision_response,
            Some("freeze") => CollisionResponse::Freeze,
            Some("halt") => CollisionResponse::Halt,
            Some(other) => return Err(ConfigError::UnknownCollisionResponse(other.to_string())),
        };
        if let Some(v) = self.trace {
            cfg.record_trace = v;
        }
        Ok(cfg)
    }

    fn rule_from_keys(&self) -> Result<ConflictRule, ConfigError> {
        let major = match self.major_road.as_deref() {
            None | Some("north_south") => Road::NorthSouth,
            Some("east_west") => Road::EastWest,
            Some(other) => return Err(ConfigError::UnknownRoad(other.to_string())),
        };
        match self.rule.as_deref() {
            None | Some("ca2") => Ok(ConflictRule::Ca2Partial { major }),
            Some("ca1") => Ok(ConflictRule::Ca1Passive),
            Some("ca3") => Ok(ConflictRule::Ca3Full),
            Some("tlc") => {
                let cycle = SignalCycle::new(
                    self.green_ns_s.unwrap_or(30.0),
                    self.green_ew_s.unwrap_or(30.0),
                    self.all_red_s.unwrap_or(3.0),
                    self.signal_offset_s.unwrap_or(0.0),
                )?;
                Ok(ConflictRule::Tlc(cycle))
            }
            Some(other) => Err(ConfigError::UnknownRule(other.to_string())),
        }
    }

    /// Sweep built around the scenario: list keys default to the standard
    /// grid of eleven penetrations, five flows and twenty seeds.
    pub fn sweep(&self) -> Result<SweepSpec, ConfigError> {
        let base = self.scenario()?;
        let variant = match self.variant.as_deref() {
            None => Variant::PartialArbitrationOptimalFollower,
            Some(label) => Variant::from_label(label)
                .ok_or_else(|| ConfigError::UnknownVariant(label.to_string()))?,
        };
        Ok(SweepSpec {
            penetrations: self
                .penetrations
                .clone()
                .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect()),
            flow_rates: self
                .flows
                .clone()
                .unwrap_or_else(|| vec![500.0, 600.0, 700.0, 750.0, 800.0]),
            seeds: self.seeds.clone().unwrap_or_else(|| (1..=20).collect()),
            variant,
            base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_means_all_defaults() {
        let fc = FileConfig::parse("").unwrap();
        assert_eq!(fc.scenario().unwrap(), ScenarioConfig::default());
        let spec = fc.sweep().unwrap();
        assert_eq!(spec.penetrations.len(), 11);
        assert_eq!(spec.flow_rates, vec![500.0, 600.0, 700.0, 750.0, 800.0]);
        assert_eq!(spec.seeds, (1..=20).collect::<Vec<_>>());
        assert_eq!(spec.variant, Variant::PartialArbitrationOptimalFollower);
    }

    #[test]
    fn every_key_lands_in_its_field() {
        let text = r#"
cz_length_m = 300.0
mz_length_m = 25.0
v_min_mps = 0.0
v_max_mps = 15.0
u_min_mps2 = -5.0
u_max_mps2 = 2.5
accel_weight = 2.0
gap_weight = 3.0
effort_scale = 0.9
desired_speed_mps = 12.0
standstill_gap_m = 1.5
additive_gap = 2.5
multiplicative_gap = 3.5
comfort_accel_mps2 = 1.8
comfort_decel_mps2 = -1.9
max_decel_mps2 = -7.0
perception_range_m = 120.0
approach_horizon_s = 7.0
corridor_factor = 1.6
oscillation_accel_mps2 = 0.2
driver_jitter = 0.04
smooth_closeup = true
rule = "tlc"
green_ns_s = 25.0
green_ew_s = 35.0
all_red_s = 2.0
signal_offset_s = 1.0
cav_follower = "wiedemann"
min_gap_m = 12.0
engage_gap_m = 14.0
penetration = 0.4
flow_veh_h_lane = 650.0
horizon_s = 900.0
warmup_s = 100.0
dt_s = 0.1
seed = 9
speed_lo_mps = 10.0
speed_hi_mps = 11.0
energy_model = "polynomial"
energy_poly = [[0.0, 0.0, 0.1], [1.0, 1.0, 0.05]]
collision_response = "halt"
trace = true
variant = "s4"
penetrations = [0.0, 0.5]
flows = [600.0]
seeds = [3, 4]
"#;
        let fc = FileConfig::parse(text).unwrap();
        let cfg = fc.scenario().unwrap();
        assert_eq!(cfg.geometry.cz_length, 300.0);
        assert_eq!(cfg.bounds.v_max, 15.0);
        assert_eq!(cfg.weights.gap_weight, 3.0);
        assert_eq!(cfg.wiedemann.desired_speed, 12.0);
        assert!(cfg.wiedemann.smooth_closeup);
        assert!(matches!(cfg.rule, ConflictRule::Tlc(_)));
        assert_eq!(cfg.cav_follower, CavFollower::Wiedemann);
        assert_eq!(cfg.min_gap, 12.0);
        assert_eq!(cfg.penetration, 0.4);
        assert_eq!(cfg.dt, 0.1);
        assert_eq!(cfg.initial_speed_range, (10.0, 11.0));
        assert_eq!(
            cfg.energy_model,
            EnergyModel::Polynomial(vec![
                PolyTerm { v_pow: 0, u_pow: 0, coeff: 0.1 },
                PolyTerm { v_pow: 1, u_pow: 1, coeff: 0.05 },
            ])
        );
        assert_eq!(cfg.collision_response, CollisionResponse::Halt);
        assert!(cfg.record_trace);
        let spec = fc.sweep().unwrap();
        assert_eq!(spec.variant, Variant::PartialArbitrationWiedemannSmooth);
        assert_eq!(spec.penetrations, vec![0.0, 0.5]);
        assert_eq!(spec.seeds, vec![3, 4]);
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        assert!(matches!(FileConfig::parse("vmax = 13.0"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn bad_enum_values_name_the_offender() {
        let fc = FileConfig::parse("rule = \"ca9\"").unwrap();
        assert!(matches!(fc.scenario(), Err(ConfigError::UnknownRule(_))));
        let fc = FileConfig::parse("cav_follower = \"acc\"").unwrap();
        assert!(matches!(fc.scenario(), Err(ConfigError::UnknownFollower(_))));
        let fc = FileConfig::parse("variant = \"s9\"").unwrap();
        assert!(matches!(fc.sweep(), Err(ConfigError::UnknownVariant(_))));
    }

    #[test]
    fn fractional_polynomial_powers_are_rejected() {
        let fc = FileConfig::parse(
            "energy_model = \"polynomial\"\nenergy_poly = [[0.5, 1.0, 0.1]]",
        )
        .unwrap();
        assert!(matches!(fc.scenario(), Err(ConfigError::BadPolyTerm(_))));
    }
}
