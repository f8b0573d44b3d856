//! Psychophysical car-following for human drivers, Wiedemann-74 style: four
//! regimes (free driving, approaching, following, braking) separated by
//! speed-dependent gap thresholds, with a small seeded dither inside the
//! following corridor standing in for driver imperfection.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WiedemannParams {
    pub desired_speed: f64,
    /// Bumper-to-bumper distance held at standstill (m).
    pub standstill_gap: f64,
    /// Additive and multiplicative parts of the speed-dependent desired gap.
    pub additive_gap: f64,
    pub multiplicative_gap: f64,
    pub comfort_accel: f64,
    pub comfort_decel: f64,
    pub max_decel: f64,
    /// Leaders further than this are not perceived at all (m).
    pub perception_range: f64,
    /// Seconds of closing speed added to the perception threshold when
    /// closing in; larger values start the approach reaction earlier.
    pub approach_horizon: f64,
    /// Upper edge of the following corridor as a multiple of the desired-gap
    /// excess over standstill.
    pub corridor_factor: f64,
    /// Magnitude of the throttle oscillation inside the corridor (m/s^2).
    pub oscillation_accel: f64,
    /// Relative amplitude of per-driver parameter variation.
    pub jitter: f64,
    /// Start the approach reaction 1.5x earlier, trading arrival time for a
    /// uniformly lower deceleration over the episode.
    pub smooth_closeup: bool,
}

impl Default for WiedemannParams {
    fn default() -> Self {
        Self {
            desired_speed: 11.0,
            standstill_gap: 2.0,
            additive_gap: 2.0,
            multiplicative_gap: 3.0,
            comfort_accel: 2.0,
            comfort_decel: -2.0,
            max_decel: -6.0,
            perception_range: 150.0,
            approach_horizon: 8.0,
            corridor_factor: 1.7,
            oscillation_accel: 0.25,
            jitter: 0.05,
            smooth_closeup: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverMode {
    FreeDriving,
    Approaching,
    Following,
    Braking,
}

impl WiedemannParams {
    /// Desired minimum following gap at speed `v`: the corridor's lower edge.
    pub fn following_gap_floor(&self, v: f64) -> f64 {
        self.standstill_gap
            + (self.additive_gap + 0.5 * self.multiplicative_gap) * v.max(0.0).sqrt()
    }

    /// Upper edge of the following corridor at speed `v`.
    pub fn following_gap_ceiling(&self, v: f64) -> f64 {
        self.standstill_gap + self.corridor_factor * (self.following_gap_floor(v) - self.standstill_gap)
    }

    /// Perception threshold: beyond this gap the leader does not influence
    /// the driver. Closing speed extends it, earlier still under the smooth
    /// close-up option.
    pub fn approach_distance(&self, dv: f64, v: f64) -> f64 {
        let horizon = if self.smooth_closeup { 1.5 * self.approach_horizon } else { self.approach_horizon };
        self.following_gap_ceiling(v) + dv.max(0.0) * horizon
    }
}

/// Regime boundaries on (gap, closing speed, own speed). `gap` is bumper to
/// bumper; pass `f64::INFINITY` when there is no leader. `dv = v - v_leader`
/// is positive when closing in.
pub fn classify_mode(gap: f64, dv: f64, v: f64, params: &WiedemannParams) -> DriverMode {
    if gap > params.perception_range {
        return DriverMode::FreeDriving;
    }
    let floor = params.following_gap_floor(v);
    if gap < floor {
        return DriverMode::Braking;
    }
    if dv > 0.0 {
        let required = -dv * dv / (2.0 * (gap - floor).max(0.05));
        if required < params.comfort_decel {
            return DriverMode::Braking;
        }
    }
    if gap <= params.following_gap_ceiling(v) {
        return DriverMode::Following;
    }
    if dv > 0.0 && gap <= params.approach_distance(dv, v) {
        return DriverMode::Approaching;
    }
    DriverMode::FreeDriving
}

/// Commanded acceleration for a classified regime. `dither` in [-1, 1] feeds
/// the following-corridor oscillation; pass 0 for a deterministic driver.
pub fn acceleration(
    mode: DriverMode,
    v: f64,
    gap: f64,
    dv: f64,
    params: &WiedemannParams,
    dither: f64,
) -> f64 {
    match mode {
        DriverMode::FreeDriving => {
            (0.8 * (params.desired_speed - v)).clamp(params.comfort_decel, params.comfort_accel)
        }
        DriverMode::Approaching => {
            // null the closing speed right at the corridor's lower edge
            let room = (gap - params.following_gap_floor(v)).max(0.05);
            (-dv * dv / (2.0 * room)).clamp(params.max_decel, 0.0)
        }
        DriverMode::Following => {
            let floor = params.following_gap_floor(v);
            let target = 0.5 * (floor + params.following_gap_ceiling(v));
            let osc = if gap > target { params.oscillation_accel } else { -params.oscillation_accel };
            let lim = 0.25 * params.comfort_accel;
            (osc - 0.25 * dv + dither * params.oscillation_accel).clamp(-lim, lim)
        }
        DriverMode::Braking => {
            let room = (gap - params.standstill_gap).max(0.05);
            (-dv * dv.abs() / (2.0 * room)).clamp(params.max_decel, 0.0)
        }
    }
}

/// One classify-then-accelerate step against an optional leader.
pub fn follow_accel(v: f64, leader: Option<(f64, f64)>, params: &WiedemannParams, dither: f64) -> f64 {
    match leader {
        None => acceleration(DriverMode::FreeDriving, v, f64::INFINITY, 0.0, params, dither),
        Some((gap, v_leader)) => {
            let dv = v - v_leader;
            acceleration(classify_mode(gap, dv, v, params), v, gap, dv, params, dither)
        }
    }
}

/// Brake-to-stop command `dist_to_stop` metres ahead, modeled as following a
/// phantom car parked one standstill gap beyond the stop point.
pub fn stopping_accel(dist_to_stop: f64, v: f64, params: &WiedemannParams) -> f64 {
    follow_accel(v, Some((dist_to_stop.max(0.0) + params.standstill_gap, 0.0)), params, 0.0)
}

/// Deterministic dither in [-1, 1], re-drawn every half second of simulated
/// time so the value does not depend on the integration step.
pub fn dither(driver_seed: u64, t: f64) -> f64 {
    let epoch = (t / 0.5).floor() as i64 as u64;
    let mut z = driver_seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Per-driver heterogeneity: desired speed and gap preferences varied within
/// the relative `jitter` envelope. Always consumes the same number of draws.
pub fn sample_driver<R: Rng>(base: &WiedemannParams, rng: &mut R) -> WiedemannParams {
    let mut vary = |x: f64| x * (1.0 + base.jitter * (2.0 * rng.random::<f64>() - 1.0));
    WiedemannParams {
        desired_speed: vary(base.desired_speed),
        additive_gap: vary(base.additive_gap),
        multiplicative_gap: vary(base.multiplicative_gap),
        ..*base
    }
}
