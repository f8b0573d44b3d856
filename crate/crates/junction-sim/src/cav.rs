//! Closed-form CAV trajectory planning: an effort-optimal cruise to the merging
//! zone (cubic position polynomial) and a gap-tracking variant used behind a
//! slower predecessor (exponential-trigonometric solution of the weighted
//! effort-plus-spacing objective). Both come from two-point boundary problems
//! with a zero terminal-acceleration condition, solved as small linear systems.

use crate::core::ConstraintBounds;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CavError {
    #[error("planning horizon must end after it starts (t0={0}, t_m={1})")]
    DegenerateHorizon(f64, f64),
    #[error("boundary system is singular")]
    SingularSystem,
    #[error("boundary system too ill-conditioned to trust (residual {0:.3e})")]
    IllConditioned(f64),
    #[error("weights must be positive (accel_weight={0}, gap_weight={1})")]
    InvalidWeights(f64, f64),
}

/// Objective weights: `accel_weight` and `gap_weight` multiply the squared
/// acceleration and squared spacing error of the following objective;
/// `effort_scale` multiplies the pure-effort objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub accel_weight: f64,
    pub gap_weight: f64,
    pub effort_scale: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { accel_weight: 1.0, gap_weight: 1.0, effort_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CavMode {
    FreeDriving,
    AdaptiveFollowing,
}

/// Gap ratio above the engagement gap at which a follower releases back to
/// free driving. Without the band, a follower holding the tracked gap exactly
/// at the engagement threshold would flip modes every step.
pub const RELEASE_FACTOR: f64 = 1.2;

/// Mode switch on the gap to the relevant predecessor. Engage at
/// `engage_gap`, release above `RELEASE_FACTOR * engage_gap` or when the
/// predecessor disappears.
pub fn transition_mode(current: CavMode, gap_to_pred: Option<f64>, engage_gap: f64) -> CavMode {
    match (current, gap_to_pred) {
        (_, None) => CavMode::FreeDriving,
        (CavMode::FreeDriving, Some(g)) if g <= engage_gap => CavMode::AdaptiveFollowing,
        (CavMode::FreeDriving, Some(_)) => CavMode::FreeDriving,
        (CavMode::AdaptiveFollowing, Some(g)) if g > RELEASE_FACTOR * engage_gap => {
            CavMode::FreeDriving
        }
        (CavMode::AdaptiveFollowing, Some(_)) => CavMode::AdaptiveFollowing,
    }
}

/// Cruise plan in absolute time: u = a·t + b, v and p its antiderivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub valid_from: f64,
    pub valid_to: f64,
}

impl FdCoefficients {
    pub fn accel(&self, t: f64) -> f64 {
        self.a * t + self.b
    }

    pub fn speed(&self, t: f64) -> f64 {
        (0.5 * self.a * t + self.b) * t + self.c
    }

    pub fn position(&self, t: f64) -> f64 {
        ((self.a / 6.0 * t + 0.5 * self.b) * t + self.c) * t + self.d
    }

    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        (self.position(t), self.speed(t), self.accel(t))
    }

    pub fn terminal_speed(&self) -> f64 {
        self.speed(self.valid_to)
    }

    /// Effort cost `effort_scale/2 * integral of u^2` over the plan window.
    pub fn cost(&self, effort_scale: f64) -> f64 {
        let sq = |t: f64| ((self.a * self.a / 3.0 * t + self.a * self.b) * t + self.b * self.b) * t;
        0.5 * effort_scale * (sq(self.valid_to) - sq(self.valid_from))
    }

    /// Exact speed/acceleration envelope over the plan window. Acceleration is
    /// affine so its extremes sit at the endpoints; speed is quadratic with one
    /// interior stationary point where u crosses zero.
    pub fn range_check(&self) -> RangeCheck {
        let (t0, t1) = (self.valid_from, self.valid_to);
        let (u0, u1) = (self.accel(t0), self.accel(t1));
        let mut v_lo = self.speed(t0).min(self.speed(t1));
        let mut v_hi = self.speed(t0).max(self.speed(t1));
        if self.a != 0.0 {
            let t_star = -self.b / self.a;
            if t_star > t0 && t_star < t1 {
                let v_star = self.speed(t_star);
                v_lo = v_lo.min(v_star);
                v_hi = v_hi.max(v_star);
            }
        }
        RangeCheck { v_low: v_lo, v_high: v_hi, u_low: u0.min(u1), u_high: u0.max(u1) }
    }
}

/// Envelope of a plan, used to flag trajectories the integrator would clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCheck {
    pub v_low: f64,
    pub v_high: f64,
    pub u_low: f64,
    pub u_high: f64,
}

impl RangeCheck {
    pub fn within(&self, bounds: &ConstraintBounds, tol: f64) -> bool {
        self.v_low >= bounds.v_min - tol
            && self.v_high <= bounds.v_max + tol
            && self.u_low >= bounds.u_min - tol
            && self.u_high <= bounds.u_max + tol
    }
}

/// Cruise plan from state (p0, v0) at t0 to position `target_p` at `t_m`,
/// leaving terminal speed free (zero terminal acceleration).
pub fn solve_fd(
    t0: f64,
    p0: f64,
    v0: f64,
    t_m: f64,
    target_p: f64,
) -> Result<FdCoefficients, CavError> {
    if !(t_m > t0) {
        return Err(CavError::DegenerateHorizon(t0, t_m));
    }
    let m = [
        [t0 * t0 * t0 / 6.0, 0.5 * t0 * t0, t0, 1.0],
        [0.5 * t0 * t0, t0, 1.0, 0.0],
        [t_m * t_m * t_m / 6.0, 0.5 * t_m * t_m, t_m, 1.0],
        [-t_m, -1.0, 0.0, 0.0],
    ];
    let rhs = [p0, v0, target_p, 0.0];
    let x = solve4(m, rhs)?;
    Ok(FdCoefficients { a: x[0], b: x[1], c: x[2], d: x[3], valid_from: t0, valid_to: t_m })
}

/// Shortest horizon over `distance` from entry speed `v0` for which the cruise
/// plan respects the bounds: the terminal-speed limit gives
/// T >= 1.5*D/(v_max + v0/2) and the initial-acceleration limit gives the
/// positive root of u_max*T^2 + 3*v0*T - 3*D = 0.
pub fn min_feasible_horizon(v0: f64, distance: f64, bounds: &ConstraintBounds) -> f64 {
    let t_speed = 1.5 * distance / (bounds.v_max + 0.5 * v0);
    let t_accel = (-3.0 * v0 + (9.0 * v0 * v0 + 12.0 * bounds.u_max * distance).sqrt())
        / (2.0 * bounds.u_max);
    t_speed.max(t_accel)
}

/// Predecessor state frozen at engagement; the follower plans against its
/// constant-speed extrapolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredecessorAnchor {
    pub position: f64,
    pub speed: f64,
}

/// Gap-tracking plan: position is a four-term exponential-trigonometric
/// oscillation around the predecessor's extrapolated position offset by the
/// desired headway. Time is measured from `valid_from` for conditioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub anchor: PredecessorAnchor,
    pub headway: f64,
    pub valid_from: f64,
    pub valid_to: f64,
}

impl AfCoefficients {
    fn parts(&self, t: f64) -> (f64, f64, f64, f64, f64) {
        let g = self.alpha * (t - self.valid_from);
        (g.exp(), (-g).exp(), g.cos(), g.sin(), t - self.valid_from)
    }

    pub fn predecessor_position(&self, t: f64) -> f64 {
        self.anchor.position + self.anchor.speed * (t - self.valid_from)
    }

    pub fn position(&self, t: f64) -> f64 {
        let (ep, en, cos, sin, _) = self.parts(t);
        self.a * ep * cos + self.b * en * cos + self.c * ep * sin + self.d * en * sin
            + self.predecessor_position(t)
            - self.headway
    }

    pub fn speed(&self, t: f64) -> f64 {
        let (ep, en, cos, sin, _) = self.parts(t);
        self.alpha
            * (self.a * ep * (cos - sin) - self.b * en * (cos + sin)
                + self.c * ep * (cos + sin)
                + self.d * en * (cos - sin))
            + self.anchor.speed
    }

    pub fn accel(&self, t: f64) -> f64 {
        let (ep, en, cos, sin, _) = self.parts(t);
        2.0 * self.alpha * self.alpha
            * (-self.a * ep * sin + self.b * en * sin + self.c * ep * cos - self.d * en * cos)
    }

    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        (self.position(t), self.speed(t), self.accel(t))
    }

    /// Spacing error relative to the extrapolated predecessor: gap minus headway.
    pub fn gap_error(&self, t: f64) -> f64 {
        self.predecessor_position(t) - self.position(t) - self.headway
    }

    /// Objective value 1/2 * integral of (w_u u^2 + w_s e^2), by Simpson
    /// quadrature over the plan window.
    pub fn cost(&self, weights: &ObjectiveWeights) -> f64 {
        let n = 2000;
        let h = (self.valid_to - self.valid_from) / n as f64;
        let density = |t: f64| {
            let u = self.accel(t);
            let e = self.gap_error(t);
            0.5 * (weights.accel_weight * u * u + weights.gap_weight * e * e)
        };
        let mut sum = density(self.valid_from) + density(self.valid_to);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * density(self.valid_from + k as f64 * h);
        }
        sum * h / 3.0
    }
}

/// Natural frequency of the gap-tracking solution for the given weights.
pub fn alpha(accel_weight: f64, gap_weight: f64) -> f64 {
    let w = (4.0 * accel_weight * gap_weight).sqrt() / (2.0 * accel_weight);
    (w / 2.0).sqrt()
}

/// Gap-tracking plan from state (p1, v1) at t1 to position `target_p` at
/// `t_m` with zero terminal acceleration, tracking `headway` behind the
/// anchored predecessor extrapolation.
#[allow(clippy::too_many_arguments)]
pub fn solve_af(
    t1: f64,
    p1: f64,
    v1: f64,
    t_m: f64,
    target_p: f64,
    anchor: PredecessorAnchor,
    headway: f64,
    weights: &ObjectiveWeights,
) -> Result<AfCoefficients, CavError> {
    if !(t_m > t1) {
        return Err(CavError::DegenerateHorizon(t1, t_m));
    }
    if weights.accel_weight <= 0.0 || weights.gap_weight <= 0.0 {
        return Err(CavError::InvalidWeights(weights.accel_weight, weights.gap_weight));
    }
    let al = alpha(weights.accel_weight, weights.gap_weight);
    let horizon = t_m - t1;
    let g = al * horizon;
    if g > 300.0 {
        // exp(g) would overflow well before this; refuse rather than return noise
        return Err(CavError::IllConditioned(f64::INFINITY));
    }
    let (ep, en, cos, sin) = (g.exp(), (-g).exp(), g.cos(), g.sin());
    let a2 = 2.0 * al * al;
    let m = [
        [1.0, 1.0, 0.0, 0.0],
        [al, -al, al, al],
        [ep * cos, en * cos, ep * sin, en * sin],
        [-a2 * ep * sin, a2 * en * sin, a2 * ep * cos, -a2 * en * cos],
    ];
    let rhs = [
        p1 - (anchor.position - headway),
        v1 - anchor.speed,
        target_p - (anchor.position + anchor.speed * horizon - headway),
        0.0,
    ];
    let x = solve4(m, rhs)?;
    let coeffs = AfCoefficients {
        a: x[0],
        b: x[1],
        c: x[2],
        d: x[3],
        alpha: al,
        anchor,
        headway,
        valid_from: t1,
        valid_to: t_m,
    };
    let residual = (coeffs.position(t1) - p1)
        .abs()
        .max((coeffs.speed(t1) - v1).abs())
        .max((coeffs.position(t_m) - target_p).abs())
        .max(coeffs.accel(t_m).abs());
    if !residual.is_finite() || residual > 1e-9 {
        return Err(CavError::IllConditioned(residual));
    }
    Ok(coeffs)
}

/// Box-clamps a commanded acceleration and keeps the post-step speed inside
/// the speed box. Returns the applied value and whether any clamp was active.
pub fn clamp_controls(u_raw: f64, v: f64, bounds: &ConstraintBounds, dt: f64) -> (f64, bool) {
    let mut u = u_raw.clamp(bounds.u_min, bounds.u_max);
    let v_next = v + u * dt;
    if v_next > bounds.v_max {
        u = (bounds.v_max - v) / dt;
    } else if v_next < bounds.v_min {
        u = (bounds.v_min - v) / dt;
    }
    u = u.clamp(bounds.u_min, bounds.u_max);
    (u, (u - u_raw).abs() > 1e-12)
}

/// Gaussian elimination with partial pivoting on a row/column-equilibrated
/// 4x4 system. Column scaling keeps the grown/decayed exponential basis
/// columns comparable; solutions are unscaled on the way out.
fn solve4(m: [[f64; 4]; 4], rhs: [f64; 4]) -> Result<[f64; 4], CavError> {
    let mut col_scale = [0.0f64; 4];
    for j in 0..4 {
        for row in &m {
            col_scale[j] = col_scale[j].max(row[j].abs());
        }
        if col_scale[j] == 0.0 || !col_scale[j].is_finite() {
            return Err(CavError::SingularSystem);
        }
    }
    let mut a = [[0.0f64; 5]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = m[i][j] / col_scale[j];
        }
        a[i][4] = rhs[i];
        let row_max = a[i][..4].iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if row_max == 0.0 {
            return Err(CavError::SingularSystem);
        }
        for x in a[i].iter_mut() {
            *x /= row_max;
        }
    }
    for col in 0..4 {
        let pivot_row = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-14 {
            return Err(CavError::SingularSystem);
        }
        a.swap(col, pivot_row);
        for i in col + 1..4 {
            let f = a[i][col] / a[col][col];
            for j in col..5 {
                a[i][j] -= f * a[col][j];
            }
        }
    }
    let mut x = [0.0f64; 4];
    for i in (0..4).rev() {
        let mut acc = a[i][4];
        for j in i + 1..4 {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    for j in 0..4 {
        x[j] /= col_scale[j];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cruise_already_on_target_needs_no_effort() {
        let c = solve_fd(0.0, 0.0, 10.0, 40.0, 400.0).unwrap();
        assert!(c.a.abs() < 1e-12 && c.b.abs() < 1e-12);
        assert_relative_eq!(c.c, 10.0, max_relative = 1e-12);
        assert!(c.d.abs() < 1e-9);
        assert!(c.cost(1.0) < 1e-18);
    }

    #[test]
    fn cruise_accelerates_to_cover_extra_distance() {
        let c = solve_fd(0.0, 0.0, 10.0, 30.0, 400.0).unwrap();
        assert_relative_eq!(c.a, -1.0 / 90.0, max_relative = 1e-9);
        assert_relative_eq!(c.b, 1.0 / 3.0, max_relative = 1e-9);
        assert_relative_eq!(c.accel(0.0), 1.0 / 3.0, max_relative = 1e-9);
        assert_relative_eq!(c.speed(30.0), 15.0, max_relative = 1e-9);
        assert_relative_eq!(c.position(30.0), 400.0, max_relative = 1e-9);
        let (p, v, u) = c.eval(0.0);
        assert!((p, v) == (0.0, 10.0) && (u - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cruise_sheds_speed_when_entering_fast_on_a_late_slot() {
        let c = solve_fd(2.0, 0.0, 15.0, 41.0, 400.0).unwrap();
        assert_relative_eq!(c.a, 0.0093562, max_relative = 1e-4);
        assert_relative_eq!(c.b, -0.38360, max_relative = 1e-4);
        assert_relative_eq!(c.accel(2.0), -0.3649, max_relative = 1e-3);
        assert_relative_eq!(c.speed(41.0), 7.885, max_relative = 1e-3);
        assert_relative_eq!(c.position(41.0), 400.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_horizon_is_rejected() {
        assert!(matches!(
            solve_fd(5.0, 0.0, 10.0, 5.0, 400.0),
            Err(CavError::DegenerateHorizon(..))
        ));
    }

    #[test]
    fn cruise_derivatives_are_consistent() {
        let c = solve_fd(1.0, 3.0, 9.0, 37.0, 400.0).unwrap();
        let h = 1e-5;
        for k in 0..20 {
            let t = 1.0 + k as f64 * 1.8;
            let dv = (c.position(t + h) - c.position(t - h)) / (2.0 * h);
            let du = (c.speed(t + h) - c.speed(t - h)) / (2.0 * h);
            assert_relative_eq!(dv, c.speed(t), max_relative = 1e-6, epsilon = 1e-6);
            assert_relative_eq!(du, c.accel(t), max_relative = 1e-6, epsilon = 1e-6);
        }
    }

    #[test]
    fn minimum_time_slot_violates_the_accel_box() {
        // at the bang-control lower bound the cubic needs 1.5x the accel limit
        let bounds = ConstraintBounds::new(0.0, 60.0, -6.0, 3.0).unwrap();
        let c = solve_fd(0.0, 0.0, 10.0, 40.0 / 3.0, 400.0).unwrap();
        let r = c.range_check();
        assert!(!r.within(&bounds, 1e-9));
        assert_relative_eq!(r.u_high, 4.5, max_relative = 1e-9);
    }

    #[test]
    fn feasible_horizon_is_tight() {
        let bounds = ConstraintBounds::new(0.0, 13.0, -6.0, 3.0).unwrap();
        for v0 in [8.0, 11.0, 13.0] {
            let t = min_feasible_horizon(v0, 400.0, &bounds);
            let ok = solve_fd(0.0, 0.0, v0, t, 400.0).unwrap();
            assert!(ok.range_check().within(&bounds, 1e-9));
            let tight = solve_fd(0.0, 0.0, v0, 0.97 * t, 400.0).unwrap();
            assert!(!tight.range_check().within(&bounds, 1e-9));
        }
    }

    #[test]
    fn tracking_frequency_matches_weights() {
        assert_relative_eq!(alpha(1.0, 1.0), 0.5f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(alpha(1.0, 4.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tracking_plan_meets_its_boundary_conditions() {
        let w = ObjectiveWeights::default();
        for (t1, p1, v1, t_m, pp, vp) in [
            (4.2, 31.7, 14.2, 41.0, 41.7, 10.0),
            (0.0, 0.0, 12.0, 35.0, 18.0, 9.0),
            (10.0, 50.0, 8.0, 70.0, 63.0, 7.5),
            (3.0, 15.4, 14.4, 41.0, 30.4, 10.0),
        ] {
            let c = solve_af(
                t1,
                p1,
                v1,
                t_m,
                400.0,
                PredecessorAnchor { position: pp, speed: vp },
                10.0,
                &w,
            )
            .unwrap();
            assert!((c.position(t1) - p1).abs() < 1e-9);
            assert!((c.speed(t1) - v1).abs() < 1e-9);
            assert!((c.position(t_m) - 400.0).abs() < 1e-9);
            assert!(c.accel(t_m).abs() < 1e-9);
        }
    }

    #[test]
    fn tracking_derivatives_are_consistent() {
        let w = ObjectiveWeights { accel_weight: 1.0, gap_weight: 2.5, effort_scale: 1.0 };
        let c = solve_af(
            2.0,
            10.0,
            13.0,
            40.0,
            400.0,
            PredecessorAnchor { position: 24.0, speed: 10.0 },
            10.0,
            &w,
        )
        .unwrap();
        let h = 1e-5;
        for k in 0..19 {
            let t = 2.5 + k as f64 * 2.0;
            let dv = (c.position(t + h) - c.position(t - h)) / (2.0 * h);
            let du = (c.speed(t + h) - c.speed(t - h)) / (2.0 * h);
            assert_relative_eq!(dv, c.speed(t), max_relative = 1e-5, epsilon = 1e-5);
            assert_relative_eq!(du, c.accel(t), max_relative = 1e-4, epsilon = 1e-5);
        }
    }

    #[test]
    fn tracking_cost_approaches_cruise_cost_as_gap_weight_vanishes() {
        // the tracking term perturbs the cubic at order gap_weight * T^4, so
        // the weight must be small against 1/T^4 before the costs agree
        let fd = solve_fd(0.0, 0.0, 12.0, 40.0, 400.0).unwrap();
        let fd_cost = fd.cost(1.0);
        let anchor = PredecessorAnchor { position: 30.0, speed: 9.5 };
        for (ws, cost_tol, dev_tol) in [(1e-6, 0.01, 0.1), (1e-8, 5e-4, 0.005)] {
            let w = ObjectiveWeights { accel_weight: 1.0, gap_weight: ws, effort_scale: 1.0 };
            let af = solve_af(0.0, 0.0, 12.0, 40.0, 400.0, anchor, 10.0, &w).unwrap();
            let ratio = af.cost(&w) / fd_cost;
            assert!((ratio - 1.0).abs() < cost_tol, "ws={ws}: ratio {ratio}");
            let dev = (0..=400)
                .map(|k| (af.position(k as f64 * 0.1) - fd.position(k as f64 * 0.1)).abs())
                .fold(0.0f64, f64::max);
            assert!(dev < dev_tol, "ws={ws}: max deviation {dev}");
        }
    }

    #[test]
    fn mode_switch_engages_below_threshold_with_release_band() {
        use CavMode::*;
        assert_eq!(transition_mode(FreeDriving, Some(12.0), 10.0), FreeDriving);
        assert_eq!(transition_mode(FreeDriving, Some(9.5), 10.0), AdaptiveFollowing);
        assert_eq!(transition_mode(AdaptiveFollowing, None, 10.0), FreeDriving);
        assert_eq!(transition_mode(AdaptiveFollowing, Some(11.0), 10.0), AdaptiveFollowing);
        assert_eq!(transition_mode(AdaptiveFollowing, Some(12.5), 10.0), FreeDriving);
    }

    #[test]
    fn clamp_limits_accel_and_speed() {
        let b = ConstraintBounds::new(0.0, 13.0, -6.0, 3.0).unwrap();
        assert_eq!(clamp_controls(5.0, 10.0, &b, 0.05), (3.0, true));
        let (u, sat) = clamp_controls(1.0, 13.0, &b, 0.05);
        assert!(u.abs() < 1e-12 && sat);
        assert_eq!(clamp_controls(-1.0, 8.0, &b, 0.05), (-1.0, false));
        let (u, sat) = clamp_controls(-3.0, 0.1, &b, 0.05);
        assert_relative_eq!(u, -2.0, max_relative = 1e-12);
        assert!(sat);
    }
}
