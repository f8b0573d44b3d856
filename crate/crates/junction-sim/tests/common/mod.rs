//! Discretized optimal-control oracle for the acceptance suite. The control
//! is zero-order-hold on a fine grid and the resulting equality-constrained
//! quadratic program is solved by conjugate gradients on the normal
//! equations, sharing no code with the closed forms under test.

pub const ORACLE_STEP: f64 = 0.01;

/// Double-integrator tracking problem in displacement coordinates:
/// minimize 1/2 integral of (w_u u^2 + w_s e^2) over [0, duration], subject
/// to x(0) = 0, x'(0) = v0 and x(duration) = travel, where the gap error is
/// e(t) = gap0 + (lead_speed - v0) t - (x(t) - v0 t).
pub struct TrackingProblem {
    pub duration: f64,
    pub v0: f64,
    pub travel: f64,
    pub accel_weight: f64,
    pub gap_weight: f64,
    pub gap0: f64,
    pub lead_speed: f64,
}

pub struct OracleSolution {
    pub cost: f64,
    /// Displacement x at every grid time k * ORACLE_STEP.
    pub positions: Vec<f64>,
}

/// Maps controls to position deviations from the coasting trajectory:
/// (A u)_k = h^2 * sum over j < k of (k - j - 1/2) u_j, via running sums.
fn control_to_displacement(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; n + 1];
    let (mut s0, mut s1) = (0.0, 0.0);
    for k in 1..=n {
        s0 += u[k - 1];
        s1 += (k - 1) as f64 * u[k - 1];
        out[k] = h * h * ((k as f64 - 0.5) * s0 - s1);
    }
    out
}

/// Adjoint of `control_to_displacement`, via suffix sums.
fn displacement_to_control(w: &[f64], h: f64) -> Vec<f64> {
    let n = w.len() - 1;
    let mut out = vec![0.0; n];
    let (mut t0, mut t1) = (0.0, 0.0);
    for j in (0..n).rev() {
        t0 += w[j + 1];
        t1 += (j + 1) as f64 * w[j + 1];
        out[j] = h * h * (t1 - (j as f64 + 0.5) * t0);
    }
    out
}

/// H u = h(w_u u + w_s A^T W A u) with trapezoid weights W.
fn apply_hessian(u: &[f64], h: f64, w_u: f64, w_s: f64) -> Vec<f64> {
    let mut out: Vec<f64> = u.iter().map(|x| h * w_u * x).collect();
    if w_s > 0.0 {
        let mut au = control_to_displacement(u, h);
        let n = au.len() - 1;
        au[0] *= 0.5;
        au[n] *= 0.5;
        for (o, a) in out.iter_mut().zip(displacement_to_control(&au, h)) {
            *o += h * w_s * a;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(h: f64, w_u: f64, w_s: f64, rhs: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; rhs.len()];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = rr.max(1e-300) * 1e-26;
    for _ in 0..200_000 {
        if rr <= target {
            return x;
        }
        let hp = apply_hessian(&p, h, w_u, w_s);
        let alpha = rr / dot(&p, &hp);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    panic!("conjugate gradient failed to converge (residual ratio {:.3e})", rr / target * 1e-26);
}

pub fn solve_tracking(problem: &TrackingProblem) -> OracleSolution {
    let h = ORACLE_STEP;
    let n = (problem.duration / h).round() as usize;
    assert!(n >= 2, "horizon shorter than two oracle steps");
    let (w_u, w_s) = (problem.accel_weight, problem.gap_weight);
    let dv = problem.lead_speed - problem.v0;

    // Terminal-position constraint row c and residual r.
    let c: Vec<f64> = (0..n).map(|j| h * h * (n as f64 - j as f64 - 0.5)).collect();
    let residual = problem.travel - problem.v0 * problem.duration;

    // Gap error of the coasting follower at each grid time, trapezoid-weighted.
    let rhs = if w_s > 0.0 {
        let mut b: Vec<f64> = (0..=n).map(|k| problem.gap0 + dv * k as f64 * h).collect();
        b[0] *= 0.5;
        b[n] *= 0.5;
        displacement_to_control(&b, h).iter().map(|x| h * w_s * x).collect()
    } else {
        vec![0.0; n]
    };

    let free = conjugate_gradient(h, w_u, w_s, &rhs);
    let dual_dir = conjugate_gradient(h, w_u, w_s, &c);
    let mu = (residual - dot(&c, &free)) / dot(&c, &dual_dir);
    let u: Vec<f64> = free.iter().zip(&dual_dir).map(|(f, d)| f + mu * d).collect();

    // Exact zero-order-hold rollout and the matching quadrature of the cost.
    let mut positions = Vec::with_capacity(n + 1);
    let mut x = 0.0;
    let mut v = problem.v0;
    positions.push(x);
    for &uk in &u {
        x += h * v + 0.5 * h * h * uk;
        v += h * uk;
        positions.push(x);
    }
    let mut cost = 0.5 * h * w_u * dot(&u, &u);
    if w_s > 0.0 {
        for k in 0..=n {
            let t = k as f64 * h;
            let e = problem.gap0 + dv * t - (positions[k] - problem.v0 * t);
            let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
            cost += 0.5 * h * w_s * weight * e * e;
        }
    }
    OracleSolution { cost, positions }
}
