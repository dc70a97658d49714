//! Per-inverter model-reference adaptive controller: control-voltage
//! synthesis, projection-bounded line-resistance estimation, and the
//! Lyapunov / uniform-bound certificates evaluated at runtime.

use crate::dq::Dq;
use crate::plant::GridEnv;
use crate::reference_model::RefModelParams;

/// Projection-bounded scalar estimator for the line resistance.
///
/// The estimate satisfies `|r_hat| <= r_bar + epsilon` at all times; the
/// smooth projection enforces it and `boundary_clamps` counts the (rare)
/// discrete steps where the fallback clamp had to fire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// Estimated line resistance, Ohm.
    pub r_hat: f64,
    /// Adaptation rate, > 0.
    pub gamma_r: f64,
    /// Projection bound, Ohm, > 0.
    pub r_bar: f64,
    /// Projection margin, Ohm, > 0.
    pub epsilon: f64,
    /// Diagnostic: discrete steps where the boundary clamp fired.
    pub boundary_clamps: u64,
}

impl EstimatorState {
    pub fn new(r_hat0: f64, gamma_r: f64, r_bar: f64, epsilon: f64) -> Self {
        assert!(gamma_r > 0.0 && r_bar > 0.0 && epsilon > 0.0);
        assert!(
            r_hat0.abs() < r_bar,
            "initial estimate must start strictly inside the projection bound"
        );
        EstimatorState {
            r_hat: r_hat0,
            gamma_r,
            r_bar,
            epsilon,
            boundary_clamps: 0,
        }
    }
}

/// Boundary function of the projection: `f(r) = (r^2 - r_bar^2) / (2 eps r_bar + eps^2)`.
/// Zero on `|r| = r_bar`, one on `|r| = r_bar + eps`.
pub fn boundary_fn(r: f64, r_bar: f64, epsilon: f64) -> f64 {
    (r * r - r_bar * r_bar) / (2.0 * epsilon * r_bar + epsilon * epsilon)
}

/// Smooth scalar projection: passes `y` through inside the bound or when
/// `y` points inward; scales it by `1 - f(theta)` in the boundary layer.
pub fn proj_f(theta: f64, y: f64, r_bar: f64, epsilon: f64) -> f64 {
    let f = boundary_fn(theta, r_bar, epsilon);
    let f_prime = 2.0 * theta / (2.0 * epsilon * r_bar + epsilon * epsilon);
    if f <= 0.0 || f_prime * y <= 0.0 {
        y
    } else {
        y * (1.0 - f)
    }
}

/// Current tracking error `i - i_m`.
pub fn tracking_error(i: Dq, i_m: Dq) -> Dq {
    i - i_m
}

/// Adaptive control law:
/// `v = (r_hat - r_m - k) i - l_g0 w_g J i + l_m w_g J i_m
///      + ((r_m + k) I - l_m w_g J) i_ref + v_g`.
pub fn control_voltage(
    i: Dq,
    i_m: Dq,
    i_ref: Dq,
    est: &EstimatorState,
    refp: &RefModelParams,
    l_g0: f64,
    env: &GridEnv,
) -> Dq {
    let rk = refp.r_m + refp.k;
    i * (est.r_hat - rk)
        + i.rot_j() * (-l_g0 * env.omega_g)
        + i_m.rot_j() * (refp.l_m * env.omega_g)
        + i_ref * rk
        + i_ref.rot_j() * (-refp.l_m * env.omega_g)
        + env.v_g
}

/// One explicit-Euler step of the projected update law
/// `dr_hat/dt = gamma_r Proj_f(r_hat, -i_tilde' i)`.
pub fn estimator_step(est: &EstimatorState, i: Dq, i_tilde: Dq, dt: f64) -> EstimatorState {
    estimator_step_innovation(est, -i_tilde.dot(i), dt)
}

/// Euler step of the projected update law with an explicit innovation `y`.
pub fn estimator_step_innovation(est: &EstimatorState, y: f64, dt: f64) -> EstimatorState {
    debug_assert!(dt > 0.0);
    let mut next = *est;
    next.r_hat += dt * est.gamma_r * proj_f(est.r_hat, y, est.r_bar, est.epsilon);
    let limit = est.r_bar + est.epsilon;
    if next.r_hat.abs() > limit {
        next.r_hat = next.r_hat.signum() * limit;
        next.boundary_clamps += 1;
    }
    next
}

/// Lyapunov candidate `V = (l_g/2) ||i_tilde||^2 + r_tilde^2 / (2 gamma_r)`.
pub fn lyapunov_value(i_tilde: Dq, r_tilde: f64, l_g: f64, gamma_r: f64) -> f64 {
    debug_assert!(l_g > 0.0 && gamma_r > 0.0);
    0.5 * l_g * i_tilde.norm_sq() + r_tilde * r_tilde / (2.0 * gamma_r)
}

/// Uniform tracking-error bound `||i_tilde(0)|| + r_bar / sqrt(2 gamma_r)`.
/// Scaled by `||v_g||` it also bounds how far the (p, q) pair can stray
/// from the model powers.
pub fn proposition1_radius(i_tilde0: Dq, r_bar: f64, gamma_r: f64) -> f64 {
    debug_assert!(gamma_r > 0.0);
    i_tilde0.norm() + r_bar / (2.0 * gamma_r).sqrt()
}

/// Per-step controller outputs consumed by the simulation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    /// Commanded inverter voltage, V.
    pub v: Dq,
    /// Current tracking error, A.
    pub i_tilde: Dq,
    /// Sampled Lyapunov-rate estimate `-(r_m + k) ||i_tilde||^2`.
    pub v_dot_lyap: f64,
}

pub fn controller_output(
    i: Dq,
    i_m: Dq,
    i_ref: Dq,
    est: &EstimatorState,
    refp: &RefModelParams,
    l_g0: f64,
    env: &GridEnv,
) -> ControllerOutput {
    let i_tilde = tracking_error(i, i_m);
    ControllerOutput {
        v: control_voltage(i, i_m, i_ref, est, refp, l_g0, env),
        i_tilde,
        v_dot_lyap: -(refp.r_m + refp.k) * i_tilde.norm_sq(),
    }
}
