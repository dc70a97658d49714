//! Fault-free reference current dynamics tracked by each low-level
//! controller, plus the analytic exponential power-tracking bound used as
//! a runtime certificate.

use crate::dq::Dq;
use crate::plant::GridEnv;

/// Known reference-model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefModelParams {
    /// Model resistance, Ohm.
    pub r_m: f64,
    /// Model inductance, Henry.
    pub l_m: f64,
    /// Convergence-rate tuning gain, Ohm.
    pub k: f64,
}

impl RefModelParams {
    pub fn new(r_m: f64, l_m: f64, k: f64) -> Self {
        assert!(r_m > 0.0 && l_m > 0.0 && k > 0.0);
        RefModelParams { r_m, l_m, k }
    }

    /// Exponential tracking rate `(r_m + k) / l_m`, 1/s.
    pub fn decay_rate(&self) -> f64 {
        (self.r_m + self.k) / self.l_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefModelState {
    /// Reference-model current, A.
    pub i_m: Dq,
}

/// `di_m/dt = -(1/l_m) ((r_m + k) I - l_m w_g J)(i_m - i_ref)`.
pub fn refmodel_derivative(
    state: &RefModelState,
    i_ref: Dq,
    params: &RefModelParams,
    env: &GridEnv,
) -> Dq {
    let e = state.i_m - i_ref;
    (e * -(params.r_m + params.k) + e.rot_j() * (params.l_m * env.omega_g)) / params.l_m
}

/// Exponential bound on the model power-tracking error:
/// `||(p_m(t) - p_ref, q_m(t) - q_ref)|| <= ||(p_m(0) - p_ref, q_m(0) - q_ref)|| exp(-((r_m+k)/l_m) t)`.
pub fn power_tracking_bound(
    p_m0: f64,
    q_m0: f64,
    p_ref: f64,
    q_ref: f64,
    params: &RefModelParams,
    t: f64,
) -> f64 {
    debug_assert!(t >= 0.0);
    let e0 = (p_m0 - p_ref).hypot(q_m0 - q_ref);
    e0 * (-params.decay_rate() * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equilibrium_at_reference() {
        let params = RefModelParams::new(0.027, 0.0367, 7.5);
        let env = GridEnv::from_hz(Dq::new(392.0, 0.0), 60.0);
        let i_ref = Dq::new(1.2, -0.4);
        let state = RefModelState { i_m: i_ref };
        assert_eq!(refmodel_derivative(&state, i_ref, &params, &env), Dq::ZERO);
    }

    #[test]
    fn derivative_matches_hand_arithmetic() {
        // i_m - i_ref = (1,0), r_m + k = 2, l_m = 0.5, w_g = 1:
        // (1/0.5)(-(2 (1,0) - 0.5 (0,-1))) = (-4, -1).
        let params = RefModelParams::new(1.5, 0.5, 0.5);
        let env = GridEnv {
            v_g: Dq::new(1.0, 0.0),
            omega_g: 1.0,
        };
        let state = RefModelState { i_m: Dq::new(1.0, 0.0) };
        let d = refmodel_derivative(&state, Dq::ZERO, &params, &env);
        assert_abs_diff_eq!(d.d, -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.q, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_is_linear_in_error() {
        let params = RefModelParams::new(0.027, 0.0367, 7.5);
        let env = GridEnv::from_hz(Dq::new(392.0, 0.0), 60.0);
        let i_ref = Dq::new(0.7, 0.1);
        let e = Dq::new(0.3, -0.9);
        let c = 4.25;
        let d1 = refmodel_derivative(&RefModelState { i_m: i_ref + e }, i_ref, &params, &env);
        let dc = refmodel_derivative(&RefModelState { i_m: i_ref + e * c }, i_ref, &params, &env);
        assert_abs_diff_eq!(dc.d, c * d1.d, epsilon = 1e-9);
        assert_abs_diff_eq!(dc.q, c * d1.q, epsilon = 1e-9);
    }

    #[test]
    fn power_bound_examples() {
        let params = RefModelParams::new(1.0, 1.0, 9.0); // rate = 10
        assert_abs_diff_eq!(params.decay_rate(), 10.0, epsilon = 1e-12);
        // t = 0 gives the initial error norm.
        assert_abs_diff_eq!(
            power_tracking_bound(3.0, 4.0, 0.0, 0.0, &params, 0.0),
            5.0,
            epsilon = 1e-12
        );
        // Unit initial error halves after t = ln(2)/10.
        let t_half = std::f64::consts::LN_2 / 10.0;
        assert_abs_diff_eq!(
            power_tracking_bound(1.0, 0.0, 0.0, 0.0, &params, t_half),
            0.5,
            epsilon = 1e-12
        );
        // Zero initial error stays zero.
        assert_eq!(power_tracking_bound(2.0, -1.0, 2.0, -1.0, &params, 1.0), 0.0);
    }
}
