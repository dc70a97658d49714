//! Continuous-time dq-frame dynamics of a grid-following inverter and its
//! transmission line, with fault and grid-disturbance injection.

use crate::dq::Dq;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("plant is faulted (open line); current is clamped to zero")]
    FaultedPlant,
    #[error("fault injection requires a concrete fault mode")]
    NoFaultMode,
    #[error("invalid line parameters: {0}")]
    BadLineParams(String),
}

/// True and nominal transmission-line parameters of one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineParams {
    /// Line resistance, Ohm.
    pub r_g: f64,
    /// Known nominal line inductance, Henry.
    pub l_g0: f64,
    /// Inductance uncertainty, Henry; the true inductance is `l_g0 + delta_l_g`.
    pub delta_l_g: f64,
}

impl LineParams {
    pub fn new(r_g: f64, l_g0: f64, delta_l_g: f64) -> Result<Self, PlantError> {
        let p = LineParams { r_g, l_g0, delta_l_g };
        if !(r_g > 0.0) {
            return Err(PlantError::BadLineParams(format!("r_g = {r_g} must be > 0")));
        }
        if !(p.l_g() > 0.0) {
            return Err(PlantError::BadLineParams(format!(
                "l_g = l_g0 + delta_l_g = {} must be > 0",
                p.l_g()
            )));
        }
        Ok(p)
    }

    /// True line inductance, Henry.
    pub fn l_g(&self) -> f64 {
        self.l_g0 + self.delta_l_g
    }
}

/// Grid-side boundary conditions seen (and measured) by every inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEnv {
    /// Measured grid voltage in the dq frame, V.
    pub v_g: Dq,
    /// Grid angular frequency, rad/s.
    pub omega_g: f64,
}

impl GridEnv {
    /// Builds the environment from a dq voltage and a frequency in Hz.
    /// The model equations are only dimensionally consistent in rad/s,
    /// so the conversion lives here and configs stay in Hz.
    pub fn from_hz(v_g: Dq, f_hz: f64) -> Self {
        GridEnv {
            v_g,
            omega_g: 2.0 * std::f64::consts::PI * f_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultMode {
    #[default]
    None,
    /// Transmission line open: the inverter current is forced to zero.
    OpenLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    /// Inverter current, A.
    pub i: Dq,
    pub faulted: bool,
    pub fault_mode: FaultMode,
}

impl PlantState {
    pub fn new(i: Dq) -> Self {
        PlantState {
            i,
            faulted: false,
            fault_mode: FaultMode::None,
        }
    }
}

/// Current derivative of a healthy plant:
/// `di/dt = (1/l_g) (-(r_g I - l_g w_g J) i + v - v_g)`.
pub fn plant_derivative(
    state: &PlantState,
    v: Dq,
    line: &LineParams,
    env: &GridEnv,
) -> Result<Dq, PlantError> {
    if state.faulted {
        return Err(PlantError::FaultedPlant);
    }
    let l_g = line.l_g();
    Ok((state.i * -line.r_g + state.i.rot_j() * (l_g * env.omega_g) + v - env.v_g) / l_g)
}

/// Active and reactive power delivered at the measured grid voltage:
/// `p = v_g' i`, `q = v_g' J i`.
pub fn measure_powers(state: &PlantState, env: &GridEnv) -> (f64, f64) {
    let p = env.v_g.dot(state.i);
    let q = env.v_g.dot(state.i.rot_j());
    (p, q)
}

/// Applies a fault. `OpenLine` clamps the current to zero for all
/// subsequent time; injecting into an already-faulted plant is a no-op.
pub fn inject_fault(state: &PlantState, mode: FaultMode) -> Result<PlantState, PlantError> {
    match mode {
        FaultMode::None => Err(PlantError::NoFaultMode),
        FaultMode::OpenLine => {
            if state.faulted && state.fault_mode == FaultMode::OpenLine {
                return Ok(*state);
            }
            Ok(PlantState {
                i: Dq::ZERO,
                faulted: true,
                fault_mode: FaultMode::OpenLine,
            })
        }
    }
}

/// Scales the grid voltage by `(1 + fraction)`; frequency is unchanged.
pub fn apply_swell(env: &GridEnv, fraction: f64) -> GridEnv {
    debug_assert!(fraction > -1.0);
    GridEnv {
        v_g: env.v_g * (1.0 + fraction),
        omega_g: env.omega_g,
    }
}
