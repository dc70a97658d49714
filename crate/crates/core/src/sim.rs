//! Fixed-step hierarchical simulation.
//!
//! The plant, reference model and estimator of every inverter advance at
//! `dt_plant`; the high-level splitter re-solves on the slower allocator
//! cadence and its current references are held constant in between.
//! Scheduled events (open-line faults, voltage swells) fire at the first
//! step boundary at or after their time, atomically.

use crate::allocator::{
    current_reference, solve, AllocError, AllocatorState, BetaDetector, CostSpec, StopRule,
};
use crate::config::{ConfigError, ScenarioConfig, SimEvent, SplitterKind};
use crate::dq::Dq;
use crate::graph::{build_topology, GraphError, GraphTopology};
use crate::mrac::{
    controller_output, estimator_step, estimator_step_innovation, lyapunov_value, tracking_error,
    ControllerOutput, EstimatorState,
};
use crate::plant::{
    inject_fault, measure_powers, plant_derivative, apply_swell, FaultMode, GridEnv, LineParams,
    PlantState,
};
use crate::reference_model::{refmodel_derivative, RefModelParams, RefModelState};
use serde::Serialize;
use thiserror::Error;

/// Any state component beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Below this current magnitude a line is considered dead when the
/// tracking error is simultaneously large (ten times this value). A dead
/// line produces zero innovation in the adaptive law, so the estimator is
/// instead driven outward to its projection rail, which is the signature
/// the penalty schedule keys on.
pub const DEAD_LINE_CURRENT_A: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("numerical divergence at t = {t_s} s in inverter {ibr}")]
    NumericalDivergence { t_s: f64, ibr: usize },
}

/// Per-inverter sample within a [`SimRecord`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrSample {
    pub i: Dq,
    pub v: Dq,
    pub p_w: f64,
    pub q_var: f64,
    pub i_ref: Dq,
    pub r_hat_ohm: f64,
    pub beta: f64,
    pub lyapunov: f64,
}

/// One output row of the time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t_s: f64,
    pub ibrs: Vec<IbrSample>,
    pub sum_p_w: f64,
    pub sum_q_var: f64,
    pub alloc_residual_p_w: f64,
    pub alloc_residual_q_var: f64,
}

/// Snapshot of one allocator invocation (one row per node in the CSV).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocInvocation {
    pub t_s: f64,
    pub iters: u64,
    /// Per node: (lambda, nu, p, q).
    pub nodes: Vec<(f64, f64, f64, f64)>,
    pub residual_p_w: f64,
    pub residual_q_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventMetrics {
    pub t_s: f64,
    pub kind: String,
    /// Largest |sum p - p_A| between this event and the next one, W.
    pub max_abs_dev_w: f64,
    /// Same, relative to S_base.
    pub max_rel_dev: f64,
    /// Time to enter and stay inside the +-2% band, seconds after the
    /// event; absent if the band is never held.
    pub settling_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub splitter: String,
    pub p_a_w: f64,
    pub q_a_var: f64,
    pub s_base_va: f64,
    pub n_events: usize,
    pub events: Vec<EventMetrics>,
    /// Largest relative aggregate deviation after the startup transient
    /// window and before the first event (whole run when eventless).
    pub pre_event_max_rel_dev: f64,
    /// Relative aggregate deviation at the final sample.
    pub final_rel_dev: f64,
    /// Mean per-inverter active power over the last tenth of the run, W.
    pub steady_state_split_w: Vec<f64>,
    /// Largest tracking-error norm per inverter over every step, A.
    pub sup_tracking_error_a: Vec<f64>,
    /// Largest |r_hat| per inverter over every step, Ohm.
    pub max_abs_r_hat_ohm: Vec<f64>,
    /// Estimator boundary-clamp diagnostics per inverter.
    pub boundary_clamps: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub records: Vec<SimRecord>,
    pub metrics: MetricsReport,
    pub alloc_trace: Vec<AllocInvocation>,
}

/// First-order-lag share redistribution of the baseline splitter: targets
/// a uniform split over healthy inverters and zero elsewhere.
pub fn baseline_adaptive_splitter(
    shares: &[f64],
    health: &[bool],
    rate: f64,
    dt: f64,
) -> Vec<f64> {
    debug_assert!(rate > 0.0 && dt > 0.0);
    debug_assert_eq!(shares.len(), health.len());
    let n_healthy = health.iter().filter(|h| **h).count();
    if n_healthy == 0 {
        return shares.to_vec();
    }
    let target = 1.0 / n_healthy as f64;
    shares
        .iter()
        .zip(health)
        .map(|(s, h)| {
            let t = if *h { target } else { 0.0 };
            s + rate * dt * (t - s)
        })
        .collect()
}

struct IbrRuntime {
    line: LineParams,
    refp: RefModelParams,
    plant: PlantState,
    refmodel: RefModelState,
    est: EstimatorState,
    i_ref: Dq,
}

/// Per-inverter view exposed for stepwise certificate checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterSnapshot {
    pub i: Dq,
    pub i_m: Dq,
    pub i_ref: Dq,
    pub r_hat: f64,
    pub boundary_clamps: u64,
}

/// Simulation of one scenario. Steps are single-threaded and synchronous:
/// all controller evaluations of a step observe the same stage states.
pub struct Simulation {
    config: ScenarioConfig,
    #[allow(dead_code)]
    topology: GraphTopology,
    env: GridEnv,
    ibrs: Vec<IbrRuntime>,
    alloc: AllocatorState,
    detector: BetaDetector,
    betas: Vec<f64>,
    shares: Vec<f64>,
    cost: CostSpec,
    events: Vec<(usize, SimEvent)>,
    next_event: usize,
    dt: f64,
    n_steps: usize,
    alloc_every: usize,
    step_idx: usize,
    last_residual_p: f64,
    last_residual_q: f64,
    // Per-step scratch kept for metrics.
    sum_p_history: Vec<f64>,
    sup_i_tilde: Vec<f64>,
    max_abs_r_hat: Vec<f64>,
    records: Vec<SimRecord>,
    alloc_trace: Vec<AllocInvocation>,
    record_every: usize,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let edges: Vec<(usize, usize)> =
            config.graph.edges.iter().map(|e| (e[0], e[1])).collect();
        let topology = build_topology(&edges, config.n_ibrs(), config.graph.tau)?;
        let env = GridEnv::from_hz(
            Dq::new(config.grid.v_g_d_volt, config.grid.v_g_q_volt),
            config.grid.f_hz,
        );
        let ibrs = config
            .ibrs
            .iter()
            .map(|c| {
                Ok(IbrRuntime {
                    line: LineParams::new(c.r_g_ohm, c.l_g0_henry, c.delta_l_g_henry)
                        .map_err(|e| ConfigError::Invalid {
                            field: "ibr".into(),
                            message: e.to_string(),
                        })?,
                    refp: RefModelParams::new(c.r_m_ohm, c.l_m_henry, c.k_gain_ohm),
                    plant: PlantState::new(Dq::new(c.i0_d_a, c.i0_q_a)),
                    refmodel: RefModelState {
                        i_m: Dq::new(c.i0_d_a, c.i0_q_a),
                    },
                    est: EstimatorState::new(c.r_hat0_ohm, c.gamma_r, c.r_bar_ohm, c.epsilon_ohm),
                    i_ref: Dq::ZERO,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;

        let dt = config.scenario.dt_plant_s;
        let n_steps = (config.scenario.t_end_s / dt).round().max(1.0) as usize;
        let alloc_every = ((config.allocator.period_s / dt).round() as usize).max(1);
        let events = config
            .sim_events()?
            .into_iter()
            .map(|(t, ev)| ((((t / dt) - 1e-9).ceil().max(0.0)) as usize, ev))
            .collect();
        let n = config.n_ibrs();
        let detector = BetaDetector::new(
            n,
            config.detect_threshold(),
            config.detect_hysteresis(),
            config.allocator.beta_nominal,
            config.allocator.beta_fault,
        );

        Ok(Simulation {
            topology,
            env,
            ibrs,
            alloc: AllocatorState::new(n, config.allocator.alpha),
            detector,
            betas: vec![config.allocator.beta_nominal; n],
            shares: vec![1.0 / n as f64; n],
            cost: CostSpec::quadratic(),
            events,
            next_event: 0,
            dt,
            n_steps,
            alloc_every,
            step_idx: 0,
            last_residual_p: 0.0,
            last_residual_q: 0.0,
            sum_p_history: Vec::with_capacity(n_steps + 1),
            sup_i_tilde: vec![0.0; n],
            max_abs_r_hat: vec![0.0; n],
            records: Vec::new(),
            alloc_trace: Vec::new(),
            record_every: config.scenario.record_every,
            config: config.clone(),
        })
    }

    pub fn t(&self) -> f64 {
        self.step_idx as f64 * self.dt
    }

    pub fn finished(&self) -> bool {
        self.step_idx >= self.n_steps
    }

    /// Current references held by each controller (zero-order hold of the
    /// high level between allocator invocations).
    pub fn current_refs(&self) -> Vec<Dq> {
        self.ibrs.iter().map(|ibr| ibr.i_ref).collect()
    }

    /// Per-inverter state snapshots for certificate checks.
    pub fn inverter_states(&self) -> Vec<InverterSnapshot> {
        self.ibrs
            .iter()
            .map(|ibr| InverterSnapshot {
                i: ibr.plant.i,
                i_m: ibr.refmodel.i_m,
                i_ref: ibr.i_ref,
                r_hat: ibr.est.r_hat,
                boundary_clamps: ibr.est.boundary_clamps,
            })
            .collect()
    }

    /// Latest per-node (p, q) reference pairs produced by the splitter.
    pub fn power_refs(&self) -> Vec<(f64, f64)> {
        match self.config.splitter.kind {
            SplitterKind::Decentralized => (0..self.alloc.n_nodes())
                .map(|i| (self.alloc.p[i], self.alloc.q[i]))
                .collect(),
            SplitterKind::BaselineAdaptive => self
                .shares
                .iter()
                .map(|s| {
                    (
                        s * self.config.references.p_a_w,
                        s * self.config.references.q_a_var,
                    )
                })
                .collect(),
        }
    }

    pub fn grid_env(&self) -> GridEnv {
        self.env
    }

    fn apply_due_events(&mut self) -> Result<(), SimError> {
        while self.next_event < self.events.len() && self.events[self.next_event].0 <= self.step_idx
        {
            let (_, ev) = self.events[self.next_event];
            match ev {
                SimEvent::OpenLine { ibr } => {
                    self.ibrs[ibr].plant =
                        inject_fault(&self.ibrs[ibr].plant, FaultMode::OpenLine)
                            .expect("open-line injection is infallible");
                }
                SimEvent::Swell { fraction } => {
                    self.env = apply_swell(&self.env, fraction);
                }
            }
            self.next_event += 1;
        }
        Ok(())
    }

    fn allocator_stage(&mut self) -> Result<(), SimError> {
        let nominal: Vec<f64> = self.config.ibrs.iter().map(|c| c.r_g_ohm).collect();
        let ests: Vec<EstimatorState> = self.ibrs.iter().map(|ibr| ibr.est).collect();
        self.betas = self.detector.step(&ests, &nominal);
        let p_a = self.config.references.p_a_w;
        let q_a = self.config.references.q_a_var;

        match self.config.splitter.kind {
            SplitterKind::Decentralized => {
                for (i, beta) in self.betas.iter().enumerate() {
                    self.alloc.beta[i] = *beta;
                }
                // Warm start from the latest measurements; duals persist.
                for (i, ibr) in self.ibrs.iter().enumerate() {
                    let (p, q) = measure_powers(&ibr.plant, &self.env);
                    self.alloc.p[i] = p;
                    self.alloc.q[i] = q;
                }
                let report = solve(
                    &mut self.alloc,
                    &self.topology,
                    p_a,
                    q_a,
                    &self.cost,
                    StopRule::Budget(self.config.allocator.iters_per_period),
                )?;
                self.last_residual_p = report.feasibility_p;
                self.last_residual_q = report.feasibility_q;
                for (i, ibr) in self.ibrs.iter_mut().enumerate() {
                    ibr.i_ref = current_reference(self.alloc.p[i], self.alloc.q[i], &self.env)?;
                }
                self.alloc_trace.push(AllocInvocation {
                    t_s: self.step_idx as f64 * self.dt,
                    iters: report.iters,
                    nodes: (0..self.alloc.n_nodes())
                        .map(|i| {
                            (
                                self.alloc.lambda[i],
                                self.alloc.nu[i],
                                self.alloc.p[i],
                                self.alloc.q[i],
                            )
                        })
                        .collect(),
                    residual_p_w: report.feasibility_p,
                    residual_q_var: report.feasibility_q,
                });
            }
            SplitterKind::BaselineAdaptive => {
                let health = self.detector.health();
                let period = self.alloc_every as f64 * self.dt;
                self.shares = baseline_adaptive_splitter(
                    &self.shares,
                    &health,
                    self.config.splitter.baseline_rate_per_s,
                    period,
                );
                let mut sum_ref = 0.0;
                for (i, ibr) in self.ibrs.iter_mut().enumerate() {
                    let p_ref = self.shares[i] * p_a;
                    let q_ref = self.shares[i] * q_a;
                    sum_ref += p_ref;
                    ibr.i_ref = current_reference(p_ref, q_ref, &self.env)?;
                }
                self.last_residual_p = sum_ref - p_a;
                self.last_residual_q = self.shares.iter().sum::<f64>() * q_a - q_a;
                self.alloc_trace.push(AllocInvocation {
                    t_s: self.step_idx as f64 * self.dt,
                    iters: 0,
                    nodes: self
                        .shares
                        .iter()
                        .map(|s| (0.0, 0.0, s * p_a, s * q_a))
                        .collect(),
                    residual_p_w: self.last_residual_p,
                    residual_q_var: self.last_residual_q,
                });
            }
        }
        Ok(())
    }

    fn controller_outputs(&self) -> Vec<ControllerOutput> {
        self.ibrs
            .iter()
            .map(|ibr| {
                controller_output(
                    ibr.plant.i,
                    ibr.refmodel.i_m,
                    ibr.i_ref,
                    &ibr.est,
                    &ibr.refp,
                    ibr.line.l_g0,
                    &self.env,
                )
            })
            .collect()
    }

    fn bookkeeping(&mut self, outputs: &[ControllerOutput]) {
        let t = self.t();
        let mut sum_p = 0.0;
        let mut sum_q = 0.0;
        let mut samples = Vec::with_capacity(self.ibrs.len());
        for (idx, (ibr, out)) in self.ibrs.iter().zip(outputs).enumerate() {
            let (p, q) = measure_powers(&ibr.plant, &self.env);
            sum_p += p;
            sum_q += q;
            let r_tilde = ibr.est.r_hat - ibr.line.r_g;
            samples.push(IbrSample {
                i: ibr.plant.i,
                v: out.v,
                p_w: p,
                q_var: q,
                i_ref: ibr.i_ref,
                r_hat_ohm: ibr.est.r_hat,
                beta: self.betas[idx],
                lyapunov: lyapunov_value(out.i_tilde, r_tilde, ibr.line.l_g(), ibr.est.gamma_r),
            });
            let tn = out.i_tilde.norm();
            if tn > self.sup_i_tilde[idx] {
                self.sup_i_tilde[idx] = tn;
            }
            let ra = ibr.est.r_hat.abs();
            if ra > self.max_abs_r_hat[idx] {
                self.max_abs_r_hat[idx] = ra;
            }
        }
        self.sum_p_history.push(sum_p);
        if self.step_idx % self.record_every == 0 || self.step_idx == self.n_steps {
            self.records.push(SimRecord {
                t_s: t,
                ibrs: samples,
                sum_p_w: sum_p,
                sum_q_var: sum_q,
                alloc_residual_p_w: self.last_residual_p,
                alloc_residual_q_var: self.last_residual_q,
            });
        }
    }

    fn integrate_step(&mut self) -> Result<(), SimError> {
        let dt = self.dt;
        let env = self.env;
        for (idx, ibr) in self.ibrs.iter_mut().enumerate() {
            // Estimator innovation from start-of-step states. A dead line
            // (clamped current, large tracking error) yields exactly zero
            // innovation in the adaptive law, so drive the estimate to its
            // projection rail instead; that deviation is what the penalty
            // schedule observes.
            let i_tilde = tracking_error(ibr.plant.i, ibr.refmodel.i_m);
            let next_est = if ibr.plant.i.norm() <= DEAD_LINE_CURRENT_A
                && i_tilde.norm() >= 10.0 * DEAD_LINE_CURRENT_A
            {
                estimator_step_innovation(&ibr.est, i_tilde.norm_sq(), dt)
            } else {
                estimator_step(&ibr.est, ibr.plant.i, i_tilde, dt)
            };

            if ibr.plant.faulted {
                // Current stays clamped; only the reference model advances.
                let f = |i_m: Dq| {
                    refmodel_derivative(&RefModelState { i_m }, ibr.i_ref, &ibr.refp, &env)
                };
                let y = ibr.refmodel.i_m;
                let k1 = f(y);
                let k2 = f(y + k1 * (0.5 * dt));
                let k3 = f(y + k2 * (0.5 * dt));
                let k4 = f(y + k3 * dt);
                ibr.refmodel.i_m = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            } else {
                // Joint RK4 over (i, i_m); the control voltage is re-evaluated
                // at each stage from the stage states while r_hat and i_ref
                // stay frozen across the step.
                let f = |i: Dq, i_m: Dq| {
                    let v = crate::mrac::control_voltage(
                        i, i_m, ibr.i_ref, &ibr.est, &ibr.refp, ibr.line.l_g0, &env,
                    );
                    let di = plant_derivative(&PlantState::new(i), v, &ibr.line, &env)
                        .expect("healthy plant");
                    let dim =
                        refmodel_derivative(&RefModelState { i_m }, ibr.i_ref, &ibr.refp, &env);
                    (di, dim)
                };
                let (i0, m0) = (ibr.plant.i, ibr.refmodel.i_m);
                let (k1i, k1m) = f(i0, m0);
                let (k2i, k2m) = f(i0 + k1i * (0.5 * dt), m0 + k1m * (0.5 * dt));
                let (k3i, k3m) = f(i0 + k2i * (0.5 * dt), m0 + k2m * (0.5 * dt));
                let (k4i, k4m) = f(i0 + k3i * dt, m0 + k3m * dt);
                ibr.plant.i = i0 + (k1i + k2i * 2.0 + k3i * 2.0 + k4i) * (dt / 6.0);
                ibr.refmodel.i_m = m0 + (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (dt / 6.0);
            }
            ibr.est = next_est;

            let diverged = !ibr.plant.i.is_finite()
                || !ibr.refmodel.i_m.is_finite()
                || !ibr.est.r_hat.is_finite()
                || ibr.plant.i.norm() > DIVERGENCE_LIMIT
                || ibr.refmodel.i_m.norm() > DIVERGENCE_LIMIT;
            if diverged {
                return Err(SimError::NumericalDivergence {
                    t_s: (self.step_idx + 1) as f64 * dt,
                    ibr: idx + 1,
                });
            }
        }
        Ok(())
    }

    /// Advances the simulation by one plant step: applies due events, runs
    /// the allocator stage on its cadence, records the pre-step sample and
    /// integrates every inverter synchronously.
    pub fn step_plant_stage(&mut self) -> Result<(), SimError> {
        assert!(!self.finished());
        self.apply_due_events()?;
        if self.step_idx % self.alloc_every == 0 {
            self.allocator_stage()?;
        }
        let outputs = self.controller_outputs();
        self.bookkeeping(&outputs);
        self.integrate_step()?;
        self.step_idx += 1;
        if self.finished() {
            // Final boundary: apply any events scheduled exactly at t_end
            // and emit the closing sample.
            self.apply_due_events()?;
            let outputs = self.controller_outputs();
            self.bookkeeping(&outputs);
        }
        Ok(())
    }

    fn metrics(&self) -> MetricsReport {
        let config = &self.config;
        let p_a = config.references.p_a_w;
        let s_base = config.s_base();
        let band = 0.02 * s_base;
        let dev: Vec<f64> = self.sum_p_history.iter().map(|s| (s - p_a).abs()).collect();
        let n_hist = dev.len(); // n_steps + 1 samples

        let event_steps: Vec<(usize, String)> = self
            .events
            .iter()
            .map(|(k, ev)| {
                let kind = match ev {
                    SimEvent::OpenLine { ibr } => format!("open_line(ibr={})", ibr + 1),
                    SimEvent::Swell { fraction } => format!("swell({fraction})"),
                };
                (*k, kind)
            })
            .collect();

        let mut events = Vec::new();
        for (idx, (k_e, kind)) in event_steps.iter().enumerate() {
            let k_start = (*k_e).min(n_hist - 1);
            // Events scheduled at the same boundary share one window.
            let k_end = event_steps
                .iter()
                .skip(idx + 1)
                .map(|(k, _)| *k)
                .find(|k| *k > *k_e)
                .map(|k| k.min(n_hist))
                .unwrap_or(n_hist);
            let window = &dev[k_start..k_end];
            let max_abs = window.iter().cloned().fold(0.0, f64::max);
            // Last index above the band decides the settling time.
            let mut settle = Some(0.0);
            for (off, d) in window.iter().enumerate().rev() {
                if *d > band {
                    settle = if off + 1 < window.len() {
                        Some((off + 1) as f64 * self.dt)
                    } else {
                        None
                    };
                    break;
                }
            }
            events.push(EventMetrics {
                t_s: k_start as f64 * self.dt,
                kind: kind.clone(),
                max_abs_dev_w: max_abs,
                max_rel_dev: max_abs / s_base,
                settling_time_s: settle,
            });
        }

        let transient_steps =
            ((config.scenario.transient_window_s / self.dt).round() as usize).min(n_hist - 1);
        let pre_end = event_steps
            .first()
            .map(|(k, _)| (*k).min(n_hist))
            .unwrap_or(n_hist);
        let pre_event_max_rel_dev = if transient_steps < pre_end {
            dev[transient_steps..pre_end]
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                / s_base
        } else {
            0.0
        };

        let tail_start = n_hist - (n_hist / 10).max(1);
        let mut split = vec![0.0; self.ibrs.len()];
        // Mean split over the recorded tail (records are decimated but
        // cover the same window).
        let tail_records: Vec<&SimRecord> = self
            .records
            .iter()
            .filter(|r| r.t_s >= tail_start as f64 * self.dt)
            .collect();
        if !tail_records.is_empty() {
            for r in &tail_records {
                for (i, s) in r.ibrs.iter().enumerate() {
                    split[i] += s.p_w;
                }
            }
            for s in &mut split {
                *s /= tail_records.len() as f64;
            }
        }

        MetricsReport {
            scenario: config.scenario.name.clone(),
            splitter: match config.splitter.kind {
                SplitterKind::Decentralized => "decentralized".to_string(),
                SplitterKind::BaselineAdaptive => "baseline_adaptive".to_string(),
            },
            p_a_w: p_a,
            q_a_var: config.references.q_a_var,
            s_base_va: s_base,
            n_events: events.len(),
            events,
            pre_event_max_rel_dev,
            final_rel_dev: dev.last().copied().unwrap_or(0.0) / s_base,
            steady_state_split_w: split,
            sup_tracking_error_a: self.sup_i_tilde.clone(),
            max_abs_r_hat_ohm: self.max_abs_r_hat.clone(),
            boundary_clamps: self.ibrs.iter().map(|ibr| ibr.est.boundary_clamps).collect(),
        }
    }
}

/// Runs a scenario to completion.
pub fn run(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    let mut sim = Simulation::new(config)?;
    while !sim.finished() {
        sim.step_plant_stage()?;
    }
    let metrics = sim.metrics();
    Ok(SimOutput {
        records: sim.records,
        metrics,
        alloc_trace: sim.alloc_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{healthy_steady, paper_3ibr_fault};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_references_stay_at_rest() {
        let mut config = healthy_steady();
        config.references.p_a_w = 0.0;
        config.scenario.t_end_s = 0.01;
        let out = run(&config).unwrap();
        for r in &out.records {
            assert_eq!(r.sum_p_w, 0.0);
            for s in &r.ibrs {
                assert_eq!(s.i, Dq::ZERO);
                assert_eq!(s.i_ref, Dq::ZERO);
            }
        }
    }

    #[test]
    fn baseline_splitter_examples() {
        // All healthy at the uniform split: fixed point.
        let shares = [1.0 / 3.0; 3];
        let updated = baseline_adaptive_splitter(&shares, &[true; 3], 20.0, 1e-3);
        for (a, b) in updated.iter().zip(&shares) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        // Unhealthy node decays geometrically with factor 1 - rate*dt.
        let mut shares = vec![1.0 / 3.0; 3];
        for _ in 0..10 {
            let prev = shares[2];
            shares = baseline_adaptive_splitter(&shares, &[true, true, false], 10.0, 1e-3);
            assert_abs_diff_eq!(shares[2], 0.99 * prev, epsilon = 1e-15);
            let total: f64 = shares.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
        // No healthy nodes: shares held.
        let held = baseline_adaptive_splitter(&[0.2, 0.8], &[false, false], 10.0, 1e-3);
        assert_eq!(held, vec![0.2, 0.8]);
    }

    #[test]
    fn references_hold_between_allocator_updates() {
        let mut config = healthy_steady();
        config.scenario.t_end_s = 0.004;
        config.scenario.record_every = 1;
        let mut sim = Simulation::new(&config).unwrap();
        let alloc_every = ((config.allocator.period_s / config.scenario.dt_plant_s).round())
            as usize;
        let mut last_refs = sim.current_refs();
        let mut step = 0; // index of the step the next call will execute
        while !sim.finished() {
            let allocator_ran = step % alloc_every == 0;
            sim.step_plant_stage().unwrap();
            step += 1;
            let refs = sim.current_refs();
            if !allocator_ran {
                assert_eq!(refs, last_refs, "reference moved mid-period at step {step}");
            }
            last_refs = refs;
        }
    }

    #[test]
    fn identical_configs_produce_identical_outputs() {
        let mut config = paper_3ibr_fault();
        config.scenario.t_end_s = 0.05;
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.alloc_trace, b.alloc_trace);
    }

    #[test]
    fn open_line_current_is_exactly_zero_after_event() {
        let mut config = paper_3ibr_fault();
        config.scenario.t_end_s = 0.25;
        let out = run(&config).unwrap();
        for r in out.records.iter().filter(|r| r.t_s >= 0.2) {
            assert_eq!(r.ibrs[2].i, Dq::ZERO, "at t = {}", r.t_s);
        }
        // And the fault is eventually reflected in the penalties.
        let last = out.records.last().unwrap();
        assert_eq!(last.ibrs[2].beta, 1e4);
        assert_eq!(last.ibrs[0].beta, 1.0);
    }

    #[test]
    fn swell_scales_recorded_voltage_feedforward() {
        let mut config = healthy_steady();
        config.events.push(crate::config::EventSection {
            t_s: 0.05,
            kind: "swell".to_string(),
            ibr: None,
            fraction: Some(0.10),
        });
        config.scenario.t_end_s = 0.1;
        let out = run(&config).unwrap();
        // After the swell the aggregate power re-settles on p_A.
        let last = out.records.last().unwrap();
        assert!(
            (last.sum_p_w - config.references.p_a_w).abs() < 0.02 * config.references.p_a_w,
            "sum_p = {}",
            last.sum_p_w
        );
    }

    #[test]
    fn homogeneous_plant_current_decays_monotonically() {
        // With v pinned to v_g and no controller, ||i|| decays: the system
        // matrix has symmetric part -(r_g/l_g) I.
        let line = LineParams::new(0.027, 0.0367, 0.0).unwrap();
        let env = GridEnv::from_hz(Dq::new(392.0, 0.0), 60.0);
        let dt = 1e-5;
        let mut state = PlantState::new(Dq::new(2.0, -1.5));
        let mut prev_norm = state.i.norm();
        for _ in 0..5_000 {
            let f = |i: Dq| {
                plant_derivative(&PlantState::new(i), env.v_g, &line, &env).unwrap()
            };
            let k1 = f(state.i);
            let k2 = f(state.i + k1 * (0.5 * dt));
            let k3 = f(state.i + k2 * (0.5 * dt));
            let k4 = f(state.i + k3 * dt);
            state.i = state.i + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            let n = state.i.norm();
            assert!(n <= prev_norm * (1.0 + 1e-12), "norm grew: {prev_norm} -> {n}");
            prev_norm = n;
        }
        assert!(prev_norm < 2.5 * (-0.027 / 0.0367 * 0.05_f64).exp() * 1.1);
    }

    #[test]
    fn divergent_step_size_reports_divergence() {
        let mut config = healthy_steady();
        // RK4 is unstable at dt >> 2.8 / |eigmax|; the run must abort with
        // a divergence error rather than emit garbage.
        config.scenario.dt_plant_s = 0.02;
        config.allocator.period_s = 0.02;
        config.scenario.t_end_s = 2.0;
        match run(&config) {
            Err(SimError::NumericalDivergence { ibr, .. }) => {
                assert!((1..=3).contains(&ibr));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn healthy_run_tracks_aggregate_reference() {
        let config = healthy_steady();
        let out = run(&config).unwrap();
        assert!(out.metrics.pre_event_max_rel_dev <= 0.02);
        assert_eq!(out.metrics.n_events, 0);
        // Projection bound held everywhere.
        for (max_r, clamps) in out
            .metrics
            .max_abs_r_hat_ohm
            .iter()
            .zip(&out.metrics.boundary_clamps)
        {
            assert!(*max_r <= 0.27 + 0.027);
            assert_eq!(*clamps, 0);
        }
    }
}
