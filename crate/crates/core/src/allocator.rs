//! Decentralized primal-dual power splitter.
//!
//! Each node solves a penalized scalar subproblem and the dual variables
//! ascend through the doubly stochastic mixing matrix `W`; only node 1
//! knows the aggregate references. A centralized KKT oracle is kept as a
//! diagnostic benchmark, never as the controller.

use crate::dq::Dq;
use crate::graph::GraphTopology;
use crate::mrac::EstimatorState;
use crate::plant::GridEnv;
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("dimension mismatch: expected {expected} nodes, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "no convergence after {iters} iterations \
         (p increment {p_increment:.3e}, q increment {q_increment:.3e}, \
         feasibility p {feasibility_p:.3e}, q {feasibility_q:.3e})"
    )]
    NoConvergence {
        iters: u64,
        p_increment: f64,
        q_increment: f64,
        feasibility_p: f64,
        feasibility_q: f64,
    },
    #[error("grid voltage magnitude is zero; current reference undefined")]
    ZeroGridVoltage,
}

/// Cost family for the per-node objectives. Only unit-curvature quadratics
/// `f(p) = p^2`, `h(q) = q^2` are built in; they are the family under which
/// the closed-form reference holds verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    /// Strong-convexity modulus.
    pub mu: f64,
    /// Smoothness modulus.
    pub l_smooth: f64,
}

impl CostSpec {
    pub fn quadratic() -> Self {
        CostSpec {
            kind: CostKind::Quadratic,
            mu: 1.0,
            l_smooth: 1.0,
        }
    }
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec::quadratic()
    }
}

/// Per-node dual/primal state of the splitter.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorState {
    /// Dual variables for active power.
    pub lambda: DVector<f64>,
    /// Dual variables for reactive power.
    pub nu: DVector<f64>,
    /// Primal active powers, W.
    pub p: DVector<f64>,
    /// Primal reactive powers, var.
    pub q: DVector<f64>,
    /// Per-node penalties, > 0.
    pub beta: DVector<f64>,
    /// Dual ascent step size, > 0.
    pub alpha: f64,
    /// Cumulative iteration counter.
    pub iter: u64,
}

impl AllocatorState {
    pub fn new(n: usize, alpha: f64) -> Self {
        assert!(alpha > 0.0);
        AllocatorState {
            lambda: DVector::zeros(n),
            nu: DVector::zeros(n),
            p: DVector::zeros(n),
            q: DVector::zeros(n),
            beta: DVector::from_element(n, 1.0),
            alpha,
            iter: 0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.lambda.len()
    }
}

/// `argmin_p (beta_i/2) f(p) + lambda_i p`; for `f(p) = p^2` this is
/// `p = -lambda_i / beta_i`.
pub fn primal_step(lambda_i: f64, beta_i: f64, cost: &CostSpec) -> f64 {
    debug_assert!(beta_i > 0.0);
    match cost.kind {
        CostKind::Quadratic => -lambda_i / beta_i,
    }
}

/// One dual ascent step through the mixing matrix:
/// `lambda <- lambda + alpha W (p - p_A e1)`, `nu` likewise. Only the first
/// node carries the aggregate references.
pub fn dual_step(
    state: &mut AllocatorState,
    topology: &GraphTopology,
    p_a: f64,
    q_a: f64,
) -> Result<(), AllocError> {
    let n = topology.n_nodes;
    if state.n_nodes() != n {
        return Err(AllocError::DimensionMismatch {
            expected: n,
            got: state.n_nodes(),
        });
    }
    let mut p_gap = state.p.clone();
    p_gap[0] -= p_a;
    let mut q_gap = state.q.clone();
    q_gap[0] -= q_a;
    state.lambda += (&topology.weight * p_gap) * state.alpha;
    state.nu += (&topology.weight * q_gap) * state.alpha;
    state.iter += 1;
    Ok(())
}

/// Stopping policy for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Iterate until both primal increment infinity-norms drop below `tol`
    /// or `max_iters` is reached.
    Tolerance { tol: f64, max_iters: u64 },
    /// Run exactly this many iterations (in-loop budget mode). The dual
    /// trajectory then never depends on the warm-started measurements.
    Budget(u64),
}

/// Outcome of a [`solve`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Iterations performed by this call.
    pub iters: u64,
    /// Final infinity-norm primal increments.
    pub p_increment: f64,
    pub q_increment: f64,
    /// Final feasibility residuals `sum(p) - p_A` and `sum(q) - q_A`.
    pub feasibility_p: f64,
    pub feasibility_q: f64,
    /// Whether the tolerance rule was met (always true in budget mode).
    pub converged: bool,
}

/// Alternates primal and dual steps from the warm-started state.
///
/// Callers warm start `state.p`, `state.q` from the latest power
/// measurements and keep `lambda`, `nu` from the previous solve.
pub fn solve(
    state: &mut AllocatorState,
    topology: &GraphTopology,
    p_a: f64,
    q_a: f64,
    cost: &CostSpec,
    rule: StopRule,
) -> Result<SolveReport, AllocError> {
    let n = topology.n_nodes;
    if state.n_nodes() != n {
        return Err(AllocError::DimensionMismatch {
            expected: n,
            got: state.n_nodes(),
        });
    }
    let (tol, max_iters, budgeted) = match rule {
        StopRule::Tolerance { tol, max_iters } => (tol, max_iters, false),
        StopRule::Budget(n_iters) => (0.0, n_iters, true),
    };

    let mut p_inc = f64::INFINITY;
    let mut q_inc = f64::INFINITY;
    let mut done = 0;
    let mut converged = false;
    while done < max_iters {
        let mut p_next = DVector::zeros(n);
        let mut q_next = DVector::zeros(n);
        for i in 0..n {
            p_next[i] = primal_step(state.lambda[i], state.beta[i], cost);
            q_next[i] = primal_step(state.nu[i], state.beta[i], cost);
        }
        p_inc = (&p_next - &state.p).amax();
        q_inc = (&q_next - &state.q).amax();
        state.p = p_next;
        state.q = q_next;
        // The first increment compares a primal output against the
        // warm-started measurement; it only certifies a fixed point when
        // the dual gradient is also zero there.
        let settled = if done == 0 {
            let mut gp = state.p.clone();
            gp[0] -= p_a;
            let mut gq = state.q.clone();
            gq[0] -= q_a;
            gp.amax() == 0.0 && gq.amax() == 0.0
        } else {
            true
        };
        dual_step(state, topology, p_a, q_a)?;
        done += 1;
        if !budgeted && settled && p_inc <= tol && q_inc <= tol {
            converged = true;
            break;
        }
        // A diverging iteration overflows long before max_iters; bail as
        // soon as the state stops being finite.
        if !(p_inc.is_finite() && q_inc.is_finite()) {
            break;
        }
    }

    let feasibility_p = state.p.sum() - p_a;
    let feasibility_q = state.q.sum() - q_a;
    // Negated form so NaN increments count as non-convergence.
    if !budgeted && !converged && !(p_inc <= 100.0 * tol && q_inc <= 100.0 * tol) {
        return Err(AllocError::NoConvergence {
            iters: done,
            p_increment: p_inc,
            q_increment: q_inc,
            feasibility_p,
            feasibility_q,
        });
    }
    Ok(SolveReport {
        iters: done,
        p_increment: p_inc,
        q_increment: q_inc,
        feasibility_p,
        feasibility_q,
        converged: converged || budgeted,
    })
}

/// One row of a per-iteration solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterTraceRow {
    pub iter: u64,
    /// 1-based node index.
    pub node: usize,
    pub lambda: f64,
    pub nu: f64,
    pub p: f64,
    pub q: f64,
    /// Feasibility residual `sum(p) - p_A` at this iteration.
    pub residual: f64,
}

/// Runs `n_iters` iterations recording every node's duals and primals per
/// iteration. Semantically identical to `solve` in budget mode.
pub fn trace_iterations(
    state: &mut AllocatorState,
    topology: &GraphTopology,
    p_a: f64,
    q_a: f64,
    cost: &CostSpec,
    n_iters: u64,
) -> Result<Vec<IterTraceRow>, AllocError> {
    let mut rows = Vec::with_capacity(n_iters as usize * topology.n_nodes);
    for _ in 0..n_iters {
        solve(state, topology, p_a, q_a, cost, StopRule::Budget(1))?;
        let residual = state.p.sum() - p_a;
        for node in 0..topology.n_nodes {
            rows.push(IterTraceRow {
                iter: state.iter,
                node: node + 1,
                lambda: state.lambda[node],
                nu: state.nu[node],
                p: state.p[node],
                q: state.q[node],
                residual,
            });
        }
    }
    Ok(rows)
}

/// Contraction coefficient of the dual gradient step,
/// `max{|1 - alpha mu beta|, |1 - alpha L beta|}`.
pub fn contraction_coefficient(alpha: f64, cost: &CostSpec, beta: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    let a = (1.0 - alpha * cost.mu * beta).abs();
    let b = (1.0 - alpha * cost.l_smooth * beta).abs();
    a.max(b)
}

/// Step size minimizing the contraction coefficient, `2 / (L + mu beta)`.
pub fn optimal_step_size(cost: &CostSpec, beta: f64) -> f64 {
    2.0 / (cost.l_smooth + cost.mu * beta)
}

/// Condition number `L / (mu beta)` governing the iteration count.
pub fn condition_number(cost: &CostSpec, beta: f64) -> f64 {
    cost.l_smooth / (cost.mu * beta)
}

/// Iteration estimate `gamma ln(1/eps)` to reach an `eps` neighborhood.
pub fn iteration_estimate(condition: f64, eps: f64) -> f64 {
    condition * (1.0 / eps).ln()
}

/// Latched penalty schedule keyed on the estimated-resistance deviation
/// from nominal. A node switches to `beta_fault` when its deviation
/// reaches `threshold` and stays there until the deviation falls below
/// `threshold - hysteresis`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaDetector {
    pub threshold: f64,
    pub hysteresis: f64,
    pub beta_nominal: f64,
    pub beta_fault: f64,
    latched: Vec<bool>,
}

impl BetaDetector {
    pub fn new(
        n: usize,
        threshold: f64,
        hysteresis: f64,
        beta_nominal: f64,
        beta_fault: f64,
    ) -> Self {
        assert!(threshold > hysteresis && hysteresis > 0.0);
        assert!(beta_nominal > 0.0 && beta_fault > 0.0);
        BetaDetector {
            threshold,
            hysteresis,
            beta_nominal,
            beta_fault,
            latched: vec![false; n],
        }
    }

    /// Evaluates the schedule against the current estimates.
    pub fn step(&mut self, estimators: &[EstimatorState], nominal_r: &[f64]) -> Vec<f64> {
        assert_eq!(estimators.len(), self.latched.len());
        assert_eq!(nominal_r.len(), self.latched.len());
        estimators
            .iter()
            .zip(nominal_r)
            .zip(self.latched.iter_mut())
            .map(|((est, &nom), latched)| {
                let deviation = (est.r_hat - nom).abs();
                if deviation >= self.threshold {
                    *latched = true;
                } else if *latched && deviation < self.threshold - self.hysteresis {
                    *latched = false;
                }
                if *latched {
                    self.beta_fault
                } else {
                    self.beta_nominal
                }
            })
            .collect()
    }

    /// Health flags derived from the same latch (true = healthy).
    pub fn health(&self) -> Vec<bool> {
        self.latched.iter().map(|&l| !l).collect()
    }
}

/// Low-level current reference realizing a (p, q) pair at the measured
/// grid voltage. The reactive term uses the adjoint rotation so that
/// measuring the returned current reproduces (p, q) exactly.
pub fn current_reference(p_i: f64, q_i: f64, env: &GridEnv) -> Result<Dq, AllocError> {
    let n2 = env.v_g.norm_sq();
    if n2 <= 0.0 {
        return Err(AllocError::ZeroGridVoltage);
    }
    Ok(env.v_g * (p_i / n2) + env.v_g.rot_jt() * (q_i / n2))
}

/// Closed-form reference straight from the duals,
/// `i_ref = -(1/beta_i) (v_g lambda_i + J^T v_g nu_i) / ||v_g||^2`;
/// equals [`current_reference`] applied to the exact primal solutions.
pub fn closed_form_reference(lambda_i: f64, nu_i: f64, beta_i: f64, env: &GridEnv) -> Dq {
    debug_assert!(beta_i > 0.0);
    let n2 = env.v_g.norm_sq();
    debug_assert!(n2 > 0.0);
    (env.v_g * lambda_i + env.v_g.rot_jt() * nu_i) * (-1.0 / (beta_i * n2))
}

/// Exact minimizer of `sum (beta_i/2) p_i^2` subject to `sum p_i = p_A`:
/// `p_i = (1/beta_i) / (sum_j 1/beta_j) * p_A`. Diagnostic benchmark only.
pub fn kkt_oracle(beta: &[f64], p_a: f64) -> Vec<f64> {
    let inv_sum: f64 = beta.iter().map(|b| 1.0 / b).sum();
    beta.iter().map(|b| (1.0 / b) / inv_sum * p_a).collect()
}
