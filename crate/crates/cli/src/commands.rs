//! The three entry points behind the CLI subcommands, exposed as library
//! functions so tests can drive them directly.

use crate::manifest::{write_files, ManifestFile, RunManifest};
use crate::svg;
use ibrsim_core::allocator::{
    condition_number, contraction_coefficient, iteration_estimate, kkt_oracle, optimal_step_size,
    solve, AllocError, AllocatorState, CostSpec, StopRule,
};
use ibrsim_core::config::{ConfigError, ScenarioConfig, SplitterKind};
use ibrsim_core::graph::build_topology;
use ibrsim_core::report::{alloc_trace_csv, timeseries_csv};
use ibrsim_core::sim::{run as run_sim, MetricsReport, SimError, SimOutput};
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config file or graph definition: exit code 2.
    #[error("{0}")]
    Config(String),
    /// State magnitude blew up during integration: exit code 3.
    #[error("numerical divergence at t = {t_s} s in inverter {ibr}")]
    Divergence { t_s: f64, ibr: usize },
    /// Offline solve hit its iteration cap far from a fixed point: exit code 4.
    #[error("{0}")]
    NoConvergence(String),
    /// Filesystem trouble: exit code 1.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::NoConvergence(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NumericalDivergence { t_s, ibr } => CliError::Divergence { t_s, ibr },
            SimError::Alloc(AllocError::NoConvergence { .. }) => {
                CliError::NoConvergence(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        match e {
            AllocError::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub metrics: MetricsReport,
}

fn emitted_files(output: &SimOutput, p_a: f64, with_svg: bool) -> Vec<(String, String)> {
    let metrics_json = serde_json::to_string_pretty(&output.metrics)
        .expect("metrics serialize")
        + "\n";
    let mut files = vec![
        ("timeseries.csv".to_string(), timeseries_csv(&output.records)),
        ("allocator_trace.csv".to_string(), alloc_trace_csv(&output.alloc_trace)),
        ("metrics.json".to_string(), metrics_json),
    ];
    if with_svg {
        let sum_series = vec![
            (
                "sum_p".to_string(),
                output.records.iter().map(|r| (r.t_s, r.sum_p_w)).collect(),
            ),
            (
                "p_A".to_string(),
                output.records.iter().map(|r| (r.t_s, p_a)).collect(),
            ),
        ];
        files.push((
            "sum_p.svg".to_string(),
            svg::line_chart("aggregate active power", "p_w", &sum_series),
        ));
        let n = output.records.first().map(|r| r.ibrs.len()).unwrap_or(0);
        let split_series: Vec<(String, Vec<(f64, f64)>)> = (0..n)
            .map(|k| {
                (
                    format!("p{}", k + 1),
                    output
                        .records
                        .iter()
                        .map(|r| (r.t_s, r.ibrs[k].p_w))
                        .collect(),
                )
            })
            .collect();
        files.push((
            "split_p.svg".to_string(),
            svg::line_chart("per-inverter active power", "p_w", &split_series),
        ));
    }
    files
}

fn write_run_outputs(
    config_path: &Path,
    out_dir: &Path,
    output: &SimOutput,
    p_a: f64,
    with_svg: bool,
    wall_clock_s: f64,
) -> Result<RunManifest, CliError> {
    let files = emitted_files(output, p_a, with_svg);
    let mut entries: Vec<ManifestFile> = write_files(out_dir, &files)?;
    let mut manifest = RunManifest {
        config_path: config_path.display().to_string(),
        out_dir: out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s,
        files: Vec::new(),
    };
    manifest.files.append(&mut entries);
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serialize") + "\n";
    std::fs::write(out_dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

/// `run <config> -o <dir>`: simulate and emit time series, allocator trace,
/// metrics and the manifest.
pub fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    decimate: Option<usize>,
    with_svg: bool,
) -> Result<RunOutcome, CliError> {
    let start = std::time::Instant::now();
    let mut config = ScenarioConfig::load(config_path)?;
    if let Some(d) = decimate {
        config.scenario.record_every = d;
    }
    config.validate()?;
    let output = run_sim(&config)?;
    let manifest = write_run_outputs(
        config_path,
        out_dir,
        &output,
        config.references.p_a_w,
        with_svg,
        start.elapsed().as_secs_f64(),
    )?;
    Ok(RunOutcome {
        manifest,
        metrics: output.metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveNodeRow {
    pub node: usize,
    pub beta: f64,
    pub lambda: f64,
    pub nu: f64,
    pub p_w: f64,
    pub q_var: f64,
    pub kkt_p_w: f64,
    pub contraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    pub iters: u64,
    pub feasibility_p_w: f64,
    pub feasibility_q_var: f64,
    pub p_increment: f64,
    pub q_increment: f64,
    pub nodes: Vec<SolveNodeRow>,
    /// Worst per-node contraction coefficient at the configured step size.
    pub worst_contraction: f64,
    /// Euclidean distance between the solver split and the KKT oracle
    /// point; reported as a diagnostic, converged splits may legitimately
    /// differ along null(W).
    pub solver_vs_oracle_dev_w: f64,
    pub alpha: f64,
    pub alpha_star_worst_beta: f64,
    pub condition_number_worst_beta: f64,
    pub iteration_estimate_1e9: f64,
}

/// `solve <config>`: offline allocator solve from cold duals, with the
/// centralized KKT comparison and contraction diagnostics.
pub fn cmd_solve(config_path: &Path) -> Result<SolveOutcome, CliError> {
    let config = ScenarioConfig::load(config_path)?;
    config.validate()?;
    solve_for_config(&config)
}

/// Offline solve on an already-validated config (used by `cmd_solve` and
/// the test suites).
pub fn solve_for_config(config: &ScenarioConfig) -> Result<SolveOutcome, CliError> {
    let n = config.n_ibrs();
    let edges: Vec<(usize, usize)> = config.graph.edges.iter().map(|e| (e[0], e[1])).collect();
    let topology =
        build_topology(&edges, n, config.graph.tau).map_err(|e| CliError::Config(e.to_string()))?;
    let beta: Vec<f64> = config
        .solve
        .as_ref()
        .and_then(|s| s.beta.clone())
        .unwrap_or_else(|| vec![config.allocator.beta_nominal; n]);
    if beta.len() != n {
        return Err(CliError::Config(format!(
            "config error at solve.beta: expected {n} entries"
        )));
    }

    let cost = CostSpec::quadratic();
    let mut state = AllocatorState::new(n, config.allocator.alpha);
    for i in 0..n {
        state.beta[i] = beta[i];
    }
    let report = solve(
        &mut state,
        &topology,
        config.references.p_a_w,
        config.references.q_a_var,
        &cost,
        StopRule::Tolerance {
            tol: config.allocator.tol,
            max_iters: config.allocator.max_iters,
        },
    )?;

    let kkt = kkt_oracle(&beta, config.references.p_a_w);
    let dev = state
        .p
        .iter()
        .zip(&kkt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let alpha = config.allocator.alpha;
    let nodes: Vec<SolveNodeRow> = (0..n)
        .map(|i| SolveNodeRow {
            node: i + 1,
            beta: beta[i],
            lambda: state.lambda[i],
            nu: state.nu[i],
            p_w: state.p[i],
            q_var: state.q[i],
            kkt_p_w: kkt[i],
            contraction: contraction_coefficient(alpha, &cost, beta[i]),
        })
        .collect();
    let worst_contraction = nodes.iter().map(|r| r.contraction).fold(0.0, f64::max);
    let worst_beta = beta.iter().cloned().fold(f64::MIN, f64::max);
    let cond = condition_number(&cost, worst_beta);
    Ok(SolveOutcome {
        iters: report.iters,
        feasibility_p_w: report.feasibility_p,
        feasibility_q_var: report.feasibility_q,
        p_increment: report.p_increment,
        q_increment: report.q_increment,
        nodes,
        worst_contraction,
        solver_vs_oracle_dev_w: dev,
        alpha,
        alpha_star_worst_beta: optimal_step_size(&cost, worst_beta),
        condition_number_worst_beta: cond,
        iteration_estimate_1e9: iteration_estimate(cond, 1e-9),
    })
}

pub fn format_solve(outcome: &SolveOutcome) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "converged in {} iterations; feasibility residual p = {:.3e} W, q = {:.3e} var\n",
        outcome.iters, outcome.feasibility_p_w, outcome.feasibility_q_var
    ));
    s.push_str(&format!(
        "final increments p = {:.3e}, q = {:.3e}\n",
        outcome.p_increment, outcome.q_increment
    ));
    s.push_str("node      beta        lambda            nu             p*_w          q*_var        kkt_p_w     contraction\n");
    for r in &outcome.nodes {
        s.push_str(&format!(
            "{:>4}  {:>9.3e}  {:>13.6e}  {:>13.6e}  {:>13.6e}  {:>13.6e}  {:>12.6e}  {:>10.4}\n",
            r.node, r.beta, r.lambda, r.nu, r.p_w, r.q_var, r.kkt_p_w, r.contraction
        ));
    }
    s.push_str(&format!(
        "solver vs oracle split deviation (diagnostic): {:.6e} W\n",
        outcome.solver_vs_oracle_dev_w
    ));
    s.push_str(&format!(
        "worst contraction {:.4} at alpha = {}; alpha* = {:.4e}, condition = {:.4e}, ~{:.0} iterations to 1e-9\n",
        outcome.worst_contraction,
        outcome.alpha,
        outcome.alpha_star_worst_beta,
        outcome.condition_number_worst_beta,
        outcome.iteration_estimate_1e9
    ));
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareArm {
    pub splitter: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareOutcome {
    pub arms: Vec<CompareArm>,
    /// True when the scenario schedules no events; the settling comparison
    /// is then vacuous.
    pub no_event: bool,
}

/// Runs the scenario once per splitter kind and returns both metric sets.
pub fn compare_with_kinds(
    config: &ScenarioConfig,
    kinds: &[SplitterKind],
) -> Result<(CompareOutcome, Vec<SimOutput>), CliError> {
    let mut arms = Vec::new();
    let mut outputs = Vec::new();
    for kind in kinds {
        let mut arm_config = config.clone();
        arm_config.splitter.kind = *kind;
        arm_config.scenario.name = format!(
            "{}[{}]",
            config.scenario.name,
            splitter_name(*kind)
        );
        let output = run_sim(&arm_config)?;
        arms.push(CompareArm {
            splitter: splitter_name(*kind).to_string(),
            metrics: output.metrics.clone(),
        });
        outputs.push(output);
    }
    Ok((
        CompareOutcome {
            no_event: config.events.is_empty(),
            arms,
        },
        outputs,
    ))
}

fn splitter_name(kind: SplitterKind) -> &'static str {
    match kind {
        SplitterKind::Decentralized => "decentralized",
        SplitterKind::BaselineAdaptive => "baseline_adaptive",
    }
}

/// `compare <config> -o <dir>`: side-by-side decentralized vs baseline run
/// with per-arm outputs and a combined comparison report.
pub fn cmd_compare(
    config_path: &Path,
    out_dir: &Path,
    decimate: Option<usize>,
    with_svg: bool,
) -> Result<CompareOutcome, CliError> {
    let start = std::time::Instant::now();
    let mut config = ScenarioConfig::load(config_path)?;
    if let Some(d) = decimate {
        config.scenario.record_every = d;
    }
    config.validate()?;
    let kinds = [SplitterKind::Decentralized, SplitterKind::BaselineAdaptive];
    let (outcome, outputs) = compare_with_kinds(&config, &kinds)?;
    for (kind, output) in kinds.iter().zip(&outputs) {
        let arm_dir = out_dir.join(splitter_name(*kind));
        write_run_outputs(
            config_path,
            &arm_dir,
            output,
            config.references.p_a_w,
            with_svg,
            start.elapsed().as_secs_f64(),
        )?;
    }
    std::fs::create_dir_all(out_dir)?;
    let comparison_json =
        serde_json::to_string_pretty(&outcome).expect("comparison serialize") + "\n";
    std::fs::write(out_dir.join("comparison.json"), comparison_json)?;
    Ok(outcome)
}

pub fn format_compare(outcome: &CompareOutcome) -> String {
    let mut s = String::new();
    if outcome.no_event {
        s.push_str("no event scheduled; settling comparison is vacuous\n");
    }
    s.push_str("splitter             max |sum_p - p_A| after last event    settling to +-2%\n");
    for arm in &outcome.arms {
        let (dev, settle) = arm
            .metrics
            .events
            .last()
            .map(|e| {
                (
                    format!("{:.4e} W ({:.2}%)", e.max_abs_dev_w, 100.0 * e.max_rel_dev),
                    e.settling_time_s
                        .map(|t| format!("{:.4} s", t))
                        .unwrap_or_else(|| "never".to_string()),
                )
            })
            .unwrap_or_else(|| ("-".to_string(), "-".to_string()));
        s.push_str(&format!("{:<20} {:<36} {}\n", arm.splitter, dev, settle));
        s.push_str(&format!(
            "{:<20} steady split: {:?} W, pre-event max dev {:.3}%\n",
            "",
            arm.metrics
                .steady_state_split_w
                .iter()
                .map(|p| (p * 100.0).round() / 100.0)
                .collect::<Vec<_>>(),
            100.0 * arm.metrics.pre_event_max_rel_dev
        ));
    }
    s
}
