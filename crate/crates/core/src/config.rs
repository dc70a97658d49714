//! Declarative scenario configuration.
//!
//! One TOML file drives simulation runs, offline allocator solves and
//! comparisons. Physical quantities carry explicit unit suffixes in key
//! names (`r_g_ohm`, `l_g0_henry`, `f_hz`, ...) so the Hz/rad-s ambiguity
//! never leaks into configs; the plant converts to rad/s internally.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error at {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub grid: GridSection,
    pub references: ReferencesSection,
    pub graph: GraphSection,
    pub allocator: AllocatorSection,
    pub splitter: SplitterSection,
    #[serde(rename = "ibr")]
    pub ibrs: Vec<IbrSection>,
    #[serde(rename = "event", default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub name: String,
    pub t_end_s: f64,
    pub dt_plant_s: f64,
    /// Record every Nth plant step (1 = full rate).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Power base for per-unit reporting; defaults to p_a_w (or 1 if zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_base_va: Option<f64>,
    /// Start of the post-transient window used by steady-state metrics.
    #[serde(default = "default_transient_s")]
    pub transient_window_s: f64,
    /// Reserved for stochastic extensions; the simulation itself is
    /// deterministic and never reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

fn default_record_every() -> usize {
    10
}

fn default_transient_s() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub v_g_d_volt: f64,
    #[serde(default)]
    pub v_g_q_volt: f64,
    pub f_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencesSection {
    pub p_a_w: f64,
    #[serde(default)]
    pub q_a_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSection {
    /// Unordered 1-based node pairs.
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocatorSection {
    pub alpha: f64,
    pub period_s: f64,
    #[serde(default = "default_iters_per_period")]
    pub iters_per_period: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    #[serde(default = "default_beta_nominal")]
    pub beta_nominal: f64,
    #[serde(default = "default_beta_fault")]
    pub beta_fault: f64,
    /// Detection threshold on |r_hat - r_nominal|; defaults to 0.5 * r_bar
    /// of the first inverter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_threshold_ohm: Option<f64>,
    /// Latch hysteresis; defaults to 0.1 * r_bar of the first inverter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_hysteresis_ohm: Option<f64>,
}

fn default_iters_per_period() -> u64 {
    50
}
fn default_tol() -> f64 {
    1e-9
}
fn default_max_iters() -> u64 {
    100_000
}
fn default_beta_nominal() -> f64 {
    1.0
}
fn default_beta_fault() -> f64 {
    1e4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitterKind {
    Decentralized,
    BaselineAdaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitterSection {
    pub kind: SplitterKind,
    /// First-order redistribution rate of the baseline surrogate, 1/s.
    #[serde(default = "default_baseline_rate")]
    pub baseline_rate_per_s: f64,
}

fn default_baseline_rate() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbrSection {
    pub r_g_ohm: f64,
    pub l_g0_henry: f64,
    #[serde(default)]
    pub delta_l_g_henry: f64,
    pub r_m_ohm: f64,
    pub l_m_henry: f64,
    pub k_gain_ohm: f64,
    pub gamma_r: f64,
    pub r_bar_ohm: f64,
    pub epsilon_ohm: f64,
    pub r_hat0_ohm: f64,
    #[serde(default)]
    pub i0_d_a: f64,
    #[serde(default)]
    pub i0_q_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSection {
    pub t_s: f64,
    /// "open_line" (requires `ibr`) or "swell" (requires `fraction`).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibr: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

/// Inputs for the offline allocator solve (`solve` subcommand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSection {
    /// Per-node penalties; defaults to beta_nominal everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

/// A validated event, 0-based where applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimEvent {
    OpenLine { ibr: usize },
    Swell { fraction: f64 },
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn n_ibrs(&self) -> usize {
        self.ibrs.len()
    }

    pub fn s_base(&self) -> f64 {
        match self.scenario.s_base_va {
            Some(s) => s,
            None => {
                if self.references.p_a_w != 0.0 {
                    self.references.p_a_w.abs()
                } else {
                    1.0
                }
            }
        }
    }

    pub fn detect_threshold(&self) -> f64 {
        self.allocator
            .detect_threshold_ohm
            .unwrap_or_else(|| 0.5 * self.ibrs[0].r_bar_ohm)
    }

    pub fn detect_hysteresis(&self) -> f64 {
        self.allocator
            .detect_hysteresis_ohm
            .unwrap_or_else(|| 0.1 * self.ibrs[0].r_bar_ohm)
    }

    /// Validated events with 0-based inverter indices, in file order.
    pub fn sim_events(&self) -> Result<Vec<(f64, SimEvent)>, ConfigError> {
        self.events
            .iter()
            .enumerate()
            .map(|(idx, ev)| {
                let field = format!("event[{idx}]");
                let parsed = match ev.kind.as_str() {
                    "open_line" => {
                        let ibr = ev.ibr.ok_or_else(|| {
                            invalid(&format!("{field}.ibr"), "open_line event requires `ibr`")
                        })?;
                        if ibr < 1 || ibr > self.n_ibrs() {
                            return Err(invalid(
                                &format!("{field}.ibr"),
                                format!("inverter index {ibr} outside 1..={}", self.n_ibrs()),
                            ));
                        }
                        SimEvent::OpenLine { ibr: ibr - 1 }
                    }
                    "swell" => {
                        let fraction = ev.fraction.ok_or_else(|| {
                            invalid(&format!("{field}.fraction"), "swell event requires `fraction`")
                        })?;
                        if fraction <= -1.0 {
                            return Err(invalid(
                                &format!("{field}.fraction"),
                                "fraction must exceed -1",
                            ));
                        }
                        SimEvent::Swell { fraction }
                    }
                    other => {
                        return Err(invalid(
                            &format!("{field}.kind"),
                            format!("unknown event kind `{other}`"),
                        ))
                    }
                };
                Ok((ev.t_s, parsed))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ibrs.is_empty() {
            return Err(invalid("ibr", "at least one [[ibr]] block is required"));
        }
        if !(self.scenario.t_end_s > 0.0) {
            return Err(invalid("scenario.t_end_s", "must be > 0"));
        }
        if !(self.scenario.dt_plant_s > 0.0) {
            return Err(invalid("scenario.dt_plant_s", "must be > 0"));
        }
        if self.scenario.record_every == 0 {
            return Err(invalid("scenario.record_every", "must be >= 1"));
        }
        if let Some(s) = self.scenario.s_base_va {
            if !(s > 0.0) {
                return Err(invalid("scenario.s_base_va", "must be > 0"));
            }
        }
        if !(self.grid.f_hz > 0.0) {
            return Err(invalid("grid.f_hz", "must be > 0"));
        }
        let v_norm = (self.grid.v_g_d_volt.powi(2) + self.grid.v_g_q_volt.powi(2)).sqrt();
        if !(v_norm > 0.0) {
            return Err(invalid("grid.v_g_d_volt", "grid voltage magnitude must be > 0"));
        }
        if !(self.allocator.alpha > 0.0) {
            return Err(invalid("allocator.alpha", "must be > 0"));
        }
        if self.allocator.period_s < self.scenario.dt_plant_s {
            return Err(invalid(
                "allocator.period_s",
                "must be >= scenario.dt_plant_s",
            ));
        }
        if self.allocator.iters_per_period == 0 {
            return Err(invalid("allocator.iters_per_period", "must be >= 1"));
        }
        if !(self.allocator.beta_nominal > 0.0) || !(self.allocator.beta_fault > 0.0) {
            return Err(invalid("allocator.beta_nominal", "penalties must be > 0"));
        }
        let thr = self.detect_threshold();
        let hys = self.detect_hysteresis();
        if !(thr > hys && hys > 0.0) {
            return Err(invalid(
                "allocator.detect_threshold_ohm",
                "need threshold > hysteresis > 0",
            ));
        }
        if !(self.splitter.baseline_rate_per_s > 0.0) {
            return Err(invalid("splitter.baseline_rate_per_s", "must be > 0"));
        }

        for (idx, ibr) in self.ibrs.iter().enumerate() {
            let f = |name: &str| format!("ibr[{idx}].{name}");
            if !(ibr.r_g_ohm > 0.0) {
                return Err(invalid(&f("r_g_ohm"), "must be > 0"));
            }
            if !(ibr.l_g0_henry > 0.0) {
                return Err(invalid(&f("l_g0_henry"), "must be > 0"));
            }
            if !(ibr.l_g0_henry + ibr.delta_l_g_henry > 0.0) {
                return Err(invalid(
                    &f("delta_l_g_henry"),
                    "l_g0 + delta_l_g must stay > 0",
                ));
            }
            if !(ibr.r_m_ohm > 0.0) || !(ibr.l_m_henry > 0.0) || !(ibr.k_gain_ohm > 0.0) {
                return Err(invalid(&f("r_m_ohm"), "reference-model parameters must be > 0"));
            }
            if !(ibr.gamma_r > 0.0) {
                return Err(invalid(&f("gamma_r"), "must be > 0"));
            }
            if !(ibr.r_bar_ohm > 0.0) || !(ibr.epsilon_ohm > 0.0) {
                return Err(invalid(&f("r_bar_ohm"), "projection bounds must be > 0"));
            }
            if ibr.r_hat0_ohm.abs() >= ibr.r_bar_ohm {
                return Err(invalid(
                    &f("r_hat0_ohm"),
                    "initial estimate must satisfy |r_hat0| < r_bar",
                ));
            }
        }

        // Graph indices are checked when the topology is built, but node
        // count bounds give better messages here.
        for (idx, e) in self.graph.edges.iter().enumerate() {
            let n = self.n_ibrs();
            if e[0] < 1 || e[0] > n || e[1] < 1 || e[1] > n {
                return Err(invalid(
                    &format!("graph.edges[{idx}]"),
                    format!("node indices must lie in 1..={n}"),
                ));
            }
            if e[0] == e[1] {
                return Err(invalid(&format!("graph.edges[{idx}]"), "self-loop"));
            }
        }

        let events = self.sim_events()?;
        let mut last_t = f64::NEG_INFINITY;
        for (idx, (t, _)) in events.iter().enumerate() {
            if *t < 0.0 {
                return Err(invalid(&format!("event[{idx}].t_s"), "must be >= 0"));
            }
            if *t < last_t {
                return Err(invalid(
                    &format!("event[{idx}].t_s"),
                    "events must be sorted by time",
                ));
            }
            last_t = *t;
        }

        if let Some(solve) = &self.solve {
            if let Some(beta) = &solve.beta {
                if beta.len() != self.n_ibrs() {
                    return Err(invalid(
                        "solve.beta",
                        format!("expected {} entries", self.n_ibrs()),
                    ));
                }
                if beta.iter().any(|b| !(*b > 0.0)) {
                    return Err(invalid("solve.beta", "entries must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Bundled scenario mirroring the 3-inverter study: path communication
/// graph, open-line fault on inverter 3 plus a 10% voltage swell at 0.2 s.
pub fn paper_3ibr_fault() -> ScenarioConfig {
    let ibr = IbrSection {
        r_g_ohm: 0.027,
        l_g0_henry: 0.0367,
        delta_l_g_henry: 0.0,
        r_m_ohm: 0.027,
        l_m_henry: 0.0367,
        k_gain_ohm: 7.5,
        gamma_r: 100.0,
        r_bar_ohm: 0.27,
        epsilon_ohm: 0.027,
        r_hat0_ohm: 0.024,
        i0_d_a: 0.0,
        i0_q_a: 0.0,
    };
    ScenarioConfig {
        scenario: ScenarioSection {
            name: "paper_3ibr_fault".to_string(),
            t_end_s: 0.4,
            dt_plant_s: 1e-5,
            record_every: 10,
            s_base_va: None,
            transient_window_s: 0.05,
            rng_seed: None,
        },
        grid: GridSection {
            v_g_d_volt: 392.0,
            v_g_q_volt: 0.0,
            f_hz: 60.0,
        },
        references: ReferencesSection {
            p_a_w: 1176.0,
            q_a_var: 0.0,
        },
        graph: GraphSection {
            edges: vec![[1, 2], [2, 3]],
            tau: Some(3.0),
        },
        allocator: AllocatorSection {
            alpha: 0.1,
            period_s: 1e-3,
            iters_per_period: 50,
            tol: 1e-9,
            max_iters: 100_000,
            beta_nominal: 1.0,
            beta_fault: 1e4,
            detect_threshold_ohm: None,
            detect_hysteresis_ohm: None,
        },
        splitter: SplitterSection {
            kind: SplitterKind::Decentralized,
            baseline_rate_per_s: 20.0,
        },
        ibrs: vec![ibr.clone(), ibr.clone(), ibr],
        events: vec![
            EventSection {
                t_s: 0.2,
                kind: "open_line".to_string(),
                ibr: Some(3),
                fraction: None,
            },
            EventSection {
                t_s: 0.2,
                kind: "swell".to_string(),
                ibr: None,
                fraction: Some(0.10),
            },
        ],
        solve: Some(SolveSection {
            beta: Some(vec![1.0, 1.0, 1e4]),
        }),
    }
}

/// Same plant and controller parameters with no events; used for the
/// healthy steady-state and certificate checks.
pub fn healthy_steady() -> ScenarioConfig {
    let mut config = paper_3ibr_fault();
    config.scenario.name = "healthy_steady".to_string();
    config.scenario.t_end_s = 0.2;
    config.events.clear();
    config.solve = Some(SolveSection { beta: None });
    config
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        paper_3ibr_fault().validate().unwrap();
        healthy_steady().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_identity() {
        for config in [paper_3ibr_fault(), healthy_steady()] {
            let text = config.to_toml_string();
            let reparsed = ScenarioConfig::from_toml_str(&text).unwrap();
            assert_eq!(reparsed, config);
            // And a second round trip yields identical text.
            assert_eq!(reparsed.to_toml_string(), text);
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut config = paper_3ibr_fault();
        config.ibrs[1].l_g0_henry = -1.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("ibr[1].l_g0_henry"), "{err}");

        let mut config = paper_3ibr_fault();
        config.events[0].ibr = Some(9);
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("event[0].ibr"), "{err}");

        let mut config = paper_3ibr_fault();
        config.allocator.period_s = 1e-6;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("allocator.period_s"), "{err}");

        let mut config = paper_3ibr_fault();
        config.events.swap(0, 1);
        config.events[0].t_s = 0.3; // now out of order
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("event[1].t_s"), "{err}");
    }

    #[test]
    fn unknown_event_kind_is_rejected() {
        let mut config = paper_3ibr_fault();
        config.events[0].kind = "meteor".to_string();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("event[0].kind"), "{err}");
    }

    #[test]
    fn s_base_defaults_to_aggregate_reference() {
        let mut config = paper_3ibr_fault();
        assert_eq!(config.s_base(), 1176.0);
        config.references.p_a_w = 0.0;
        assert_eq!(config.s_base(), 1.0);
        config.scenario.s_base_va = Some(500.0);
        assert_eq!(config.s_base(), 500.0);
    }

    #[test]
    fn detection_defaults_derive_from_r_bar() {
        let config = paper_3ibr_fault();
        assert!((config.detect_threshold() - 0.135).abs() < 1e-15);
        assert!((config.detect_hysteresis() - 0.027).abs() < 1e-15);
    }
}
