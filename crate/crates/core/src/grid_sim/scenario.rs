//! Scenario documents: base, topology, fault script, converter, PLL,
//! controller, noise and acceptance targets.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{
    Branch, ClearingAction, FaultEvent, FluxDecayGenParams, Network, Source, SourceKind,
};
use crate::core_types::{PerUnitBase, Phasor};
use crate::pll_dynamics::{Classification, PllParams, DEFAULT_I_CEILING};

const IDEAL_SOURCE_TOML: &str = include_str!("../../scenarios/ideal_source.toml");
const TWO_AREA_TOML: &str = include_str!("../../scenarios/two_area.toml");

/// Configuration error anchored to a line of the source document when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_pmu_interval")]
    pub pmu_interval: f64,
}

fn default_dt() -> f64 {
    50e-6
}

fn default_pmu_interval() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub name: String,
    pub from: String,
    pub to: String,
    pub l_henries: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Ideal {
        bus: String,
        e_mag: f64,
        #[serde(default)]
        e_ang_deg: f64,
    },
    FluxDecay {
        bus: String,
        t_d0p: f64,
        x_d: f64,
        x_dp: f64,
        e_q0: f64,
        #[serde(default)]
        angle_deg: f64,
        e_fd_max: f64,
        avr_gain: f64,
        avr_tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub pcc: String,
    pub buses: Vec<String>,
    pub branches: Vec<BranchConfig>,
    pub sources: Vec<SourceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub branch: String,
    pub position: f64,
    pub t_apply: f64,
    pub t_clear: f64,
    pub clearing: ClearingAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterConfig {
    /// Pre-fault d-axis current, pu.
    pub i_d: f64,
    #[serde(default)]
    pub i_q: f64,
    /// Open-loop d-axis command from the first fault onward, pu.
    pub fault_i_d: Option<f64>,
    #[serde(default = "default_tau")]
    pub tracking_tau: f64,
    #[serde(default = "default_ceiling")]
    pub i_ceiling: f64,
}

fn default_tau() -> f64 {
    0.01
}

fn default_ceiling() -> f64 {
    DEFAULT_I_CEILING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PllConfig {
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_limit")]
    pub freq_limit_hz: f64,
}

fn default_damping() -> f64 {
    0.707
}

fn default_bandwidth() -> f64 {
    10.0
}

fn default_limit() -> f64 {
    2.5
}

impl Default for PllConfig {
    fn default() -> Self {
        Self {
            damping: default_damping(),
            bandwidth_hz: default_bandwidth(),
            freq_limit_hz: default_limit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default)]
    pub closed_loop: bool,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_threshold")]
    pub dv_threshold: f64,
    #[serde(default = "default_e_max")]
    pub e_max: f64,
    #[serde(default = "default_window")]
    pub window_m: usize,
    /// Gate reactance limit in pu; derived offline from outage reductions
    /// when absent.
    pub x_max: Option<f64>,
    #[serde(default = "default_imax_tol")]
    pub imax_tol: f64,
    #[serde(default = "default_imax_t_end")]
    pub imax_t_end: f64,
}

fn default_margin() -> f64 {
    0.95
}

fn default_threshold() -> f64 {
    0.02
}

fn default_e_max() -> f64 {
    1.0
}

fn default_window() -> usize {
    5
}

fn default_imax_tol() -> f64 {
    0.01
}

fn default_imax_t_end() -> f64 {
    2.0
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            closed_loop: false,
            margin: default_margin(),
            dv_threshold: default_threshold(),
            e_max: default_e_max(),
            window_m: default_window(),
            x_max: None,
            imax_tol: default_imax_tol(),
            imax_t_end: default_imax_t_end(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation per phasor component, pu.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Targets checked by a run. Each group is enabled by its criterion id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    pub estimator_id: Option<String>,
    pub first_update_by: Option<f64>,
    pub x_ref_henries: Option<f64>,
    pub x_ref_tol: Option<f64>,
    pub x_oracle_tol: Option<f64>,
    pub e_ref: Option<f64>,
    pub e_ref_tol: Option<f64>,
    pub post_clear_within: Option<f64>,
    pub post_clear_tol: Option<f64>,

    pub baselines_id: Option<String>,
    pub baseline_error_at: Option<f64>,
    pub quiescent_span: Option<(f64, f64)>,
    pub variance_ratio: Option<f64>,

    pub dichotomy_id: Option<String>,
    pub stable_i_d: Option<f64>,
    pub unstable_i_d: Option<f64>,
    pub pinned_hz: Option<f64>,

    pub closed_loop_id: Option<String>,
    pub command_ratio: Option<f64>,

    /// Stable-current search on a reference estimated equivalent.
    pub imax_id: Option<String>,
    pub imax_te_e: Option<f64>,
    pub imax_te_x_henries: Option<f64>,
    pub imax_expected: Option<f64>,
    pub imax_abs_tol: Option<f64>,

    /// Phase-portrait batch on a reference faulted equivalent.
    pub portrait_id: Option<String>,
    pub portrait_te_e: Option<f64>,
    pub portrait_te_x_henries: Option<f64>,
    pub portrait_i_d: Option<Vec<f64>>,
    pub portrait_expected: Option<Vec<Classification>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub base: PerUnitBase,
    pub sim: SimConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    pub converter: ConverterConfig,
    #[serde(default)]
    pub pll: PllConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// First line mentioning `needle` as a quoted value or a key.
fn locate(src: &str, needle: &str) -> Option<usize> {
    let quoted = format!("\"{needle}\"");
    src.lines()
        .position(|l| {
            let code = l.split('#').next().unwrap_or("");
            code.contains(&quoted) || code.trim_start().starts_with(needle)
        })
        .map(|k| k + 1)
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let scn: Scenario = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        scn.validate().map_err(|(needle, message)| ConfigError {
            line: needle.and_then(|n| locate(src, &n)),
            message,
        })?;
        Ok(scn)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&src).map_err(|e| ConfigError {
            line: e.line,
            message: format!("{}: {}", path.display(), e.message),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn pll_params(&self) -> PllParams {
        PllParams::from_damping(
            self.pll.damping,
            self.pll.bandwidth_hz,
            self.base.f_nom_hz,
            self.pll.freq_limit_hz,
        )
        .expect("validated PLL configuration")
    }

    /// First fault event, if any.
    pub fn first_fault(&self) -> Option<&FaultConfig> {
        self.faults
            .iter()
            .min_by(|a, b| a.t_apply.total_cmp(&b.t_apply))
    }

    /// Semantic validation of an in-memory scenario (no line anchors).
    pub fn check(&self) -> Result<(), ConfigError> {
        self.validate().map_err(|(_, message)| ConfigError {
            line: None,
            message,
        })
    }

    fn validate(&self) -> Result<(), (Option<String>, String)> {
        let err = |needle: &str, msg: String| Err((Some(needle.to_string()), msg));
        if !self.base.is_valid() {
            return err("[base]", "base quantities must be positive".into());
        }
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt <= 100e-6) {
            return err("dt", format!("sim.dt = {} must lie in (0, 1e-4] s", s.dt));
        }
        if !(s.pmu_interval > 0.0 && s.t_end > 0.0) {
            return err("pmu_interval", "sim.t_end and sim.pmu_interval must be positive".into());
        }
        let ratio = s.pmu_interval / s.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return err("pmu_interval", "sim.pmu_interval must be a multiple of sim.dt".into());
        }
        let n = &self.network;
        let bus = |name: &str| n.buses.iter().position(|b| b == name);
        if bus(&n.pcc).is_none() {
            return err(&n.pcc, format!("pcc bus '{}' is not declared", n.pcc));
        }
        for b in &n.branches {
            for end in [&b.from, &b.to] {
                if bus(end).is_none() {
                    return err(end, format!("branch '{}' refers to unknown bus '{end}'", b.name));
                }
            }
            if !(b.l_henries > 0.0) {
                return err(&b.name, format!("branch '{}' needs l_henries > 0", b.name));
            }
        }
        if n.sources.is_empty() {
            return err("[network]", "at least one source is required".into());
        }
        for src in &n.sources {
            match src {
                SourceConfig::Ideal { bus: b, .. } => {
                    if bus(b).is_none() {
                        return err(b, format!("source at unknown bus '{b}'"));
                    }
                }
                SourceConfig::FluxDecay {
                    bus: b,
                    t_d0p,
                    x_d,
                    x_dp,
                    avr_tau,
                    e_fd_max,
                    ..
                } => {
                    if bus(b).is_none() {
                        return err(b, format!("generator at unknown bus '{b}'"));
                    }
                    if !(*x_d > *x_dp && *x_dp > 0.0 && *t_d0p > 0.0 && *avr_tau > 0.0) {
                        return err(
                            "x_d",
                            "generator needs x_d > x_dp > 0, t_d0p > 0, avr_tau > 0".into(),
                        );
                    }
                    if !(*e_fd_max > 0.0) {
                        return err("e_fd_max", "generator needs e_fd_max > 0".into());
                    }
                }
            }
        }
        for f in &self.faults {
            if !n.branches.iter().any(|b| b.name == f.branch) {
                return err(&f.branch, format!("fault on unknown branch '{}'", f.branch));
            }
            if !(0.0..=1.0).contains(&f.position) {
                return err("position", format!("fault position {} outside [0, 1]", f.position));
            }
            if !(f.t_clear > f.t_apply && f.t_apply >= 0.0) {
                return err("t_clear", "fault needs 0 <= t_apply < t_clear".into());
            }
        }
        let c = &self.converter;
        if !(c.tracking_tau > 0.0 && c.i_ceiling > 0.0) {
            return err("tracking_tau", "converter needs tracking_tau > 0 and i_ceiling > 0".into());
        }
        if c.i_d.hypot(c.i_q) > c.i_ceiling {
            return err("i_d", "pre-fault current exceeds the converter ceiling".into());
        }
        if let Some(fi) = c.fault_i_d {
            if fi.hypot(c.i_q) > c.i_ceiling || fi < 0.0 {
                return err("fault_i_d", "fault current must lie in [0, ceiling]".into());
            }
        }
        if PllParams::from_damping(
            self.pll.damping,
            self.pll.bandwidth_hz,
            self.base.f_nom_hz,
            self.pll.freq_limit_hz,
        )
        .is_err()
        {
            return err("[pll]", "PLL damping, bandwidth and limit must be positive".into());
        }
        let k = &self.controller;
        if !(k.margin > 0.0 && k.margin <= 1.0) {
            return err("margin", "controller margin must lie in (0, 1]".into());
        }
        if !(k.dv_threshold > 0.0 && k.e_max > 0.0 && k.window_m >= 2) {
            return err(
                "[controller]",
                "need dv_threshold > 0, e_max > 0, window_m >= 2".into(),
            );
        }
        if matches!(k.x_max, Some(x) if !(x > 0.0)) {
            return err("x_max", "x_max must be positive".into());
        }
        if !(self.noise.sigma >= 0.0) {
            return err("sigma", "noise sigma must be non-negative".into());
        }
        Ok(())
    }

    /// Runtime network with inductances converted to pu.
    pub fn network(&self) -> Network {
        let n = &self.network;
        let bus = |name: &str| n.buses.iter().position(|b| b == name).expect("validated bus");
        let branches: Vec<Branch> = n
            .branches
            .iter()
            .map(|b| Branch {
                name: b.name.clone(),
                from: bus(&b.from),
                to: bus(&b.to),
                l_henries: b.l_henries,
                x: self.base.reactance_pu(b.l_henries),
                in_service: b.in_service,
            })
            .collect();
        let sources = n
            .sources
            .iter()
            .map(|s| match s {
                SourceConfig::Ideal {
                    bus: b,
                    e_mag,
                    e_ang_deg,
                } => Source {
                    bus: bus(b),
                    kind: SourceKind::IdealSource {
                        e: Phasor::from_polar(*e_mag, e_ang_deg * PI / 180.0),
                    },
                },
                SourceConfig::FluxDecay {
                    bus: b,
                    t_d0p,
                    x_d,
                    x_dp,
                    e_q0,
                    angle_deg,
                    e_fd_max,
                    avr_gain,
                    avr_tau,
                } => Source {
                    bus: bus(b),
                    kind: SourceKind::FluxDecayGen(FluxDecayGenParams {
                        t_d0p: *t_d0p,
                        x_d: *x_d,
                        x_dp: *x_dp,
                        e_q0: *e_q0,
                        angle: angle_deg * PI / 180.0,
                        e_fd_max: *e_fd_max,
                        avr_gain: *avr_gain,
                        avr_tau: *avr_tau,
                    }),
                },
            })
            .collect();
        let faults = self
            .faults
            .iter()
            .map(|f| FaultEvent {
                t_apply: f.t_apply,
                t_clear: f.t_clear,
                branch: branches
                    .iter()
                    .position(|b| b.name == f.branch)
                    .expect("validated branch"),
                position: f.position,
                clearing: f.clearing,
            })
            .collect();
        Network {
            buses: n.buses.clone(),
            branches,
            sources,
            pcc: bus(&n.pcc),
            faults,
        }
    }
}

/// The two reference scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinScenarios {
    pub ideal_source: Scenario,
    pub two_area: Scenario,
}

pub fn builtin_scenarios() -> BuiltinScenarios {
    BuiltinScenarios {
        ideal_source: Scenario::from_toml_str(IDEAL_SOURCE_TOML).expect("bundled scenario parses"),
        two_area: Scenario::from_toml_str(TWO_AREA_TOML).expect("bundled scenario parses"),
    }
}

/// Bundled scenario by name, with its source text.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "ideal_source" => Some(IDEAL_SOURCE_TOML),
        "two_area" => Some(TWO_AREA_TOML),
        _ => None,
    }
}
