//! Machine-readable run reports and their consolidation.
//!
//! Field order in every struct is the JSON field order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::pll_dynamics::Classification;
use crate::te_estimator::Method;

/// File name of a run report inside its run directory.
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckValue {
    Number(f64),
    Text(String),
}

impl CheckValue {
    fn render(&self) -> String {
        match self {
            CheckValue::Number(v) if *v != 0.0 && v.abs() < 1e-3 => format!("{v:.3e}"),
            CheckValue::Number(v) => format!("{v:.6}"),
            CheckValue::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for CheckValue {
    fn from(v: f64) -> Self {
        CheckValue::Number(v)
    }
}

impl From<Classification> for CheckValue {
    fn from(c: Classification) -> Self {
        CheckValue::Text(c.as_str().to_string())
    }
}

/// One acceptance check. `id` names the criterion, `label` the quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCheck {
    pub id: String,
    pub label: String,
    pub target: CheckValue,
    /// `None` when the quantity was never produced.
    pub measured: Option<CheckValue>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub first_update_s: Option<f64>,
    /// First update time minus the first fault time.
    pub first_update_latency_s: Option<f64>,
    pub final_x_error_pct: Option<f64>,
    pub final_e_error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub t_apply: f64,
    pub t_clear: f64,
    pub i_d: f64,
    pub classification: Classification,
    pub extended: bool,
    pub final_freq_dev_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub t: f64,
    pub i_d_ref: f64,
    pub i_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Unique key under which reports are merged.
    pub run_id: String,
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    pub classifications: Vec<ClassificationOutcome>,
    pub commands: Vec<CommandOutcome>,
    pub checks: Vec<AcceptanceCheck>,
}

impl RunReport {
    pub fn new(run_id: impl Into<String>, scenario: impl Into<String>, mode: &str) -> Self {
        Self {
            run_id: run_id.into(),
            scenario: scenario.into(),
            mode: mode.to_string(),
            seed: 0,
            methods: Vec::new(),
            classifications: Vec::new(),
            commands: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> impl Iterator<Item = &AcceptanceCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Reports merged across runs, ordered by `run_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub runs: Vec<RunReport>,
    pub pass: bool,
}

impl ConsolidatedReport {
    pub fn checks(&self) -> impl Iterator<Item = &AcceptanceCheck> {
        self.runs.iter().flat_map(|r| r.checks.iter())
    }

    /// Criterion ids that have at least one failing check, sorted.
    pub fn failing_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .checks()
            .filter(|c| !c.pass)
            .map(|c| c.id.clone())
            .collect();
        ids.sort_by_key(|id| id_order(id));
        ids.dedup();
        ids
    }

    /// Per-criterion verdict: a criterion passes when all its checks pass.
    pub fn by_criterion(&self) -> BTreeMap<(u32, String), bool> {
        let mut out = BTreeMap::new();
        for c in self.checks() {
            let e = out.entry((id_order(&c.id), c.id.clone())).or_insert(true);
            *e &= c.pass;
        }
        out
    }

    /// Fixed-width text table of every check.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<40} {:<34} {:>14} {:>14} {:>9}  result",
            "id", "run", "check", "target", "measured", "tol"
        );
        let mut rows: Vec<(&RunReport, &AcceptanceCheck)> = self
            .runs
            .iter()
            .flat_map(|r| r.checks.iter().map(move |c| (r, c)))
            .collect();
        rows.sort_by_key(|(_, c)| id_order(&c.id));
        for (r, c) in rows {
            let _ = writeln!(
                s,
                "{:<6} {:<40} {:<34} {:>14} {:>14} {:>9}  {}",
                c.id,
                r.run_id,
                c.label,
                c.target.render(),
                c.measured.as_ref().map_or("-".to_string(), CheckValue::render),
                c.tolerance.map_or("-".to_string(), |t| format!("{t:e}")),
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Numeric part of an `AC<n>` id for ordering; other ids sort last.
fn id_order(id: &str) -> u32 {
    id.strip_prefix("AC")
        .and_then(|n| n.parse().ok())
        .unwrap_or(u32::MAX)
}

/// Merges reports in the given order; a later report replaces an earlier one
/// with the same `run_id` and produces a warning.
pub fn merge_reports(reports: Vec<RunReport>) -> (ConsolidatedReport, Vec<String>) {
    let mut by_id: BTreeMap<String, RunReport> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in reports {
        if by_id.contains_key(&r.run_id) {
            warnings.push(format!(
                "duplicate run '{}': keeping the later report",
                r.run_id
            ));
        }
        by_id.insert(r.run_id.clone(), r);
    }
    let runs: Vec<RunReport> = by_id.into_values().collect();
    let pass = runs.iter().all(RunReport::passed);
    (ConsolidatedReport { runs, pass }, warnings)
}

/// Every `report.json` directly in `dir` or one level below, oldest first
/// (modification time, then path).
pub fn find_reports(dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    if !dir.is_dir() {
        return Err(RunnerError::NoReports(dir.display().to_string()));
    }
    let io_err = |e: std::io::Error| RunnerError::Io(format!("{}: {e}", dir.display()));
    let mut found = Vec::new();
    let top = dir.join(REPORT_FILE);
    if top.is_file() {
        found.push(top);
    }
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let p = entry.map_err(io_err)?.path().join(REPORT_FILE);
        if p.is_file() {
            found.push(p);
        }
    }
    let mut keyed: Vec<(std::time::SystemTime, PathBuf)> = found
        .into_iter()
        .map(|p| {
            let m = fs::metadata(&p)
                .and_then(|m| m.modified())
                .unwrap_or(std::time::UNIX_EPOCH);
            (m, p)
        })
        .collect();
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Loads and merges every report under `dir`.
pub fn load_and_merge(dir: &Path) -> Result<(ConsolidatedReport, Vec<String>), RunnerError> {
    let paths = find_reports(dir)?;
    if paths.is_empty() {
        return Err(RunnerError::NoReports(dir.display().to_string()));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| RunnerError::Io(format!("{}: {e}", p.display())))?;
        let r: RunReport = serde_json::from_str(&text)
            .map_err(|e| RunnerError::BadReport(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    Ok(merge_reports(reports))
}
