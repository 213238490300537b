//! The full acceptance suite over the built-in scenarios.

use std::path::{Path, PathBuf};

use super::properties::property_checks;
use super::report::{AcceptanceCheck, CheckValue, RunReport, REPORT_FILE};
use super::{
    execute, portrait_artifacts, run_artifacts, write_artifacts, Artifacts, MethodSelection,
    RunOptions, RunOutput, RunnerError,
};
use crate::core_types::TheveninParams;
use crate::grid_sim::{builtin_scenarios, thevenin_reduce, Scenario, SimError};
use crate::pll_dynamics::{
    equilibrium_points, phase_portrait, DqCurrent, PortraitBatch, PortraitSpec, DEFAULT_DT,
};
use crate::stability_control::{max_stable_current, ImaxConfig, ImaxSummary};
use crate::te_estimator::{de_max, required_dv, BoundInputs};

/// Seed of the property sweeps.
pub const PROPERTY_SEED: u64 = 0x5EED;
/// Horizon of portrait trajectories, s.
pub const PORTRAIT_T_END: f64 = 2.0;
/// Rows kept per portrait CSV: every `PORTRAIT_STRIDE`-th step.
pub const PORTRAIT_STRIDE: usize = 20;

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub artifacts: Artifacts,
    pub reports: Vec<RunReport>,
}

impl SuiteOutput {
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>, RunnerError> {
        write_artifacts(root, &self.artifacts)
    }
}

fn push_report(a: &mut Artifacts, reports: &mut Vec<RunReport>, r: RunReport) {
    a.insert(
        PathBuf::from(&r.run_id).join(REPORT_FILE),
        r.to_json().into_bytes(),
    );
    reports.push(r);
}

/// Stable operating angle of the pre-fault steady state.
pub fn prefault_delta(scn: &Scenario) -> Result<f64, RunnerError> {
    let te = thevenin_reduce(&scn.network(), 0.0)?;
    let cur = DqCurrent::new(scn.converter.i_d, scn.converter.i_q);
    Ok(equilibrium_points(&te, &cur)
        .ok_or(SimError::NoOperatingPoint)?
        .0)
}

fn reference_te(scn: &Scenario, e: f64, x_henries: f64) -> TheveninParams {
    TheveninParams::lossless(e, scn.base.reactance_pu(x_henries))
}

/// Stable-current search on the scenario's reference estimated equivalent,
/// started from the pre-fault angle. `None` when not configured.
pub fn imax_study(scn: &Scenario) -> Result<Option<(RunReport, ImaxSummary)>, RunnerError> {
    let acc = &scn.acceptance;
    let (Some(id), Some(e), Some(x)) = (
        acc.imax_id.as_deref(),
        acc.imax_te_e,
        acc.imax_te_x_henries,
    ) else {
        return Ok(None);
    };
    let te = reference_te(scn, e, x);
    let cfg = ImaxConfig {
        tol: scn.controller.imax_tol,
        t_end: scn.controller.imax_t_end,
        i_ceiling: scn.converter.i_ceiling,
        ..ImaxConfig::new(prefault_delta(scn)?)
    };
    let pll = scn.pll_params();
    let result = max_stable_current(&te, &pll, scn.converter.i_q, &cfg);
    let summary = ImaxSummary::new(&te, scn.converter.i_q, scn.controller.margin, result)?;
    let mut r = RunReport::new(format!("{}-imax", scn.name), scn.name.clone(), "imax");
    if let (Some(expected), Some(tol)) = (acc.imax_expected, acc.imax_abs_tol) {
        let pass = summary.i_max.is_some_and(|i| (i - expected).abs() <= tol);
        r.checks.push(AcceptanceCheck {
            id: id.to_string(),
            label: "i_max_pu".into(),
            target: expected.into(),
            measured: summary.i_max.map(Into::into),
            tolerance: Some(tol),
            pass,
        });
    }
    Ok(Some((r, summary)))
}

/// Phase-portrait batch on the scenario's reference faulted equivalent.
/// `None` when not configured.
pub fn portrait_study(scn: &Scenario) -> Result<Option<(RunReport, Vec<PortraitBatch>)>, RunnerError> {
    let acc = &scn.acceptance;
    let (Some(id), Some(e), Some(x), Some(list)) = (
        acc.portrait_id.as_deref(),
        acc.portrait_te_e,
        acc.portrait_te_x_henries,
        acc.portrait_i_d.as_ref(),
    ) else {
        return Ok(None);
    };
    let te = reference_te(scn, e, x);
    let spec = PortraitSpec {
        i_d_list: list.clone(),
        i_q: scn.converter.i_q,
        grid: PortraitSpec::default_grid(),
        t_end: PORTRAIT_T_END,
        dt: DEFAULT_DT,
    };
    let batches = phase_portrait(&te, &scn.pll_params(), &spec)?;
    let mut r = RunReport::new(format!("{}-portrait", scn.name), scn.name.clone(), "portrait");
    if let Some(expected) = &acc.portrait_expected {
        for (k, b) in batches.iter().enumerate() {
            let want = expected.get(k).copied();
            r.checks.push(AcceptanceCheck {
                id: id.to_string(),
                label: format!("i_d_{:.2}_classification", b.i_d),
                target: want.map_or(CheckValue::Text("unspecified".into()), Into::into),
                measured: Some(b.classification.into()),
                tolerance: None,
                pass: want == Some(b.classification),
            });
        }
    }
    Ok(Some((r, batches)))
}

/// Closed-form bound evaluations at the reference inputs.
fn bounds_report() -> RunReport {
    let mut r = RunReport::new("bounds", "none", "bounds");
    let de = de_max(&BoundInputs {
        t_d0p: 5.0,
        d_efd_max: 5.0,
        dt: 0.01,
    });
    let dv = required_dv(10.0, 0.01);
    for (label, target, got) in [("de_max_pu", 0.01, de), ("required_dv_pu", 0.11, dv)] {
        r.checks.push(AcceptanceCheck {
            id: "AC7".into(),
            label: label.into(),
            target: target.into(),
            measured: Some(got.into()),
            tolerance: Some(1e-12),
            pass: (got - target).abs() <= 1e-12,
        });
    }
    r
}

fn scenario_runs(
    scn: &Scenario,
    a: &mut Artifacts,
    reports: &mut Vec<RunReport>,
) -> Result<Vec<RunOutput>, RunnerError> {
    let mut runs = Vec::new();
    let closed = execute(
        scn,
        &RunOptions {
            closed_loop: Some(true),
            methods: MethodSelection::All,
            ..RunOptions::default()
        },
    )?;
    runs.push(closed);
    let acc = &scn.acceptance;
    for i in [acc.stable_i_d, acc.unstable_i_d].into_iter().flatten() {
        runs.push(execute(
            scn,
            &RunOptions {
                closed_loop: Some(false),
                fault_i_d: Some(i),
                ..RunOptions::default()
            },
        )?);
    }
    for run in &runs {
        a.extend(run_artifacts(run));
        reports.push(run.report.clone());
    }
    if let Some((r, summary)) = imax_study(scn)? {
        let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        json.push('\n');
        a.insert(PathBuf::from(&r.run_id).join("imax.json"), json.into_bytes());
        push_report(a, reports, r);
    }
    if let Some((r, batches)) = portrait_study(scn)? {
        a.extend(portrait_artifacts(
            Path::new(&r.run_id),
            &batches,
            PORTRAIT_STRIDE,
        ));
        push_report(a, reports, r);
    }
    Ok(runs)
}

/// One pass over every study without the determinism check.
fn suite_pass() -> Result<SuiteOutput, RunnerError> {
    let b = builtin_scenarios();
    let mut artifacts = Artifacts::new();
    let mut reports = Vec::new();
    let mut all_runs = Vec::new();
    for scn in [&b.ideal_source, &b.two_area] {
        all_runs.extend(scenario_runs(scn, &mut artifacts, &mut reports)?);
    }
    push_report(&mut artifacts, &mut reports, bounds_report());

    let mut props = RunReport::new("properties", "none", "properties");
    props.seed = PROPERTY_SEED;
    let drift: Vec<&RunOutput> = all_runs.iter().collect();
    props.checks = property_checks(PROPERTY_SEED, &b.ideal_source.pll_params(), &drift);
    push_report(&mut artifacts, &mut reports, props);
    Ok(SuiteOutput { artifacts, reports })
}

/// Runs every study twice and adds the byte-identity check of the two
/// artifact sets.
pub fn run_suite() -> Result<SuiteOutput, RunnerError> {
    let mut first = suite_pass()?;
    let second = suite_pass()?;
    let differing = first
        .artifacts
        .keys()
        .chain(second.artifacts.keys())
        .filter(|k| first.artifacts.get(*k) != second.artifacts.get(*k))
        .count();
    let mut det = RunReport::new("determinism", "none", "determinism");
    det.checks.push(AcceptanceCheck {
        id: "AC10".into(),
        label: "differing_artifacts".into(),
        target: 0.0.into(),
        measured: Some((differing as f64).into()),
        tolerance: None,
        pass: differing == 0,
    });
    det.checks.push(AcceptanceCheck {
        id: "AC10".into(),
        label: "artifacts_compared".into(),
        target: (first.artifacts.len() as f64).into(),
        measured: Some((second.artifacts.len() as f64).into()),
        tolerance: None,
        pass: first.artifacts.len() == second.artifacts.len() && !first.artifacts.is_empty(),
    });
    push_report(&mut first.artifacts, &mut first.reports, det);
    Ok(first)
}
