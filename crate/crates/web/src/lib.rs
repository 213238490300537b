//! Browser bindings: phase portraits, the stable-current search and the
//! estimator comparison on a built-in scenario.
//!
//! Each export returns a JSON string. The plain functions below carry the
//! logic and are what the native tests call; the `js_` wrappers only convert
//! errors for JavaScript.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use gsl_core::core_types::TheveninParams;
use gsl_core::grid_sim::builtin_scenarios;
use gsl_core::pll_dynamics::{phase_portrait, Classification, PllParams, PortraitSpec, DEFAULT_DT};
use gsl_core::scenario_runner::{execute, MethodSelection, RunOptions};
use gsl_core::stability_control::{max_stable_current, ImaxConfig, ImaxSummary};
use gsl_core::te_estimator::Method;

/// Points kept per trajectory for plotting.
const PLOT_POINTS: usize = 400;
/// Margin applied to the reported command.
const MARGIN: f64 = 0.95;

#[derive(Serialize)]
struct PortraitCurve {
    i_d: f64,
    classification: Classification,
    /// `[δ, δ̇]` pairs per trajectory, rad and rad/s.
    trajectories: Vec<Vec<[f64; 2]>>,
}

fn check_te(e: f64, x: f64) -> Result<TheveninParams, String> {
    if !(e > 0.0 && x > 0.0 && e.is_finite() && x.is_finite()) {
        return Err("need |E| > 0 and x > 0".into());
    }
    Ok(TheveninParams::lossless(e, x))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

/// Trajectories from a ring of initial angles for each `i_d`.
pub fn portrait(e: f64, x: f64, i_d_list: &[f64], t_end: f64) -> Result<String, String> {
    let te = check_te(e, x)?;
    if !(t_end > 0.0 && t_end <= 10.0) {
        return Err("t_end must lie in (0, 10] s".into());
    }
    let spec = PortraitSpec {
        i_d_list: i_d_list.to_vec(),
        i_q: 0.0,
        grid: PortraitSpec::default_grid(),
        t_end,
        dt: DEFAULT_DT,
    };
    let batches = phase_portrait(&te, &PllParams::default(), &spec).map_err(|e| e.to_string())?;
    let curves: Vec<PortraitCurve> = batches
        .iter()
        .map(|b| PortraitCurve {
            i_d: b.i_d,
            classification: b.classification,
            trajectories: b
                .trajectories
                .iter()
                .map(|t| {
                    let stride = (t.points.len() / PLOT_POINTS).max(1);
                    t.points
                        .iter()
                        .step_by(stride)
                        .map(|p| [p.delta, p.delta_dot])
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(json(&curves))
}

/// Largest synchronous `i_d` from rest at `delta0`, with the margin-scaled command.
pub fn imax(e: f64, x: f64, delta0: f64) -> Result<String, String> {
    let te = check_te(e, x)?;
    if !delta0.is_finite() {
        return Err("delta0 must be finite".into());
    }
    let result = max_stable_current(&te, &PllParams::default(), 0.0, &ImaxConfig::new(delta0));
    let summary = ImaxSummary::new(&te, 0.0, MARGIN, result).map_err(|e| e.to_string())?;
    Ok(json(&summary))
}

#[derive(Serialize)]
struct EstimatorTrace {
    scenario: String,
    t: Vec<f64>,
    truth_x_henries: Vec<f64>,
    /// Per method, `null` before the first estimate.
    series: Vec<(Method, Vec<Option<f64>>)>,
}

/// Closed-loop run of a built-in scenario with every estimator, reactances
/// in henries.
pub fn estimator_comparison(name: &str) -> Result<String, String> {
    let b = builtin_scenarios();
    let scn = match name {
        "ideal_source" => b.ideal_source,
        "two_area" => b.two_area,
        _ => return Err(format!("unknown scenario '{name}'")),
    };
    let out = execute(
        &scn,
        &RunOptions {
            closed_loop: Some(true),
            methods: MethodSelection::All,
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let base = &scn.base;
    let gated = out.series(Method::GatedLs);
    let t: Vec<f64> = gated.records.iter().map(|r| r.t).collect();
    let truth_x_henries = t
        .iter()
        .map(|&t| out.run.truth_at(t).map_or(f64::NAN, |s| base.henries(s.te.x)))
        .collect();
    let series = Method::ALL
        .iter()
        .map(|&m| {
            let xs = out
                .series(m)
                .records
                .iter()
                .map(|r| r.z.map(|z| base.henries(z.1)))
                .collect();
            (m, xs)
        })
        .collect();
    Ok(json(&EstimatorTrace {
        scenario: scn.name,
        t,
        truth_x_henries,
        series,
    }))
}

#[wasm_bindgen(js_name = phasePortrait)]
pub fn js_phase_portrait(e: f64, x: f64, i_d_list: &[f64], t_end: f64) -> Result<String, JsValue> {
    portrait(e, x, i_d_list, t_end).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = maxStableCurrent)]
pub fn js_max_stable_current(e: f64, x: f64, delta0: f64) -> Result<String, JsValue> {
    imax(e, x, delta0).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = estimatorComparison)]
pub fn js_estimator_comparison(name: &str) -> Result<String, JsValue> {
    estimator_comparison(name).map_err(|e| JsValue::from_str(&e))
}
