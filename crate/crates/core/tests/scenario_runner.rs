use std::fs;
use std::path::{Path, PathBuf};

use gsl_core::grid_sim::builtin_scenarios;
use gsl_core::pll_dynamics::{phase_portrait, PllParams, PortraitSpec};
use gsl_core::core_types::TheveninParams;
use gsl_core::scenario_runner::{
    execute, load_and_merge, load_scenario, portrait_artifacts, resolve_out_dir, run_artifacts,
    write_artifacts, MethodSelection, RunOptions, RunReport, RunnerError,
};
use gsl_core::te_estimator::Method;

fn open_loop(i_d: f64) -> RunOptions {
    RunOptions {
        closed_loop: Some(false),
        fault_i_d: Some(i_d),
        ..RunOptions::default()
    }
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let scn = builtin_scenarios().two_area;
    let opts = RunOptions {
        closed_loop: Some(true),
        methods: MethodSelection::All,
        ..RunOptions::default()
    };
    let a = run_artifacts(&execute(&scn, &opts).unwrap());
    let b = run_artifacts(&execute(&scn, &opts).unwrap());
    assert_eq!(a, b);
}

#[test]
fn method_selection_controls_written_series() {
    let scn = builtin_scenarios().ideal_source;
    let names = |sel: MethodSelection| -> Vec<PathBuf> {
        let out = execute(&scn, &RunOptions { methods: sel, ..open_loop(0.45) }).unwrap();
        run_artifacts(&out)
            .into_keys()
            .filter(|p| p.to_string_lossy().contains("estimates_"))
            .collect()
    };
    assert_eq!(names(MethodSelection::Gated).len(), 1);
    assert_eq!(names(MethodSelection::With(Method::Rls)).len(), 2);
    let all = names(MethodSelection::All);
    assert_eq!(all.len(), 4);
    for m in Method::ALL {
        assert!(all.iter().any(|p| p.ends_with(format!("estimates_{}.csv", m.as_str()))));
    }
}

#[test]
fn open_loop_report_carries_dichotomy_checks() {
    let scn = builtin_scenarios().ideal_source;
    let out = execute(&scn, &open_loop(0.55)).unwrap();
    let r = &out.report;
    assert_eq!(r.run_id, "ideal_source-open_loop-i_d_0.55");
    assert_eq!(r.mode, "open_loop");
    let labels: Vec<&str> = r.checks.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, ["i_d_0.55_classification", "i_d_0.55_pinned_freq_hz"]);
    assert!(r.passed());
    // Off-list currents run but carry no checks.
    assert!(execute(&scn, &open_loop(0.3)).unwrap().report.checks.is_empty());
}

#[test]
fn report_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scn = builtin_scenarios().ideal_source;
    let out = execute(&scn, &open_loop(0.45)).unwrap();
    write_artifacts(dir.path(), &run_artifacts(&out)).unwrap();
    let (merged, warnings) = load_and_merge(dir.path()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(merged.runs, vec![out.report.clone()]);
    assert!(merged.pass);

    let text = fs::read_to_string(dir.path().join(&out.report.run_id).join("report.json")).unwrap();
    let back: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out.report);
}

#[test]
fn state_log_has_one_row_per_sample() {
    let scn = builtin_scenarios().ideal_source;
    let out = execute(&scn, &open_loop(0.45)).unwrap();
    let arts = run_artifacts(&out);
    let log = &arts[&Path::new(&out.report.run_id).join("state_log.csv")];
    let text = std::str::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), out.run.pmu.len() + 1);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 11));
}

#[test]
fn portrait_files_put_the_header_first_only() {
    let spec = PortraitSpec {
        i_d_list: vec![0.2, 0.7],
        i_q: 0.0,
        grid: vec![(0.0, 0.0), (0.3, 0.0)],
        t_end: 0.1,
        dt: 5e-5,
    };
    let batches = phase_portrait(&TheveninParams::lossless(1.0, 0.5), &PllParams::default(), &spec).unwrap();
    let arts = portrait_artifacts(Path::new("p"), &batches, 20);
    assert_eq!(arts.len(), 2);
    for bytes in arts.values() {
        let text = std::str::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with('t')).count(), 1);
        assert!(text.starts_with("t,"));
    }
}

#[test]
fn scenario_lookup_prefers_builtins_and_rejects_missing_files() {
    assert_eq!(load_scenario("two_area").unwrap().name, "two_area");
    let err = load_scenario("/no/such/file.toml").unwrap_err();
    assert!(matches!(err, RunnerError::Invalid(_)));
    assert_eq!(err.exit_code(), 2);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.toml");
    fs::write(&p, "name = \"b\"\n[sim]\nt_end = \"soon\"\n").unwrap();
    let err = load_scenario(p.to_str().unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn explicit_out_dir_wins() {
    assert_eq!(resolve_out_dir(Some(Path::new("x"))), PathBuf::from("x"));
}

#[test]
fn invalid_override_is_rejected() {
    let scn = builtin_scenarios().ideal_source;
    let err = execute(&scn, &open_loop(-1.0)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
