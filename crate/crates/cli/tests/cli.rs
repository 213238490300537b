use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsl"))
        .args(args)
        .env_remove("GSL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report_json(run_id: &str, pass: bool) -> String {
    format!(
        r#"{{"run_id":"{run_id}","scenario":"s","mode":"open_loop","seed":0,"methods":[],
"classifications":[],"commands":[],"checks":[{{"id":"AC4","label":"q","target":1.0,
"measured":1.0,"tolerance":null,"pass":{pass}}}]}}"#
    )
}

fn put_report(root: &Path, dir: &str, run_id: &str, pass: bool) {
    fs::create_dir_all(root.join(dir)).unwrap();
    fs::write(root.join(dir).join("report.json"), report_json(run_id, pass)).unwrap();
}

#[test]
fn nonexistent_scenario_path_exits_2() {
    let o = gsl(&["run", "/definitely/not/here.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn config_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "name = \"bad\"\n\nunknown_key = 3\n").unwrap();
    let o = gsl(&["run", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_method_exits_2() {
    let o = gsl(&["run", "ideal_source", "--method", "kalman"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn open_loop_run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = gsl(&["run", "ideal_source", "--fault-i-d", "0.45", "--out-dir", out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let run = dir.path().join("ideal_source-open_loop-i_d_0.45");
    for f in ["state_log.csv", "estimates_gated_ls.csv", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let header = fs::read_to_string(run.join("state_log.csv")).unwrap();
    assert!(header.starts_with(
        "t,v_mag,v_ang,i_d,i_q,delta,omega1_hz,p_pu,q_pu,truth_x_pu,truth_e_mag\n"
    ));
    let r: Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["run_id"], "ideal_source-open_loop-i_d_0.45");
}

#[test]
fn out_dir_defaults_to_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gsl"))
        .args(["run", "ideal_source", "--fault-i-d", "0.45"])
        .env("GSL_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("ideal_source-open_loop-i_d_0.45/report.json").is_file());
}

#[test]
fn method_all_writes_one_csv_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = gsl(&["run", "ideal_source", "--closed-loop", "--method", "all", "--out-dir", out]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let run = dir.path().join("ideal_source-closed_loop");
    for m in ["gated_ls", "window_ls", "rls", "dv_di"] {
        let p = run.join(format!("estimates_{m}.csv"));
        assert!(p.is_file(), "missing {}", p.display());
    }
}

#[test]
fn report_merges_and_flags_failures() {
    let dir = tempfile::tempdir().unwrap();
    put_report(dir.path(), "a", "run-a", true);
    put_report(dir.path(), "b", "run-b", false);
    let o = gsl(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let s = stdout(&o);
    assert!(s.contains("run-a") && s.contains("run-b"));
    assert!(s.contains("failing: AC4"));
}

#[test]
fn report_keeps_later_duplicate_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    put_report(dir.path(), "old", "same", false);
    // Modification times order the merge; make the second strictly newer.
    std::thread::sleep(std::time::Duration::from_millis(20));
    put_report(dir.path(), "new", "same", true);
    let o = gsl(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stderr(&o).contains("duplicate run 'same'"));
}

#[test]
fn report_on_empty_or_missing_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gsl(&["report", dir.path().to_str().unwrap()])), 2);
    let missing = dir.path().join("nope");
    assert_eq!(code(&gsl(&["report", missing.to_str().unwrap()])), 2);
}

#[test]
fn imax_prints_summary_json() {
    let o = gsl(&["imax"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let i = v["i_max"].as_f64().unwrap();
    assert!(i > 0.0 && i < 1.2);
    let cmd = v["command"]["i_d_ref"].as_f64().unwrap();
    assert!((cmd - v["margin"].as_f64().unwrap() * i).abs() < 1e-12);
}

#[test]
fn imax_reports_null_when_no_current_is_stable() {
    // r·i_q exceeds |E|: no operating point even at i_d = 0.
    let o = gsl(&[
        "imax", "--e", "0.1", "--x-pu", "0.3", "--r", "0.5", "--i-q", "1.0", "--delta0", "0.0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["i_max"].is_null());
    assert_eq!(v["command"]["i_d_ref"].as_f64(), Some(0.0));
}

#[test]
fn imax_rejects_invalid_equivalent() {
    assert_eq!(code(&gsl(&["imax", "--e", "-1", "--x-pu", "0.3"])), 2);
    assert_eq!(code(&gsl(&["imax", "--e", "1"])), 2);
}

#[test]
fn portrait_writes_one_file_per_current() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = gsl(&[
        "portrait", "--i-d", "0.4,0.6,0.8", "--t-end", "0.5", "--grid", "0:0,-0.5:1", "--out-dir", out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut files: Vec<String> = fs::read_dir(dir.path().join("portrait"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        ["portrait_i_d_0.400.csv", "portrait_i_d_0.600.csv", "portrait_i_d_0.800.csv"]
    );
}

#[test]
fn portrait_rejects_empty_list_and_bad_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&gsl(&["portrait", "--i-d", "", "--out-dir", out])), 2);
    assert_eq!(code(&gsl(&["portrait", "--grid", "1;2", "--out-dir", out])), 2);
}
