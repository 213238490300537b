//! Scenario runs, estimator comparisons and studies with CSV/JSON artifacts
//! and pass/fail acceptance checks.
//!
//! Every artifact is a pure function of the scenario, the options and the
//! seed; floats are written with fixed precision and `.` decimals.

mod checks;
pub mod properties;
pub mod report;
pub mod suite;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::core_types::TheveninParams;
use crate::grid_sim::{run_scenario, ConfigError, Scenario, ScenarioRun, SimError, StateLogRow};
use crate::pll_dynamics::{PllError, PortraitBatch};
use crate::stability_control::ControlError;
use crate::te_estimator::{
    baseline_dv_di, baseline_rls, baseline_window_ls, EstimateSeries, EstimatorError, Method,
    RlsConfig,
};

pub use report::{
    load_and_merge, merge_reports, AcceptanceCheck, CheckValue, ClassificationOutcome,
    CommandOutcome, ConsolidatedReport, MethodSummary, RunReport, REPORT_FILE,
};
pub use suite::{imax_study, portrait_study, run_suite, SuiteOutput};

/// Environment variable overriding the default output root.
pub const OUT_DIR_ENV: &str = "GSL_OUT_DIR";
/// Output root when neither a flag nor [`OUT_DIR_ENV`] is given.
pub const DEFAULT_OUT_DIR: &str = "gsl-out";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Pll(#[from] PllError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no report.json found in {0}")]
    NoReports(String),
    #[error("unreadable report {0}")]
    BadReport(String),
}

impl RunnerError {
    /// Process exit status: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_)
            | RunnerError::Invalid(_)
            | RunnerError::NoReports(_)
            | RunnerError::BadReport(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunnerError {
    RunnerError::Io(format!("{}: {e}", path.display()))
}

/// Output root: explicit flag, then [`OUT_DIR_ENV`], then [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Which estimate series are reported and written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodSelection {
    /// The gated estimator only.
    #[default]
    Gated,
    /// The gated estimator and one baseline.
    With(Method),
    All,
}

impl MethodSelection {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Self::All),
            _ => Method::parse(s).map(|m| match m {
                Method::GatedLs => Self::Gated,
                m => Self::With(m),
            }),
        }
    }

    pub fn methods(&self) -> Vec<Method> {
        match self {
            Self::Gated => vec![Method::GatedLs],
            Self::With(m) => vec![Method::GatedLs, *m],
            Self::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario's controller flag when set.
    pub closed_loop: Option<bool>,
    /// Overrides the open-loop fault current when set.
    pub fault_i_d: Option<f64>,
    pub seed: Option<u64>,
    pub methods: MethodSelection,
}

impl RunOptions {
    /// Scenario with the overrides applied.
    pub fn apply(&self, scn: &Scenario) -> Result<Scenario, RunnerError> {
        let mut s = scn.clone();
        if let Some(c) = self.closed_loop {
            s.controller.closed_loop = c;
        }
        if let Some(i) = self.fault_i_d {
            s.converter.fault_i_d = Some(i);
        }
        if let Some(seed) = self.seed {
            s.noise.seed = seed;
        }
        s.check()?;
        Ok(s)
    }
}

/// A finished run with all four estimate series on its PMU stream.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub run: ScenarioRun,
    /// Indexed like [`Method::ALL`].
    pub series: Vec<EstimateSeries>,
    pub methods: MethodSelection,
    pub report: RunReport,
}

impl RunOutput {
    pub fn series(&self, m: Method) -> &EstimateSeries {
        &self.series[Method::ALL.iter().position(|&k| k == m).expect("method listed")]
    }
}

/// Report key of a run: scenario, loop mode and open-loop fault current.
pub fn run_id(scn: &Scenario) -> String {
    if scn.controller.closed_loop {
        format!("{}-closed_loop", scn.name)
    } else {
        match scn.converter.fault_i_d {
            Some(i) => format!("{}-open_loop-i_d_{i:.2}", scn.name),
            None => format!("{}-open_loop", scn.name),
        }
    }
}

/// Simulates the scenario, runs every estimator on the shared PMU stream and
/// evaluates the acceptance checks that apply to this run mode.
pub fn execute(scn: &Scenario, opts: &RunOptions) -> Result<RunOutput, RunnerError> {
    let scn = opts.apply(scn)?;
    let run = run_scenario(&scn)?;
    let dt = run.pmu_interval;
    let theta0 = (0.0, run.x_max);
    let series = vec![
        EstimateSeries {
            method: Method::GatedLs,
            records: run.gated.clone(),
        },
        EstimateSeries {
            method: Method::WindowLs,
            records: baseline_window_ls(&run.pmu, scn.controller.window_m, dt)?,
        },
        EstimateSeries {
            method: Method::Rls,
            records: baseline_rls(&run.pmu, &RlsConfig::new(theta0), dt)?,
        },
        EstimateSeries {
            method: Method::DvDi,
            records: baseline_dv_di(&run.pmu, dt)?,
        },
    ];
    let mode = if scn.controller.closed_loop {
        "closed_loop"
    } else {
        "open_loop"
    };
    let mut report = RunReport::new(run_id(&scn), scn.name.clone(), mode);
    report.seed = scn.noise.seed;
    let mut out = RunOutput {
        scenario: scn,
        run,
        series,
        methods: opts.methods,
        report,
    };
    out.report.methods = opts
        .methods
        .methods()
        .into_iter()
        .map(|m| checks::method_summary(&out, m))
        .collect();
    out.report.classifications = out
        .run
        .fault_windows
        .iter()
        .map(|w| ClassificationOutcome {
            t_apply: w.t_apply,
            t_clear: w.t_clear,
            i_d: w.cur.i_d,
            classification: w.classification,
            extended: w.extended,
            final_freq_dev_hz: w.final_freq_dev_hz,
        })
        .collect();
    out.report.commands = out
        .run
        .commands
        .iter()
        .map(|c| CommandOutcome {
            t: c.command.issued_at,
            i_d_ref: c.command.i_d_ref,
            i_max: c.i_max,
        })
        .collect();
    out.report.checks = checks::run_checks(&out);
    Ok(out)
}

/// In-memory artifact set: relative path → file bytes.
pub type Artifacts = std::collections::BTreeMap<PathBuf, Vec<u8>>;

/// State log, one estimate CSV per selected method and the report, under
/// `<run_id>/`.
pub fn run_artifacts(out: &RunOutput) -> Artifacts {
    let dir = PathBuf::from(&out.report.run_id);
    let mut a = Artifacts::new();
    let mut log = Vec::new();
    write_state_log(&mut log, &out.run.log).expect("in-memory write");
    a.insert(dir.join("state_log.csv"), log);
    for m in out.methods.methods() {
        let mut buf = Vec::new();
        out.series(m)
            .write_csv(&mut buf, &out.scenario.base)
            .expect("in-memory write");
        a.insert(dir.join(format!("estimates_{}.csv", m.as_str())), buf);
    }
    a.insert(dir.join(REPORT_FILE), out.report.to_json().into_bytes());
    a
}

/// Writes artifacts below `root`, creating directories as needed.
pub fn write_artifacts(root: &Path, artifacts: &Artifacts) -> Result<Vec<PathBuf>, RunnerError> {
    let mut written = Vec::with_capacity(artifacts.len());
    for (rel, bytes) in artifacts {
        let p = root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// State-log CSV at the PMU rate.
pub fn write_state_log<W: Write>(w: &mut W, rows: &[StateLogRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "t,v_mag,v_ang,i_d,i_q,delta,omega1_hz,p_pu,q_pu,truth_x_pu,truth_e_mag"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.t,
            r.v_mag,
            r.v_ang_deg,
            r.i_d,
            r.i_q,
            r.delta_deg,
            r.omega1_hz,
            r.p_pu,
            r.q_pu,
            r.truth_x_pu,
            r.truth_e_mag
        )?;
    }
    Ok(())
}

/// One CSV per `i_d`, trajectories back to back under a single header; a
/// reset of `t` to zero starts the next initial condition.
pub fn portrait_artifacts(dir: &Path, batches: &[PortraitBatch], stride: usize) -> Artifacts {
    let mut a = Artifacts::new();
    for b in batches {
        let mut buf = Vec::new();
        for (k, tr) in b.trajectories.iter().enumerate() {
            tr.write_csv(&mut buf, stride, k == 0).expect("in-memory write");
        }
        a.insert(dir.join(format!("portrait_i_d_{:.3}.csv", b.i_d)), buf);
    }
    a
}

/// Relative error of `est` against `truth` as a complex impedance.
pub fn impedance_error(est: (f64, f64), truth: &TheveninParams) -> f64 {
    let (dr, dx) = (est.0 - truth.r, est.1 - truth.x);
    dr.hypot(dx) / truth.r.hypot(truth.x)
}

/// Loads a built-in scenario by name or a scenario file by path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, RunnerError> {
    if let Some(src) = crate::grid_sim::builtin_source(name_or_path) {
        return Ok(Scenario::from_toml_str(src)?);
    }
    let p = Path::new(name_or_path);
    if !p.is_file() {
        return Err(RunnerError::Invalid(format!(
            "'{name_or_path}' is neither a built-in scenario nor a readable file"
        )));
    }
    Ok(Scenario::from_path(p)?)
}
