//! `gsl`: scenario runs, phase portraits, stable-current searches and
//! report consolidation.
//!
//! Exit status: 0 when every enabled check passes, 1 when a check fails or a
//! run errors, 2 on invalid input (configuration errors carry a line number).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsl_core::core_types::TheveninParams;
use gsl_core::pll_dynamics::{phase_portrait, PllParams, PortraitSpec, DEFAULT_DT};
use gsl_core::scenario_runner::suite::{prefault_delta, PORTRAIT_STRIDE, PORTRAIT_T_END};
use gsl_core::scenario_runner::{
    execute, load_and_merge, load_scenario, portrait_artifacts, run_artifacts, run_suite,
    write_artifacts, ConsolidatedReport, MethodSelection, RunOptions, RunnerError,
    DEFAULT_OUT_DIR, OUT_DIR_ENV,
};
use gsl_core::stability_control::{max_stable_current, ImaxConfig, ImaxSummary};

#[derive(Parser)]
#[command(name = "gsl", version, about = "Grid synchronization scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its state log, estimates and report.
    Run(RunArgs),
    /// Phase-portrait batch: one CSV per d-axis current.
    Portrait(PortraitArgs),
    /// Maximum stable d-axis current for a Thevenin equivalent, as JSON.
    Imax(ImaxArgs),
    /// Merge the reports under a directory and print the check table.
    Report(ReportArgs),
    /// Run the full acceptance suite over the built-in scenarios.
    Suite(OutArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output root.
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name (ideal_source, two_area) or path to a scenario file.
    scenario: String,
    /// Enable the estimate-driven current controller.
    #[arg(long)]
    closed_loop: bool,
    /// gated_ls, window_ls, rls, dv_di or all.
    #[arg(long, default_value = "gated_ls")]
    method: String,
    /// Open-loop d-axis current applied at fault onset, pu.
    #[arg(long)]
    fault_i_d: Option<f64>,
    /// Measurement-noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TeArgs {
    /// Scenario supplying the base, PLL, margin and pre-fault angle.
    #[arg(long, default_value = "ideal_source")]
    scenario: String,
    /// Thevenin potential magnitude, pu.
    #[arg(long)]
    e: Option<f64>,
    /// Thevenin inductance, H.
    #[arg(long, conflicts_with = "x_pu")]
    x_henries: Option<f64>,
    /// Thevenin reactance, pu.
    #[arg(long)]
    x_pu: Option<f64>,
    /// Thevenin resistance, pu.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// q-axis current, pu (defaults to the scenario's).
    #[arg(long)]
    i_q: Option<f64>,
    /// PLL damping ratio.
    #[arg(long)]
    damping: Option<f64>,
    /// PLL natural frequency, Hz.
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    /// PLL frequency limit, Hz.
    #[arg(long)]
    freq_limit_hz: Option<f64>,
}

#[derive(Args)]
struct PortraitArgs {
    #[command(flatten)]
    te: TeArgs,
    /// Comma-separated d-axis currents, pu.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    i_d: Option<Vec<f64>>,
    /// Initial conditions `delta:delta_dot` separated by commas, rad and rad/s.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Trajectory horizon, s.
    #[arg(long, default_value_t = PORTRAIT_T_END)]
    t_end: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ImaxArgs {
    #[command(flatten)]
    te: TeArgs,
    /// Initial angle at fault onset, rad (defaults to the scenario's pre-fault angle).
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    /// Bisection tolerance, pu.
    #[arg(long)]
    tol: Option<f64>,
    /// Safety margin applied to the command.
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding run directories with report.json files.
    dir: PathBuf,
}

fn invalid(msg: impl Into<String>) -> RunnerError {
    RunnerError::Invalid(msg.into())
}

fn print_table(c: &ConsolidatedReport) {
    print!("{}", c.table());
    let failing = c.failing_ids();
    if failing.is_empty() {
        println!("all checks passed");
    } else {
        println!("failing: {}", failing.join(", "));
    }
}

fn cmd_run(a: RunArgs) -> Result<bool, RunnerError> {
    let scn = load_scenario(&a.scenario)?;
    let methods = MethodSelection::parse(&a.method)
        .ok_or_else(|| invalid(format!("unknown method '{}'", a.method)))?;
    let opts = RunOptions {
        closed_loop: a.closed_loop.then_some(true),
        fault_i_d: a.fault_i_d,
        seed: a.seed,
        methods,
    };
    let out = execute(&scn, &opts)?;
    let written = write_artifacts(&a.out.out_dir, &run_artifacts(&out))?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    for w in &out.report.classifications {
        println!(
            "fault {:.3}-{:.3} s: i_d = {:.3} pu, {}",
            w.t_apply,
            w.t_clear,
            w.i_d,
            w.classification.as_str()
        );
    }
    for m in &out.report.methods {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<10} first update {} s, final x error {} %, final |E| error {} %",
            m.method.as_str(),
            fmt(m.first_update_s),
            fmt(m.final_x_error_pct),
            fmt(m.final_e_error_pct)
        );
    }
    if let Some(c) = out.report.commands.first() {
        println!("first command at {:.2} s: i_d_ref = {:.4} pu", c.t, c.i_d_ref);
    }
    let (merged, _) = gsl_core::scenario_runner::merge_reports(vec![out.report.clone()]);
    if !out.report.checks.is_empty() {
        print_table(&merged);
    }
    Ok(out.report.passed())
}

struct TeContext {
    te: TheveninParams,
    pll: PllParams,
    i_q: f64,
    scn: gsl_core::grid_sim::Scenario,
}

fn te_context(a: &TeArgs, default_te: Option<(f64, f64)>) -> Result<TeContext, RunnerError> {
    let scn = load_scenario(&a.scenario)?;
    let x = match (a.x_henries, a.x_pu) {
        (Some(l), _) => Some(scn.base.reactance_pu(l)),
        (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    let (e, x) = match (a.e, x, default_te) {
        (Some(e), Some(x), _) => (e, x),
        (None, None, Some((e, l))) => (e, scn.base.reactance_pu(l)),
        _ => return Err(invalid("give both --e and one of --x-henries / --x-pu")),
    };
    if !(e > 0.0 && x > 0.0 && a.r >= 0.0 && e.is_finite() && x.is_finite()) {
        return Err(invalid("need e > 0, x > 0 and r >= 0"));
    }
    let pll = PllParams::from_damping(
        a.damping.unwrap_or(scn.pll.damping),
        a.bandwidth_hz.unwrap_or(scn.pll.bandwidth_hz),
        scn.base.f_nom_hz,
        a.freq_limit_hz.unwrap_or(scn.pll.freq_limit_hz),
    )
    .map_err(|e| invalid(e.to_string()))?;
    let mut te = TheveninParams::lossless(e, x);
    te.r = a.r;
    Ok(TeContext {
        te,
        pll,
        i_q: a.i_q.unwrap_or(scn.converter.i_q),
        scn,
    })
}

fn parse_grid(s: &str) -> Result<Vec<(f64, f64)>, RunnerError> {
    let bad = || invalid(format!("invalid grid '{s}': expected delta:delta_dot[,delta:delta_dot...]"));
    let grid = s
        .split(',')
        .map(|p| {
            let (d, w) = p.trim().split_once(':').ok_or_else(bad)?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            let w: f64 = w.trim().parse().map_err(|_| bad())?;
            if d.is_finite() && w.is_finite() {
                Ok((d, w))
            } else {
                Err(bad())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

fn cmd_portrait(a: PortraitArgs) -> Result<bool, RunnerError> {
    let scn_acc = load_scenario(&a.te.scenario)?.acceptance;
    let default_te = scn_acc.portrait_te_e.zip(scn_acc.portrait_te_x_henries);
    let ctx = te_context(&a.te, default_te)?;
    let i_d_list = match a.i_d {
        Some(l) => l,
        None => scn_acc.portrait_i_d.unwrap_or_else(|| vec![0.4, 0.6, 0.8]),
    };
    if i_d_list.is_empty() || i_d_list.iter().any(|i| !i.is_finite()) {
        return Err(invalid("the i_d list must be non-empty and finite"));
    }
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => PortraitSpec::default_grid(),
    };
    if !(a.t_end > 0.0 && a.t_end.is_finite()) {
        return Err(invalid("t_end must be positive"));
    }
    let spec = PortraitSpec {
        i_d_list,
        i_q: ctx.i_q,
        grid,
        t_end: a.t_end,
        dt: DEFAULT_DT,
    };
    let batches = phase_portrait(&ctx.te, &ctx.pll, &spec)?;
    let arts = portrait_artifacts(Path::new("portrait"), &batches, PORTRAIT_STRIDE);
    for p in write_artifacts(&a.out.out_dir, &arts)? {
        eprintln!("wrote {}", p.display());
    }
    for b in &batches {
        println!("i_d = {:.3} pu: {}", b.i_d, b.classification.as_str());
    }
    Ok(true)
}

fn cmd_imax(a: ImaxArgs) -> Result<bool, RunnerError> {
    let acc = load_scenario(&a.te.scenario)?.acceptance;
    let default_te = acc.imax_te_e.zip(acc.imax_te_x_henries);
    let ctx = te_context(&a.te, default_te)?;
    let delta0 = match a.delta0 {
        Some(d) => d,
        None => prefault_delta(&ctx.scn)?,
    };
    let margin = a.margin.unwrap_or(ctx.scn.controller.margin);
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(invalid("margin must lie in (0, 1]"));
    }
    let tol = a.tol.unwrap_or(ctx.scn.controller.imax_tol);
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    let cfg = ImaxConfig {
        tol,
        t_end: ctx.scn.controller.imax_t_end,
        i_ceiling: ctx.scn.converter.i_ceiling,
        ..ImaxConfig::new(delta0)
    };
    let result = max_stable_current(&ctx.te, &ctx.pll, ctx.i_q, &cfg);
    let summary = ImaxSummary::new(&ctx.te, ctx.i_q, margin, result)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(true)
}

fn cmd_report(a: ReportArgs) -> Result<bool, RunnerError> {
    let (merged, warnings) = load_and_merge(&a.dir)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    print_table(&merged);
    Ok(merged.pass)
}

fn cmd_suite(a: OutArgs) -> Result<bool, RunnerError> {
    let suite = run_suite()?;
    suite.write(&a.out_dir)?;
    eprintln!("wrote {} files under {}", suite.artifacts.len(), a.out_dir.display());
    let (merged, _) = gsl_core::scenario_runner::merge_reports(suite.reports);
    print_table(&merged);
    Ok(merged.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Portrait(a) => cmd_portrait(a),
        Command::Imax(a) => cmd_imax(a),
        Command::Report(a) => cmd_report(a),
        Command::Suite(a) => cmd_suite(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
