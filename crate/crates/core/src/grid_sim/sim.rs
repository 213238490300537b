//! Time-domain co-simulation of the converter, its PLL, flux-decay
//! generators and the quasi-static network.
//!
//! Continuous states are the converter dq current, the PLL angle and
//! integrator, and per generator `E′q` and `E_fd`. They are advanced jointly
//! by fixed-step RK4; the network is re-solved algebraically at every stage.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{
    initial_gen_potentials, max_outage_reactance, FluxDecayGenParams, Network, Reduction,
    Topology,
};
use super::scenario::Scenario;
use super::SimError;
use crate::core_types::{Phasor, PmuSample, TheveninParams};
use crate::pll_dynamics::{
    classify, equilibrium_points, pi_output, Classification, DqCurrent, PllParams, Trajectory,
    TrajectoryPoint,
};
use crate::stability_control::{command_from_estimate, CurrentCommand, ImaxConfig};
use crate::te_estimator::{EstimateRecord, EstimateStatus, GateConfig, GatedEstimator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterModel {
    pub command: CurrentCommand,
    pub tracking_tau: f64,
    pub i_ceiling: f64,
    pub pll: PllParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenState {
    pub e_q: f64,
    pub e_fd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub cur: DqCurrent,
    /// PLL angle in the synchronous frame, rad.
    pub theta: f64,
    /// PI integrator, rad/s.
    pub integrator: f64,
    pub gens: Vec<GenState>,
    /// PLL frequency deviation, rad/s.
    pub omega_dev: f64,
    pub v_pcc: Phasor,
    pub i_inj: Phasor,
}

#[derive(Debug, Clone, Copy)]
struct GenModel {
    p: FluxDecayGenParams,
    v_ref: f64,
}

/// Network-solved quantities for one state.
struct Solved {
    v_pcc: Complex64,
    inj: Complex64,
    u: f64,
    gen_i_d: Vec<f64>,
    gen_vt: Vec<f64>,
}

/// Stateful simulator over a network with a fixed converter model.
#[derive(Debug, Clone)]
pub struct Simulator {
    net: Network,
    topo: Topology,
    red: Reduction,
    conv: ConverterModel,
    gens: Vec<GenModel>,
    pub state: SimState,
}

const N_CONV: usize = 4;

impl Simulator {
    /// Steady state at `t = 0` with the converter on its command and the PLL
    /// locked at the stable operating angle.
    pub fn new(net: Network, conv: ConverterModel) -> Result<Self, SimError> {
        let topo = net.topology_at(0.0);
        let red = net.reduce(&topo)?;
        let gen_e = initial_gen_potentials(&net);
        let te = red.thevenin(&gen_e);
        let cur = DqCurrent::new(conv.command.i_d_ref, conv.command.i_q_ref).limited(conv.i_ceiling);
        let (delta0, _) = equilibrium_points(&te, &cur).ok_or(SimError::NoOperatingPoint)?;
        let theta = te.e.angle() + delta0;
        let inj = Complex64::from(Phasor::new(cur.i_d, cur.i_q)) * Complex64::from_polar(1.0, theta);

        let mut gens = Vec::new();
        let mut gstates = Vec::new();
        for (k, (_, p)) in net.generators().enumerate() {
            let (i_d, vt) = gen_terminal(&red, k, p, &gen_e, inj);
            let e_fd = p.e_q0 + (p.x_d - p.x_dp) * i_d;
            if !(0.0..=p.e_fd_max).contains(&e_fd) {
                return Err(SimError::InvalidNetwork(format!(
                    "initial field voltage {e_fd:.3} pu outside [0, {}]",
                    p.e_fd_max
                )));
            }
            gens.push(GenModel {
                p: *p,
                v_ref: vt + e_fd / p.avr_gain,
            });
            gstates.push(GenState { e_q: p.e_q0, e_fd });
        }
        let v = red.pcc.eval(&gen_e, inj);
        let state = SimState {
            t: 0.0,
            cur,
            theta,
            integrator: 0.0,
            gens: gstates,
            omega_dev: 0.0,
            v_pcc: v.into(),
            i_inj: inj.into(),
        };
        Ok(Self {
            net,
            topo,
            red,
            conv,
            gens,
            state,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn converter(&self) -> &ConverterModel {
        &self.conv
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn set_topology(&mut self, topo: Topology) -> Result<(), SimError> {
        if topo != self.topo {
            self.red = self.net.reduce(&topo)?;
            self.topo = topo;
            self.refresh();
        }
        Ok(())
    }

    pub fn set_command(&mut self, cmd: CurrentCommand) {
        self.conv.command = cmd;
    }

    fn gen_potentials(&self, gens: &[GenState]) -> Vec<Complex64> {
        self.gens
            .iter()
            .zip(gens)
            .map(|(m, s)| Complex64::from_polar(s.e_q, m.p.angle))
            .collect()
    }

    /// Ground-truth Thevenin equivalent for the current topology and
    /// generator potentials.
    pub fn thevenin(&self) -> TheveninParams {
        self.red.thevenin(&self.gen_potentials(&self.state.gens))
    }

    /// PLL angle relative to the Thevenin potential.
    pub fn delta(&self) -> f64 {
        self.state.theta - self.thevenin().e.angle()
    }

    fn pack(&self) -> Vec<f64> {
        let s = &self.state;
        let mut x = vec![s.cur.i_d, s.cur.i_q, s.theta, s.integrator];
        for g in &s.gens {
            x.push(g.e_q);
            x.push(g.e_fd);
        }
        x
    }

    fn unpack(&mut self, x: &[f64]) {
        let s = &mut self.state;
        s.cur = DqCurrent::new(x[0], x[1]);
        s.theta = x[2];
        s.integrator = x[3];
        for (k, g) in s.gens.iter_mut().enumerate() {
            g.e_q = x[N_CONV + 2 * k];
            g.e_fd = x[N_CONV + 2 * k + 1].clamp(0.0, self.gens[k].p.e_fd_max);
        }
    }

    fn solve(&self, x: &[f64]) -> Solved {
        let inj = Complex64::new(x[0], x[1]) * Complex64::from_polar(1.0, x[2]);
        let gen_e: Vec<Complex64> = self
            .gens
            .iter()
            .enumerate()
            .map(|(k, m)| Complex64::from_polar(x[N_CONV + 2 * k], m.p.angle))
            .collect();
        let v = self.red.pcc.eval(&gen_e, inj);
        let u = (v * Complex64::from_polar(1.0, -x[2])).im;
        let mut gen_i_d = Vec::with_capacity(self.gens.len());
        let mut gen_vt = Vec::with_capacity(self.gens.len());
        for (k, m) in self.gens.iter().enumerate() {
            let (i_d, vt) = gen_terminal(&self.red, k, &m.p, &gen_e, inj);
            gen_i_d.push(i_d);
            gen_vt.push(vt);
        }
        Solved {
            v_pcc: v,
            inj,
            u,
            gen_i_d,
            gen_vt,
        }
    }

    fn derivatives(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let sol = self.solve(x);
        let c = &self.conv;
        let cmd = DqCurrent::new(c.command.i_d_ref, c.command.i_q_ref).limited(c.i_ceiling);
        let (dw, d_int, _) = pi_output(sol.u, x[3], &c.pll);
        let mut dx = vec![
            (cmd.i_d - x[0]) / c.tracking_tau,
            (cmd.i_q - x[1]) / c.tracking_tau,
            dw,
            d_int,
        ];
        for (k, m) in self.gens.iter().enumerate() {
            let (e_q, e_fd) = (x[N_CONV + 2 * k], x[N_CONV + 2 * k + 1]);
            let p = &m.p;
            dx.push((e_fd - e_q - (p.x_d - p.x_dp) * sol.gen_i_d[k]) / p.t_d0p);
            let mut d_fd = (p.avr_gain * (m.v_ref - sol.gen_vt[k]) - e_fd) / p.avr_tau;
            if (e_fd >= p.e_fd_max && d_fd > 0.0) || (e_fd <= 0.0 && d_fd < 0.0) {
                d_fd = 0.0;
            }
            dx.push(d_fd);
        }
        (dx, dw)
    }

    /// Re-solves the derived quantities for the current state.
    fn refresh(&mut self) {
        let x = self.pack();
        let sol = self.solve(&x);
        let (dw, _, _) = pi_output(sol.u, x[3], &self.conv.pll);
        self.state.v_pcc = sol.v_pcc.into();
        self.state.i_inj = sol.inj.into();
        self.state.omega_dev = dw;
    }

    /// q-axis PCC voltage in the PLL frame.
    pub fn u_q(&self) -> f64 {
        self.solve(&self.pack()).u
    }

    /// One RK4 step of `dt` seconds.
    pub fn step(&mut self, dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0 && dt <= 100e-6) {
            return Err(SimError::InvalidStep(dt));
        }
        let x0 = self.pack();
        let add = |a: &[f64], k: &[f64], h: f64| -> Vec<f64> {
            a.iter().zip(k).map(|(a, k)| a + h * k).collect()
        };
        let (k1, _) = self.derivatives(&x0);
        let (k2, _) = self.derivatives(&add(&x0, &k1, 0.5 * dt));
        let (k3, _) = self.derivatives(&add(&x0, &k2, 0.5 * dt));
        let (k4, _) = self.derivatives(&add(&x0, &k3, dt));
        let x1: Vec<f64> = (0..x0.len())
            .map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        self.unpack(&x1);
        self.state.t += dt;
        self.refresh();
        if !self.state.v_pcc.is_finite() {
            return Err(SimError::NonFinite(self.state.t));
        }
        Ok(())
    }

    /// Noise-free PCC voltage and injected current.
    pub fn sample_pmu(&self) -> PmuSample {
        PmuSample {
            t: self.state.t,
            v: self.state.v_pcc,
            i: self.state.i_inj,
        }
    }
}

/// Generator d-axis current and terminal-voltage magnitude.
fn gen_terminal(
    red: &Reduction,
    k: usize,
    p: &FluxDecayGenParams,
    gen_e: &[Complex64],
    inj: Complex64,
) -> (f64, f64) {
    let vt = red.gen_terminal[k].eval(gen_e, inj);
    let i_g = (gen_e[k] - vt) / Complex64::new(0.0, p.x_dp);
    // d axis lags the q-axis potential by π/2.
    let i_d = -(i_g * Complex64::from_polar(1.0, -p.angle)).im;
    (i_d, vt.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub te: TheveninParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateLogRow {
    pub t: f64,
    pub v_mag: f64,
    pub v_ang_deg: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub delta_deg: f64,
    pub omega1_hz: f64,
    pub p_pu: f64,
    pub q_pu: f64,
    pub truth_x_pu: f64,
    pub truth_e_mag: f64,
}

/// Command issued by the closed-loop controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub command: CurrentCommand,
    pub i_max: Option<f64>,
}

/// Classification of the PLL over one fault-on interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub t_apply: f64,
    pub t_clear: f64,
    pub classification: Classification,
    /// True when the window alone was Undecided and the verdict comes from
    /// the fault-held continuation.
    pub extended: bool,
    /// Frequency deviation at the end of the window, Hz.
    pub final_freq_dev_hz: f64,
    pub te: TheveninParams,
    pub cur: DqCurrent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub name: String,
    pub closed_loop: bool,
    pub fault_i_d: Option<f64>,
    pub x_max: f64,
    pub pll: PllParams,
    pub dt: f64,
    pub pmu_interval: f64,
    pub pmu: Vec<PmuSample>,
    pub truth: Vec<TruthSample>,
    pub log: Vec<StateLogRow>,
    /// Gated estimator records, one per PMU difference.
    pub gated: Vec<EstimateRecord>,
    pub commands: Vec<IssuedCommand>,
    /// Every integration step; `delta` is relative to the true potential.
    pub trajectory: Vec<TrajectoryPoint>,
    /// Generator `E′q` at each PMU instant, aligned with `pmu`.
    pub gen_e_q: Vec<Vec<f64>>,
    pub fault_windows: Vec<FaultWindow>,
}

impl ScenarioRun {
    pub fn truth_at(&self, t: f64) -> Option<&TruthSample> {
        self.truth.iter().take_while(|s| s.t <= t + 1e-9).last()
    }
}

/// Horizon of the fault-held continuation used when a fault window is too
/// short for the trajectory to settle, s.
pub const FAULT_HOLD_EXTENSION: f64 = 1.0;

/// Gate reactance limit for a scenario: configured, or 1.1 × the largest
/// intact/N−1 reactance.
pub fn gate_x_max(scn: &Scenario, net: &Network) -> Result<f64, SimError> {
    match scn.controller.x_max {
        Some(x) => Ok(x),
        None => Ok(1.1 * max_outage_reactance(net)?),
    }
}

pub fn gate_config(scn: &Scenario, x_max: f64) -> GateConfig {
    GateConfig {
        dv_threshold: scn.controller.dv_threshold,
        x_max,
        e_max: scn.controller.e_max,
        window_m: scn.controller.window_m,
    }
}

/// Full open- or closed-loop run of a scenario.
pub fn run_scenario(scn: &Scenario) -> Result<ScenarioRun, SimError> {
    let net = scn.network();
    let pll = scn.pll_params();
    let dt = scn.sim.dt;
    let x_max = gate_x_max(scn, &net)?;
    let closed_loop = scn.controller.closed_loop;

    let pre_te = net.reduce(&net.topology_at(0.0))?.thevenin(&initial_gen_potentials(&net));
    let prefault = CurrentCommand {
        i_d_ref: scn.converter.i_d,
        i_q_ref: scn.converter.i_q,
        issued_at: 0.0,
        basis: pre_te,
    };
    let conv = ConverterModel {
        command: prefault,
        tracking_tau: scn.converter.tracking_tau,
        i_ceiling: scn.converter.i_ceiling,
        pll,
    };
    let mut sim = Simulator::new(net.clone(), conv)?;
    let delta0 = sim.delta();
    let imax_cfg = ImaxConfig {
        tol: scn.controller.imax_tol,
        t_end: scn.controller.imax_t_end,
        i_ceiling: scn.converter.i_ceiling,
        ..ImaxConfig::new(delta0)
    };
    let mut estimator = GatedEstimator::new(gate_config(scn, x_max), scn.sim.pmu_interval)?;

    let steps_per_sample = (scn.sim.pmu_interval / dt).round() as usize;
    let n_samples = (scn.sim.t_end / scn.sim.pmu_interval + 1e-9).floor() as usize;
    let total = n_samples * steps_per_sample;

    let mut rng = ChaCha8Rng::seed_from_u64(scn.noise.seed);
    let noise = (scn.noise.sigma > 0.0)
        .then(|| Normal::new(0.0, scn.noise.sigma).expect("validated sigma"));
    let noisy = |p: Phasor, rng: &mut ChaCha8Rng| match &noise {
        Some(n) => Phasor::new(p.re + n.sample(rng), p.im + n.sample(rng)),
        None => p,
    };

    let first_fault = net
        .faults
        .iter()
        .map(|f| f.t_apply)
        .fold(f64::INFINITY, f64::min);
    let mut fault_cmd_applied = false;

    let mut out = ScenarioRun {
        name: scn.name.clone(),
        closed_loop,
        fault_i_d: if closed_loop { None } else { scn.converter.fault_i_d },
        x_max,
        pll,
        dt,
        pmu_interval: scn.sim.pmu_interval,
        pmu: Vec::with_capacity(n_samples + 1),
        truth: Vec::with_capacity(n_samples + 1),
        log: Vec::with_capacity(n_samples + 1),
        gated: Vec::with_capacity(n_samples),
        commands: Vec::new(),
        trajectory: Vec::with_capacity(total + 1),
        gen_e_q: Vec::with_capacity(n_samples + 1),
        fault_windows: Vec::new(),
    };
    let push_point = |sim: &Simulator, t: f64, traj: &mut Vec<TrajectoryPoint>| {
        traj.push(TrajectoryPoint {
            t,
            delta: sim.delta(),
            delta_dot: sim.state.omega_dev,
            omega1: pll.omega0 + sim.state.omega_dev,
            u_msq: sim.u_q(),
        });
    };
    push_point(&sim, 0.0, &mut out.trajectory);
    let mut continuations: Vec<Option<Continuation>> = vec![None; net.faults.len()];

    for k in 0..=total {
        let t = k as f64 * dt;
        if k % steps_per_sample == 0 {
            let ts = (k / steps_per_sample) as f64 * scn.sim.pmu_interval;
            let raw = sim.sample_pmu();
            let s = PmuSample {
                t: ts,
                v: noisy(raw.v, &mut rng),
                i: noisy(raw.i, &mut rng),
            };
            let te = sim.thevenin();
            out.pmu.push(s);
            out.truth.push(TruthSample { t: ts, te });
            out.gen_e_q.push(sim.state.gens.iter().map(|g| g.e_q).collect());
            out.log.push(log_row(&sim, ts, &te, &pll));
            if let Some(rec) = estimator.push(s)? {
                out.gated.push(rec);
                if closed_loop && rec.status == EstimateStatus::Updated {
                    let (cmd, imax) =
                        command_from_estimate(&rec, &prefault, &pll, scn.controller.margin, &imax_cfg)?;
                    sim.set_command(cmd);
                    out.commands.push(IssuedCommand {
                        command: cmd,
                        i_max: imax.map(|r| r.i_max),
                    });
                }
            }
        }
        if k == total {
            break;
        }
        for (slot, f) in continuations.iter_mut().zip(&net.faults) {
            if slot.is_none() && t + 0.5 * dt >= f.t_clear {
                *slot = Some(fault_held_continuation(&sim, t, dt, &pll)?);
            }
        }
        sim.set_topology(net.topology_at(t + 0.5 * dt))?;
        if !closed_loop && !fault_cmd_applied && t + 0.5 * dt >= first_fault {
            if let Some(i_d) = scn.converter.fault_i_d {
                sim.set_command(CurrentCommand {
                    i_d_ref: i_d,
                    issued_at: t,
                    ..prefault
                });
            }
            fault_cmd_applied = true;
        }
        sim.step(dt)?;
        push_point(&sim, (k + 1) as f64 * dt, &mut out.trajectory);
    }

    for (f, cont) in net.faults.iter().zip(continuations) {
        out.fault_windows
            .push(classify_window(&out, &sim, f.t_apply, f.t_clear, cont.as_ref(), &pll));
    }
    Ok(out)
}

/// Fault-held trajectory and the equivalent and current at its end.
#[derive(Debug, Clone)]
struct Continuation {
    points: Vec<TrajectoryPoint>,
    te: TheveninParams,
    cur: DqCurrent,
}

/// Steps a copy of the simulator with the present (faulted) topology and
/// command held for [`FAULT_HOLD_EXTENSION`] seconds past `t`.
fn fault_held_continuation(
    sim: &Simulator,
    t: f64,
    dt: f64,
    pll: &PllParams,
) -> Result<Continuation, SimError> {
    let mut branch = sim.clone();
    let n = (FAULT_HOLD_EXTENSION / dt).round() as usize;
    let mut pts = Vec::with_capacity(n);
    for j in 1..=n {
        branch.step(dt)?;
        pts.push(TrajectoryPoint {
            t: t + j as f64 * dt,
            delta: branch.delta(),
            delta_dot: branch.state.omega_dev,
            omega1: pll.omega0 + branch.state.omega_dev,
            u_msq: branch.u_q(),
        });
    }
    Ok(Continuation {
        points: pts,
        te: branch.thevenin(),
        cur: branch.state.cur,
    })
}

/// Classifies the trajectory over `(t_apply, t_clear]` against the faulted
/// equivalent at the end of the window. An Undecided window is re-judged
/// with the fault-held continuation appended, mirroring the horizon
/// extension of the stable-current search.
fn classify_window(
    run: &ScenarioRun,
    sim: &Simulator,
    t_apply: f64,
    t_clear: f64,
    continuation: Option<&Continuation>,
    pll: &PllParams,
) -> FaultWindow {
    let eps = 0.5 * run.dt;
    let points: Vec<TrajectoryPoint> = run
        .trajectory
        .iter()
        .filter(|p| p.t > t_apply + eps && p.t <= t_clear + eps)
        .map(|p| TrajectoryPoint {
            t: p.t - t_apply,
            ..*p
        })
        .collect();
    // Truth and command at the last sample inside the window.
    let te = run
        .truth
        .iter()
        .rfind(|s| s.t > t_apply + eps && s.t <= t_clear + eps)
        .map_or_else(|| sim.thevenin(), |s| s.te);
    let cur = run
        .log
        .iter()
        .rfind(|r| r.t > t_apply + eps && r.t <= t_clear + eps)
        .map_or(sim.state.cur, |r| DqCurrent::new(r.i_d, r.i_q));
    let final_dev = points.last().map_or(0.0, |p| p.delta_dot);
    let judge = |points: Vec<TrajectoryPoint>, te: &TheveninParams, cur: &DqCurrent| {
        if points.is_empty() {
            return Classification::Undecided;
        }
        let traj = Trajectory {
            points,
            dt: run.dt,
            omega0: pll.omega0,
            freq_limit: pll.freq_limit,
            classification: Classification::Undecided,
        };
        classify(&traj, te, cur)
    };
    let mut classification = judge(points.clone(), &te, &cur);
    let mut extended = false;
    if let Some(c) = continuation.filter(|_| classification == Classification::Undecided) {
        let mut all = points;
        all.extend(c.points.iter().map(|p| TrajectoryPoint {
            t: p.t - t_apply,
            ..*p
        }));
        // Judged against the equivalent where the continuation ends, since
        // generator flux keeps drifting while the fault is held.
        classification = judge(all, &c.te, &c.cur);
        extended = true;
    }
    FaultWindow {
        t_apply,
        t_clear,
        classification,
        extended,
        final_freq_dev_hz: final_dev / TAU,
        te,
        cur,
    }
}

fn log_row(sim: &Simulator, t: f64, te: &TheveninParams, pll: &PllParams) -> StateLogRow {
    let s = &sim.state;
    let v = s.v_pcc;
    let s_c = v * s.i_inj.conj();
    StateLogRow {
        t,
        v_mag: v.magnitude(),
        v_ang_deg: v.angle().to_degrees(),
        i_d: s.cur.i_d,
        i_q: s.cur.i_q,
        delta_deg: (s.theta - te.e.angle()).to_degrees(),
        omega1_hz: (pll.omega0 + s.omega_dev) / TAU,
        p_pu: s_c.re,
        q_pu: s_c.im,
        truth_x_pu: te.x,
        truth_e_mag: te.e_mag(),
    }
}
