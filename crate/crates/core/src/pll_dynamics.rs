//! PLL synchronization dynamics against a Thevenin grid.
//!
//! The power angle `δ` is the PLL angle measured from the Thevenin potential.
//! With the converter current `(i_d, i_q)` in the PLL frame the q-axis PCC
//! voltage is
//!
//! ```text
//! u = −|E|·sin δ + (ω₁/ω₀)·x·i_d + r·i_q
//! ```
//!
//! and the PI loop sets `ω₁ − ω₀ = kp·u + ∫ki·u`. Eliminating the integrator
//! gives the second-order swing form
//!
//! ```text
//! δ̈ = [ki·u − kp·|E|·cos δ·δ̇] / (1 − kp·i_d·x/ω₀)
//! ```
//!
//! The frequency deviation is clamped to `±freq_limit`; while clamped the
//! integrator is frozen.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_types::{PerUnitBase, TheveninParams};

/// Smallest admissible `|1 − kp·i_d·x/ω₀|`.
pub const SINGULAR_DENOMINATOR_EPS: f64 = 1e-9;
pub const DEFAULT_I_CEILING: f64 = 1.2;
pub const DEFAULT_DT: f64 = 50e-6;

const MAX_STEP: f64 = 1e-3;
const MAX_STEPS: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PllError {
    #[error("swing equation denominator 1 - kp*i_d*x/omega0 = {0:e} is singular")]
    SingularDenominator(f64),
    #[error("invalid integration step: dt = {dt}, t_end = {t_end}")]
    InvalidStep { dt: f64, t_end: f64 },
    #[error("invalid PLL parameters: {0}")]
    InvalidParams(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    /// rad/s per pu volt.
    pub kp: f64,
    /// rad/s² per pu volt.
    pub ki: f64,
    pub omega0: f64,
    /// Max |ω₁ − ω₀| in rad/s.
    pub freq_limit: f64,
    pub damping: f64,
}

impl Default for PllParams {
    fn default() -> Self {
        Self::from_damping(0.707, 10.0, 50.0, 2.5).expect("default PLL parameters are valid")
    }
}

impl PllParams {
    /// Second-order synthesis about a unit-voltage stiff grid:
    /// `kp = 2ζω_n`, `ki = ω_n²`, `ω_n = 2π·bandwidth_hz`.
    pub fn from_damping(
        damping: f64,
        bandwidth_hz: f64,
        f_nom_hz: f64,
        freq_limit_hz: f64,
    ) -> Result<Self, PllError> {
        let wn = TAU * bandwidth_hz;
        let p = Self {
            kp: 2.0 * damping * wn,
            ki: wn * wn,
            omega0: TAU * f_nom_hz,
            freq_limit: TAU * freq_limit_hz,
            damping,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PllError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.kp) && ok(self.ki) && ok(self.omega0) && ok(self.freq_limit)) {
            return Err(PllError::InvalidParams(format!(
                "kp, ki, omega0 and freq_limit must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Power angle, its rate and the PI integrator (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllState {
    pub delta: f64,
    pub delta_dot: f64,
    pub integrator: f64,
}

impl PllState {
    /// Angle `delta` with an empty integrator. The rate follows from the
    /// proportional path at the first evaluation.
    pub fn at_rest(delta: f64) -> Self {
        Self {
            delta,
            delta_dot: 0.0,
            integrator: 0.0,
        }
    }

    /// State with prescribed `(δ, δ̇)`; the integrator is chosen so the PI
    /// output reproduces `δ̇` at this operating point.
    pub fn with_rate(
        delta: f64,
        delta_dot: f64,
        te: &TheveninParams,
        cur: &DqCurrent,
        pll: &PllParams,
    ) -> Self {
        let u = q_voltage_pu(te, cur, delta, delta_dot / pll.omega0);
        Self {
            delta,
            delta_dot,
            integrator: delta_dot - pll.kp * u,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.delta_dot.is_finite() && self.integrator.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DqCurrent {
    pub i_d: f64,
    pub i_q: f64,
}

impl DqCurrent {
    pub const fn new(i_d: f64, i_q: f64) -> Self {
        Self { i_d, i_q }
    }

    pub fn magnitude(&self) -> f64 {
        self.i_d.hypot(self.i_q)
    }

    /// Scales the vector down to `ceiling` if it exceeds it.
    pub fn limited(self, ceiling: f64) -> Self {
        let m = self.magnitude();
        if m > ceiling && m > 0.0 {
            Self::new(self.i_d * ceiling / m, self.i_q * ceiling / m)
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Synchronous,
    LossOfSync,
    Undecided,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Synchronous => "synchronous",
            Classification::LossOfSync => "loss_of_sync",
            Classification::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub delta: f64,
    pub delta_dot: f64,
    /// Absolute PLL frequency in rad/s.
    pub omega1: f64,
    pub u_msq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub dt: f64,
    pub omega0: f64,
    pub freq_limit: f64,
    pub classification: Classification,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory is non-empty")
    }

    /// Writes `t,delta_rad,delta_dot_rad_s,omega1_hz,u_msq_pu`, keeping every
    /// `stride`-th point.
    pub fn write_csv<W: Write>(&self, w: &mut W, stride: usize, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "t,delta_rad,delta_dot_rad_s,omega1_hz,u_msq_pu")?;
        }
        for p in self.points.iter().step_by(stride.max(1)) {
            writeln!(
                w,
                "{:.6},{:.9},{:.9},{:.9},{:.9}",
                p.t,
                p.delta,
                p.delta_dot,
                p.omega1 / TAU,
                p.u_msq
            )?;
        }
        Ok(())
    }
}

/// q-axis voltage with the frequency ratio written as `1 + ν`, `ν = (ω₁−ω₀)/ω₀`.
fn q_voltage_pu(te: &TheveninParams, cur: &DqCurrent, delta: f64, nu: f64) -> f64 {
    -te.e_mag() * delta.sin() + (1.0 + nu) * te.x * cur.i_d + cur.i_q * te.r
}

/// q-axis PCC voltage for PLL frequency `omega1` (rad/s).
pub fn q_axis_voltage(
    te: &TheveninParams,
    cur: &DqCurrent,
    delta: f64,
    omega1: f64,
    base: &PerUnitBase,
) -> f64 {
    let w0 = base.omega0();
    q_voltage_pu(te, cur, delta, (omega1 - w0) / w0)
}

/// True iff an operating point exists at PLL frequency `omega1`.
pub fn equilibrium_exists(
    te: &TheveninParams,
    cur: &DqCurrent,
    omega1: f64,
    base: &PerUnitBase,
) -> bool {
    (omega1 / base.omega0()) * te.x * cur.i_d + cur.i_q * te.r <= te.e_mag()
}

/// Stable and unstable equilibrium angles at nominal frequency.
pub fn equilibrium_points(te: &TheveninParams, cur: &DqCurrent) -> Option<(f64, f64)> {
    let e = te.e_mag();
    if e <= 0.0 {
        return None;
    }
    let s = (te.x * cur.i_d + te.r * cur.i_q) / e;
    if !(-1.0..=1.0).contains(&s) {
        return None;
    }
    let db = s.asin();
    Some((db, PI - db))
}

fn denominator(te: &TheveninParams, cur: &DqCurrent, pll: &PllParams) -> Result<f64, PllError> {
    let den = 1.0 - pll.kp * cur.i_d * te.x / pll.omega0;
    if den.abs() < SINGULAR_DENOMINATOR_EPS {
        return Err(PllError::SingularDenominator(den));
    }
    Ok(den)
}

/// `(dδ/dt, d²δ/dt²)` of the unclamped swing equation.
pub fn swing_rhs(
    state: &PllState,
    te: &TheveninParams,
    cur: &DqCurrent,
    pll: &PllParams,
) -> Result<(f64, f64), PllError> {
    let den = denominator(te, cur, pll)?;
    let u = q_voltage_pu(te, cur, state.delta, state.delta_dot / pll.omega0);
    let ddd = (pll.ki * u - pll.kp * te.e_mag() * state.delta.cos() * state.delta_dot) / den;
    Ok((state.delta_dot, ddd))
}

/// PI output for a given q-axis voltage with clamp and conditional
/// integration. Returns `(Δω, d integrator/dt, clamped)`.
pub fn pi_output(u: f64, integrator: f64, pll: &PllParams) -> (f64, f64, bool) {
    let dw = pll.kp * u + integrator;
    if dw > pll.freq_limit {
        (pll.freq_limit, 0.0, true)
    } else if dw < -pll.freq_limit {
        (-pll.freq_limit, 0.0, true)
    } else {
        (dw, pll.ki * u, false)
    }
}

/// One explicit Euler step of the discrete PLL for a measured `u_msq`.
pub fn pll_step(state: &PllState, u_msq: f64, pll: &PllParams, dt: f64) -> PllState {
    debug_assert!(dt > 0.0);
    let integ = state.integrator + pll.ki * u_msq * dt;
    let dw = pll.kp * u_msq + integ;
    let (dw, integ) = if dw.abs() > pll.freq_limit {
        (dw.signum() * pll.freq_limit, state.integrator)
    } else {
        (dw, integ)
    };
    PllState {
        delta: state.delta + dw * dt,
        delta_dot: dw,
        integrator: integ,
    }
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    d_delta: f64,
    d_integrator: f64,
    u: f64,
}

/// Clamped dynamics in `(δ, integrator)` coordinates. The algebraic loop
/// between `u` and `ω₁` is solved in closed form.
fn rates(
    delta: f64,
    integrator: f64,
    te: &TheveninParams,
    cur: &DqCurrent,
    pll: &PllParams,
    den: f64,
) -> Rates {
    let base_u = -te.e_mag() * delta.sin() + te.x * cur.i_d + cur.i_q * te.r;
    let k = te.x * cur.i_d / pll.omega0;
    let u_free = (base_u + k * integrator) / den;
    let dw = pll.kp * u_free + integrator;
    if dw.abs() > pll.freq_limit {
        let lim = dw.signum() * pll.freq_limit;
        Rates {
            d_delta: lim,
            d_integrator: 0.0,
            u: base_u + k * lim,
        }
    } else {
        Rates {
            d_delta: dw,
            d_integrator: pll.ki * u_free,
            u: u_free,
        }
    }
}

fn check_step(t_end: f64, dt: f64) -> Result<usize, PllError> {
    let bad = !(dt > 0.0 && dt <= MAX_STEP && t_end.is_finite() && t_end >= 0.0)
        || t_end / dt > MAX_STEPS;
    if bad {
        return Err(PllError::InvalidStep { dt, t_end });
    }
    Ok((t_end / dt).round() as usize)
}

/// Fixed-step RK4 integration of the clamped PLL dynamics from
/// `(initial.delta, initial.integrator)`; `initial.delta_dot` is implied.
pub fn integrate(
    initial: &PllState,
    te: &TheveninParams,
    cur: &DqCurrent,
    pll: &PllParams,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, PllError> {
    pll.validate()?;
    let n = check_step(t_end, dt)?;
    let den = denominator(te, cur, pll)?;
    let f = |d: f64, i: f64| rates(d, i, te, cur, pll, den);

    let mut points = Vec::with_capacity(n + 1);
    let (mut d, mut integ) = (initial.delta, initial.integrator);
    let mut r = f(d, integ);
    points.push(TrajectoryPoint {
        t: 0.0,
        delta: d,
        delta_dot: r.d_delta,
        omega1: pll.omega0 + r.d_delta,
        u_msq: r.u,
    });
    for k in 1..=n {
        let k1 = r;
        let k2 = f(d + 0.5 * dt * k1.d_delta, integ + 0.5 * dt * k1.d_integrator);
        let k3 = f(d + 0.5 * dt * k2.d_delta, integ + 0.5 * dt * k2.d_integrator);
        let k4 = f(d + dt * k3.d_delta, integ + dt * k3.d_integrator);
        d += dt / 6.0 * (k1.d_delta + 2.0 * k2.d_delta + 2.0 * k3.d_delta + k4.d_delta);
        integ += dt / 6.0
            * (k1.d_integrator + 2.0 * k2.d_integrator + 2.0 * k3.d_integrator + k4.d_integrator);
        r = f(d, integ);
        points.push(TrajectoryPoint {
            t: k as f64 * dt,
            delta: d,
            delta_dot: r.d_delta,
            omega1: pll.omega0 + r.d_delta,
            u_msq: r.u,
        });
    }
    let mut traj = Trajectory {
        points,
        dt,
        omega0: pll.omega0,
        freq_limit: pll.freq_limit,
        classification: Classification::Undecided,
    };
    traj.classification = classify(&traj, te, cur);
    Ok(traj)
}

const SYNC_ANGLE_TOL: f64 = 0.01;
const SYNC_RATE_TOL: f64 = 0.1;
const PIN_WINDOW: f64 = 0.2;
const PIN_TOL: f64 = 1e-9;

/// Synchronous / loss-of-sync / undecided verdict for a trajectory.
///
/// Without an equilibrium the escape reference is `π/2` and the run can
/// never be judged synchronous.
pub fn classify(traj: &Trajectory, te: &TheveninParams, cur: &DqCurrent) -> Classification {
    let pts = &traj.points;
    let Some(last) = pts.last() else {
        return Classification::Undecided;
    };
    let eq = equilibrium_points(te, cur);
    let d_c = eq.map_or(FRAC_PI_2, |(_, c)| c);
    // Saddles repeat every 2π; one full slip past the nearest one in
    // either direction counts as escape.
    let (hi, lo) = (d_c + TAU, d_c - 2.0 * TAU);
    if pts.iter().any(|p| p.delta > hi || p.delta < lo) {
        return Classification::LossOfSync;
    }

    let t0 = pts[0].t;
    if last.t - t0 >= PIN_WINDOW {
        let tail = pts.iter().filter(|p| p.t >= last.t - PIN_WINDOW);
        let lim = traj.freq_limit - PIN_TOL;
        let (mut up, mut down) = (true, true);
        for p in tail {
            let dw = p.omega1 - traj.omega0;
            up &= dw >= lim;
            down &= dw <= -lim;
        }
        if up || down {
            return Classification::LossOfSync;
        }
    }

    if let Some((d_b, _)) = eq {
        let t_tail = last.t - 0.1 * (last.t - t0);
        let settled = pts
            .iter()
            .filter(|p| p.t >= t_tail)
            .all(|p| (p.delta - d_b).abs() < SYNC_ANGLE_TOL && p.delta_dot.abs() < SYNC_RATE_TOL);
        if settled {
            return Classification::Synchronous;
        }
    }
    Classification::Undecided
}

/// Trajectories for one d-axis current.
#[derive(Debug, Clone, PartialEq)]
pub struct PortraitBatch {
    pub i_d: f64,
    pub trajectories: Vec<Trajectory>,
    /// LossOfSync if any trajectory loses sync, Synchronous if all settle.
    pub classification: Classification,
}

pub fn batch_classification<'a, I>(classes: I) -> Classification
where
    I: IntoIterator<Item = &'a Classification>,
{
    let mut all_sync = true;
    for c in classes {
        match c {
            Classification::LossOfSync => return Classification::LossOfSync,
            Classification::Undecided => all_sync = false,
            Classification::Synchronous => {}
        }
    }
    if all_sync {
        Classification::Synchronous
    } else {
        Classification::Undecided
    }
}

/// Phase-portrait configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PortraitSpec {
    pub i_d_list: Vec<f64>,
    pub i_q: f64,
    /// Initial `(δ, δ̇)` pairs.
    pub grid: Vec<(f64, f64)>,
    pub t_end: f64,
    pub dt: f64,
}

impl PortraitSpec {
    /// Initial angles spanning the pre-fault operating region at rest.
    pub fn default_grid() -> Vec<(f64, f64)> {
        [-0.5, 0.0, 0.25, 0.5].iter().map(|&d| (d, 0.0)).collect()
    }
}

/// One trajectory batch per `i_d`, in input order.
pub fn phase_portrait(
    te: &TheveninParams,
    pll: &PllParams,
    spec: &PortraitSpec,
) -> Result<Vec<PortraitBatch>, PllError> {
    if spec.i_d_list.is_empty() {
        return Err(PllError::EmptyInput("i_d list"));
    }
    if spec.grid.is_empty() {
        return Err(PllError::EmptyInput("initial-condition grid"));
    }
    let jobs: Vec<(usize, f64, f64)> = spec
        .i_d_list
        .iter()
        .enumerate()
        .flat_map(|(k, _)| spec.grid.iter().map(move |&(d, w)| (k, d, w)))
        .collect();
    let run = |&(k, d0, w0): &(usize, f64, f64)| {
        let cur = DqCurrent::new(spec.i_d_list[k], spec.i_q);
        let init = PllState::with_rate(d0, w0, te, &cur, pll);
        integrate(&init, te, &cur, pll, spec.t_end, spec.dt)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Trajectory, PllError>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Trajectory, PllError>> = jobs.iter().map(run).collect();

    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(spec.i_d_list.len());
    for &i_d in &spec.i_d_list {
        let trajectories = results
            .by_ref()
            .take(spec.grid.len())
            .collect::<Result<Vec<_>, _>>()?;
        let classification = batch_classification(trajectories.iter().map(|t| &t.classification));
        out.push(PortraitBatch {
            i_d,
            trajectories,
            classification,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::{reactance_pu, Phasor};

    fn base() -> PerUnitBase {
        PerUnitBase::default()
    }

    fn fault_te() -> TheveninParams {
        TheveninParams::lossless(0.285, reactance_pu(0.107, &base()))
    }

    #[test]
    fn q_voltage_examples() {
        let b = base();
        let w0 = b.omega0();
        let te = TheveninParams::lossless(1.0, 0.3);
        assert_eq!(q_axis_voltage(&te, &DqCurrent::default(), 0.0, w0, &b), 0.0);
        let te = TheveninParams::lossless(0.285, 0.4766);
        let u = q_axis_voltage(&te, &DqCurrent::default(), FRAC_PI_2, w0, &b);
        assert!((u + 0.285).abs() < 1e-15);
        let cur = DqCurrent::new(0.45, 0.0);
        let d = (0.45 * 0.4766f64 / 0.285).asin();
        assert!(q_axis_voltage(&te, &cur, d, w0, &b).abs() < 1e-9);
    }

    #[test]
    fn existence_examples() {
        let b = base();
        let w0 = b.omega0();
        let te = TheveninParams::lossless(0.285, 0.4766);
        assert!(equilibrium_exists(
            &TheveninParams::lossless(1.0, 0.7),
            &DqCurrent::default(),
            w0,
            &b
        ));
        assert!(equilibrium_exists(&te, &DqCurrent::new(0.45, 0.0), w0, &b));
        assert!(!equilibrium_exists(&te, &DqCurrent::new(0.8, 0.0), w0, &b));
    }

    #[test]
    fn equilibrium_point_examples() {
        let (b, c) = equilibrium_points(&TheveninParams::lossless(1.0, 0.3), &DqCurrent::default())
            .unwrap();
        assert_eq!((b, c), (0.0, PI));
        let te = TheveninParams::lossless(0.5, 0.5);
        let (b, c) = equilibrium_points(&te, &DqCurrent::new(1.0, 0.0)).unwrap();
        assert!((b - FRAC_PI_2).abs() < 1e-15 && (c - FRAC_PI_2).abs() < 1e-15);
        let te = TheveninParams::lossless(0.285, 0.4766);
        let (b, c) = equilibrium_points(&te, &DqCurrent::new(0.45, 0.0)).unwrap();
        let s: f64 = 0.45 * 0.4766 / 0.285;
        assert!((b - s.asin()).abs() < 1e-15 && (c - (PI - s.asin())).abs() < 1e-15);
        assert!((b - 0.852).abs() < 1e-3 && (c - 2.290).abs() < 1e-3);
    }

    #[test]
    fn swing_fixed_point_and_signs() {
        let te = TheveninParams::lossless(0.285, 0.4766);
        let cur = DqCurrent::new(0.45, 0.0);
        let pll = PllParams::default();
        let (b, c) = equilibrium_points(&te, &cur).unwrap();
        let (d1, d2) = swing_rhs(&PllState::at_rest(b), &te, &cur, &pll).unwrap();
        assert!(d1.abs() < 1e-9 && d2.abs() < 1e-9);
        let (_, d2) = swing_rhs(&PllState::at_rest(b + 1e-4), &te, &cur, &pll).unwrap();
        assert!(d2 < 0.0);
        let (_, d2) = swing_rhs(&PllState::at_rest(c + 1e-4), &te, &cur, &pll).unwrap();
        assert!(d2 > 0.0);
    }

    #[test]
    fn swing_singular_denominator() {
        let pll = PllParams::default();
        let te = TheveninParams::lossless(1.0, 1.0);
        let cur = DqCurrent::new(pll.omega0 / pll.kp, 0.0);
        assert!(matches!(
            swing_rhs(&PllState::at_rest(0.0), &te, &cur, &pll),
            Err(PllError::SingularDenominator(_))
        ));
    }

    #[test]
    fn pll_step_zero_input_is_identity() {
        let pll = PllParams::default();
        let s = PllState::at_rest(0.3);
        let n = pll_step(&s, 0.0, &pll, 1e-4);
        assert_eq!(n, s);
    }

    #[test]
    fn pll_step_pins_at_limit() {
        let pll = PllParams::default();
        let mut s = PllState::at_rest(0.0);
        for _ in 0..10_000 {
            s = pll_step(&s, 5.0, &pll, 1e-4);
        }
        assert_eq!(s.delta_dot, TAU * 2.5);
    }

    #[test]
    fn pll_step_rectangle_accumulation() {
        let pll = PllParams::default();
        let (eps, dt, n) = (1e-6, 1e-4, 1000);
        let mut s = PllState::at_rest(0.0);
        for _ in 0..n {
            s = pll_step(&s, eps, &pll, dt);
        }
        assert!((s.integrator - pll.ki * eps * n as f64 * dt).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_trajectory_is_constant() {
        let te = fault_te();
        let cur = DqCurrent::new(0.4, 0.0);
        let pll = PllParams::default();
        let (b, _) = equilibrium_points(&te, &cur).unwrap();
        let tr = integrate(&PllState::at_rest(b), &te, &cur, &pll, 0.5, DEFAULT_DT).unwrap();
        assert!(tr.points.iter().all(|p| (p.delta - b).abs() < 1e-9));
        assert_eq!(tr.classification, Classification::Synchronous);
    }

    #[test]
    fn fault_te_currents() {
        let te = fault_te();
        let pll = PllParams::default();
        let run = |i_d: f64, d0: f64| {
            let cur = DqCurrent::new(i_d, 0.0);
            integrate(&PllState::at_rest(d0), &te, &cur, &pll, 2.0, DEFAULT_DT)
                .unwrap()
                .classification
        };
        assert_eq!(run(0.8, 0.437), Classification::LossOfSync);
        assert_eq!(run(0.4, 0.437), Classification::Synchronous);
    }

    #[test]
    fn recorded_u_matches_q_axis_voltage() {
        let te = TheveninParams::new(Phasor::new(0.2, 0.1), 0.05, 0.45);
        let cur = DqCurrent::new(0.5, 0.1);
        let pll = PllParams::default();
        let b = base();
        let tr = integrate(&PllState::at_rest(0.1), &te, &cur, &pll, 0.3, DEFAULT_DT).unwrap();
        for p in tr.points.iter().step_by(97) {
            let u = q_axis_voltage(&te, &cur, p.delta, p.omega1, &b);
            assert!((u - p.u_msq).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_is_respected() {
        let te = fault_te();
        let cur = DqCurrent::new(0.9, 0.0);
        let pll = PllParams::default();
        let tr = integrate(&PllState::at_rest(0.0), &te, &cur, &pll, 1.0, DEFAULT_DT).unwrap();
        assert!(tr
            .points
            .iter()
            .all(|p| (p.omega1 - pll.omega0).abs() <= pll.freq_limit + 1e-12));
    }

    #[test]
    fn classify_rules() {
        let te = fault_te();
        let cur = DqCurrent::new(0.4, 0.0);
        let (b, c) = equilibrium_points(&te, &cur).unwrap();
        let w0 = TAU * 50.0;
        let mk = |f: &dyn Fn(f64) -> (f64, f64)| {
            let points = (0..=1000)
                .map(|k| {
                    let t = k as f64 * 1e-3;
                    let (d, w) = f(t);
                    TrajectoryPoint {
                        t,
                        delta: d,
                        delta_dot: w,
                        omega1: w0 + w,
                        u_msq: 0.0,
                    }
                })
                .collect();
            Trajectory {
                points,
                dt: 1e-3,
                omega0: w0,
                freq_limit: TAU * 2.5,
                classification: Classification::Undecided,
            }
        };
        assert_eq!(
            classify(&mk(&|_| (b, 0.0)), &te, &cur),
            Classification::Synchronous
        );
        assert_eq!(
            classify(&mk(&|t| (b + 20.0 * t, 20.0)), &te, &cur),
            Classification::LossOfSync
        );
        assert!(b + 20.0 > c + TAU);
        let ring = mk(&|t| (b + 0.3 * (-0.5 * t).exp() * (30.0 * t).cos(), 0.0));
        assert_eq!(classify(&ring, &te, &cur), Classification::Undecided);
    }

    #[test]
    fn lightly_damped_short_run_is_undecided() {
        let te = TheveninParams::lossless(1.0, 0.2);
        let cur = DqCurrent::new(0.3, 0.0);
        let pll = PllParams::from_damping(0.05, 10.0, 50.0, 2.5).unwrap();
        let tr = integrate(&PllState::at_rest(0.3), &te, &cur, &pll, 0.3, DEFAULT_DT).unwrap();
        assert_eq!(tr.classification, Classification::Undecided);
    }

    #[test]
    fn zero_current_portrait_converges() {
        let te = fault_te();
        let pll = PllParams::default();
        let spec = PortraitSpec {
            i_d_list: vec![0.0],
            i_q: 0.0,
            grid: (-7..=7).map(|k| (k as f64 * 0.2, 0.0)).collect(),
            t_end: 2.0,
            dt: DEFAULT_DT,
        };
        let out = phase_portrait(&te, &pll, &spec).unwrap();
        assert_eq!(out[0].classification, Classification::Synchronous);
    }

    #[test]
    fn saddle_start_is_deterministic_and_not_synchronous() {
        let te = fault_te();
        let pll = PllParams::default();
        let cur = DqCurrent::new(0.4, 0.0);
        let (_, c) = equilibrium_points(&te, &cur).unwrap();
        let spec = PortraitSpec {
            i_d_list: vec![0.4],
            i_q: 0.0,
            grid: vec![(c, 0.0)],
            t_end: 1.0,
            dt: DEFAULT_DT,
        };
        let a = phase_portrait(&te, &pll, &spec).unwrap();
        let b = phase_portrait(&te, &pll, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].classification, Classification::Synchronous);
    }

    #[test]
    fn invalid_steps_rejected() {
        let te = fault_te();
        let cur = DqCurrent::default();
        let pll = PllParams::default();
        let s = PllState::at_rest(0.0);
        assert!(integrate(&s, &te, &cur, &pll, 1.0, 0.0).is_err());
        assert!(integrate(&s, &te, &cur, &pll, 1.0, 2e-3).is_err());
        assert!(integrate(&s, &te, &cur, &pll, 1e5, 1e-4).is_err());
    }

    #[test]
    fn portrait_rejects_empty_lists() {
        let spec = PortraitSpec {
            i_d_list: vec![],
            i_q: 0.0,
            grid: PortraitSpec::default_grid(),
            t_end: 0.1,
            dt: DEFAULT_DT,
        };
        assert!(phase_portrait(&fault_te(), &PllParams::default(), &spec).is_err());
    }
}
