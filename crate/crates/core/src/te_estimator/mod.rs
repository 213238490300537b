//! Online Thevenin-equivalent estimation from PCC phasor measurements.
//!
//! Consecutive samples are differenced; a difference enters the estimation
//! window only if its voltage change clears a threshold and its single-pair
//! impedance and implied potential satisfy the physical constraints
//! `0 ≤ x ≤ x_max`, `r ≤ x`, `|E| ≤ e_max`. The window is solved by least
//! squares. Baseline estimators live in [`baselines`], analytic error bounds
//! in [`bounds`].

pub mod baselines;
pub mod bounds;

use std::collections::VecDeque;
use std::io::{self, Write};

use nalgebra::{Matrix2 as NMatrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_types::{phasor_div, Matrix2, PerUnitBase, Phasor, PmuSample, TheveninParams};

pub use baselines::{baseline_dv_di, baseline_rls, baseline_window_ls, RlsConfig};
pub use bounds::{de_max, relative_error_bound, required_dv, BoundInputs};

/// Timestamp tolerance for adjacent samples, seconds.
pub const ADJACENT_TOL: f64 = 1e-9;
/// Smallest current change usable for a single-pair solve.
pub const SINGULAR_DI: f64 = 1e-9;
/// Largest admissible condition number of the normal matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("samples at t = {prev} and t = {next} are not {dt} s apart")]
    NonAdjacentSamples { prev: f64, next: f64, dt: f64 },
    #[error("current difference of magnitude {0:e} is singular")]
    SingularDiff(f64),
    #[error("normal matrix is rank deficient (condition number {0:e})")]
    RankDeficient(f64),
    #[error("error bound undefined for |dV| = {dv} <= |dE| = {de}")]
    BoundUndefined { dv: f64, de: f64 },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
}

/// Difference of two adjacent samples, tagged with the later one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffSample {
    pub t: f64,
    pub dv: Phasor,
    pub di: Phasor,
    pub end: PmuSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub dv_threshold: f64,
    pub x_max: f64,
    pub e_max: f64,
    pub window_m: usize,
}

impl GateConfig {
    pub fn new(x_max: f64) -> Self {
        Self {
            dv_threshold: 0.02,
            x_max,
            e_max: 1.0,
            window_m: 5,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.dv_threshold > 0.0 && self.x_max > 0.0 && self.e_max > 0.0 && self.window_m >= 2)
        {
            return Err(EstimatorError::InvalidConfig(format!(
                "need dv_threshold > 0, x_max > 0, e_max > 0, window_m >= 2: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Updated,
    Held,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    /// `(r, x)` in pu.
    pub z: Option<(f64, f64)>,
    pub e: Option<Phasor>,
    pub n_selected: usize,
    pub status: EstimateStatus,
}

impl EstimateRecord {
    pub fn thevenin(&self) -> Option<TheveninParams> {
        match (self.z, self.e) {
            (Some((r, x)), Some(e)) => Some(TheveninParams::new(e, r, x)),
            _ => None,
        }
    }

    fn held(t: f64, prev: Option<&EstimateRecord>, n_selected: usize) -> Self {
        Self {
            t,
            z: prev.and_then(|p| p.z),
            e: prev.and_then(|p| p.e),
            n_selected,
            status: EstimateStatus::Held,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GatedLs,
    WindowLs,
    Rls,
    DvDi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GatedLs, Method::WindowLs, Method::Rls, Method::DvDi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::GatedLs => "gated_ls",
            Method::WindowLs => "window_ls",
            Method::Rls => "rls",
            Method::DvDi => "dv_di",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Differences `next − prev`; the pair must be `dt` apart.
pub fn diff(prev: &PmuSample, next: &PmuSample, dt: f64) -> Result<DiffSample, EstimatorError> {
    if ((next.t - prev.t) - dt).abs() > ADJACENT_TOL {
        return Err(EstimatorError::NonAdjacentSamples {
            prev: prev.t,
            next: next.t,
            dt,
        });
    }
    Ok(DiffSample {
        t: next.t,
        dv: next.v - prev.v,
        di: next.i - prev.i,
        end: *next,
    })
}

/// Single-pair impedance `Z = dV/dI` assuming `dE = 0`.
pub fn solve_pair(d: &DiffSample) -> Result<(f64, f64), EstimatorError> {
    let m = d.di.magnitude();
    if m <= SINGULAR_DI {
        return Err(EstimatorError::SingularDiff(m));
    }
    let z = phasor_div(d.dv, d.di).map_err(|_| EstimatorError::SingularDiff(m))?;
    Ok((z.re, z.im))
}

/// Potential behind `z` seen from a sample: `E = V − Z·I`.
pub fn estimate_potential(s: &PmuSample, z: (f64, f64)) -> Phasor {
    s.v - Phasor::new(z.0, z.1) * s.i
}

fn satisfies_constraints(z: (f64, f64), e: Phasor, cfg: &GateConfig) -> bool {
    let (r, x) = z;
    (0.0..=cfg.x_max).contains(&x) && r <= x && e.magnitude() <= cfg.e_max
}

/// Selection rule for a difference sample. Never fails; rejection is `false`.
pub fn gate(d: &DiffSample, cfg: &GateConfig) -> bool {
    if d.dv.magnitude() < cfg.dv_threshold {
        return false;
    }
    match solve_pair(d) {
        Ok(z) => satisfies_constraints(z, estimate_potential(&d.end, z), cfg),
        Err(_) => false,
    }
}

/// Least-squares impedance over a window of differences.
///
/// Each difference contributes the two rows of `Matrix2::from_phasor(dI)`
/// against `(Re dV, Im dV)`.
pub fn estimate(window: &[DiffSample]) -> Result<(f64, f64), EstimatorError> {
    let mut hth = NMatrix2::<f64>::zeros();
    let mut hty = Vector2::<f64>::zeros();
    for d in window {
        let h = Matrix2::from_phasor(d.di).m;
        let hm = NMatrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
        hth += hm.transpose() * hm;
        hty += hm.transpose() * Vector2::new(d.dv.re, d.dv.im);
    }
    let eig = hth.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= SINGULAR_DI * SINGULAR_DI || hi / lo > MAX_CONDITION {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(EstimatorError::RankDeficient(cond));
    }
    let sol = hth
        .cholesky()
        .ok_or(EstimatorError::RankDeficient(f64::INFINITY))?
        .solve(&hty);
    Ok((sol[0], sol[1]))
}

/// Streaming gated estimator; one record per incoming difference.
#[derive(Debug, Clone)]
pub struct GatedEstimator {
    cfg: GateConfig,
    dt: f64,
    prev: Option<PmuSample>,
    window: VecDeque<DiffSample>,
    n_selected: usize,
    last: Option<EstimateRecord>,
}

impl GatedEstimator {
    pub fn new(cfg: GateConfig, dt: f64) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        if !(dt > 0.0) {
            return Err(EstimatorError::InvalidConfig(format!("sample interval {dt}")));
        }
        Ok(Self {
            cfg,
            dt,
            prev: None,
            window: VecDeque::with_capacity(cfg.window_m),
            n_selected: 0,
            last: None,
        })
    }

    pub fn config(&self) -> &GateConfig {
        &self.cfg
    }

    /// Most recent record with an estimate present.
    pub fn current(&self) -> Option<&EstimateRecord> {
        self.last.as_ref().filter(|r| r.z.is_some())
    }

    pub fn push(&mut self, s: PmuSample) -> Result<Option<EstimateRecord>, EstimatorError> {
        let Some(prev) = self.prev.replace(s) else {
            return Ok(None);
        };
        let d = diff(&prev, &s, self.dt)?;
        let mut rec = EstimateRecord::held(s.t, self.last.as_ref(), self.n_selected);
        if gate(&d, &self.cfg) {
            if self.window.len() == self.cfg.window_m {
                self.window.pop_front();
            }
            self.window.push_back(d);
            self.n_selected += 1;
            rec.n_selected = self.n_selected;
            if self.window.len() >= 2 {
                let win: Vec<DiffSample> = self.window.iter().copied().collect();
                if let Ok(z) = estimate(&win) {
                    let e = estimate_potential(&s, z);
                    if satisfies_constraints(z, e, &self.cfg) {
                        rec = EstimateRecord {
                            t: s.t,
                            z: Some(z),
                            e: Some(e),
                            n_selected: self.n_selected,
                            status: EstimateStatus::Updated,
                        };
                    }
                }
            }
        }
        self.last = Some(rec);
        Ok(Some(rec))
    }
}

/// Runs the gated estimator over a whole stream.
pub fn run_stream(
    samples: &[PmuSample],
    cfg: &GateConfig,
    dt: f64,
) -> Result<Vec<EstimateRecord>, EstimatorError> {
    let mut est = GatedEstimator::new(*cfg, dt)?;
    let mut out = Vec::with_capacity(samples.len().saturating_sub(1));
    for s in samples {
        if let Some(r) = est.push(*s)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Estimate records of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSeries {
    pub method: Method,
    pub records: Vec<EstimateRecord>,
}

impl EstimateSeries {
    pub fn first_update(&self) -> Option<&EstimateRecord> {
        self.records
            .iter()
            .find(|r| r.status == EstimateStatus::Updated)
    }

    /// Latest record at or before `t`.
    pub fn at(&self, t: f64) -> Option<&EstimateRecord> {
        self.records.iter().take_while(|r| r.t <= t + 1e-9).last()
    }

    /// Writes the estimate CSV with a header.
    pub fn write_csv<W: Write>(&self, w: &mut W, base: &PerUnitBase) -> io::Result<()> {
        writeln!(
            w,
            "t,status,r_pu,x_pu,x_henries,e_mag_pu,e_ang_rad,n_selected,method"
        )?;
        for r in &self.records {
            let status = match r.status {
                EstimateStatus::Updated => "updated",
                EstimateStatus::Held => "held",
            };
            let (rz, xz, xh) = match r.z {
                Some((rr, xx)) => (
                    format!("{rr:.9}"),
                    format!("{xx:.9}"),
                    format!("{:.9}", base.henries(xx)),
                ),
                None => Default::default(),
            };
            let (em, ea) = match r.e {
                Some(e) => (format!("{:.9}", e.magnitude()), format!("{:.9}", e.angle())),
                None => Default::default(),
            };
            writeln!(
                w,
                "{:.6},{status},{rz},{xz},{xh},{em},{ea},{},{}",
                r.t,
                r.n_selected,
                self.method.as_str()
            )?;
        }
        Ok(())
    }
}
