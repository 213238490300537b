//! Largest synchronizable d-axis current for a Thevenin equivalent, and the
//! adaptive fault-current command built on it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_types::TheveninParams;
use crate::pll_dynamics::{
    equilibrium_points, integrate, Classification, DqCurrent, PllError, PllParams, PllState,
    DEFAULT_DT, DEFAULT_I_CEILING,
};
use crate::te_estimator::{EstimateRecord, EstimateStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("no stable current: the converter loses synchronism even at i_d = 0")]
    NoStableCurrent,
    #[error("classification undecided at i_d = {i_d} after extending the horizon to {t_end} s")]
    UndecidedBoundary { i_d: f64, t_end: f64 },
    #[error("no operating point exists at i_d = 0 for i_q = {0}")]
    NoEquilibrium(f64),
    #[error("estimate record carries no Thevenin parameters")]
    NotUpdated,
    #[error(transparent)]
    Pll(#[from] PllError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImaxConfig {
    pub tol: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Angle at fault onset, rad.
    pub initial_delta: f64,
    pub i_ceiling: f64,
    /// Horizon doublings allowed for an undecided midpoint.
    pub max_extensions: u32,
}

impl ImaxConfig {
    pub fn new(initial_delta: f64) -> Self {
        Self {
            tol: 0.01,
            t_end: 2.0,
            dt: DEFAULT_DT,
            initial_delta,
            i_ceiling: DEFAULT_I_CEILING,
            max_extensions: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImaxResult {
    pub i_max: f64,
    pub bracket: (f64, f64),
    pub iterations: u32,
    pub trajectories_evaluated: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentCommand {
    pub i_d_ref: f64,
    pub i_q_ref: f64,
    pub issued_at: f64,
    pub basis: TheveninParams,
}

/// Existence limit `(|E| − r·i_q)/x` at nominal frequency.
pub fn static_limit(te: &TheveninParams, i_q: f64) -> f64 {
    let head = te.e_mag() - te.r * i_q;
    if te.x <= 0.0 {
        return f64::INFINITY;
    }
    (head / te.x).max(0.0)
}

/// Classification of the fault-onset trajectory at `i_d`.
pub fn classify_current(
    te: &TheveninParams,
    pll: &PllParams,
    i_d: f64,
    i_q: f64,
    initial_delta: f64,
    t_end: f64,
    dt: f64,
) -> Result<Classification, PllError> {
    let cur = DqCurrent::new(i_d, i_q);
    Ok(integrate(&PllState::at_rest(initial_delta), te, &cur, pll, t_end, dt)?.classification)
}

/// Bisection for the largest synchronous `i_d` on `[0, min(ceiling, static limit)]`.
///
/// Undecided midpoints are retried with doubled horizons before giving up.
pub fn max_stable_current(
    te: &TheveninParams,
    pll: &PllParams,
    i_q: f64,
    cfg: &ImaxConfig,
) -> Result<ImaxResult, ControlError> {
    if equilibrium_points(te, &DqCurrent::new(0.0, i_q)).is_none() {
        return Err(ControlError::NoEquilibrium(i_q));
    }
    let mut evaluated = 0u32;
    let mut judge = |i_d: f64| -> Result<bool, ControlError> {
        let mut t_end = cfg.t_end;
        for _ in 0..=cfg.max_extensions {
            evaluated += 1;
            match classify_current(te, pll, i_d, i_q, cfg.initial_delta, t_end, cfg.dt)? {
                Classification::Synchronous => return Ok(true),
                Classification::LossOfSync => return Ok(false),
                Classification::Undecided => t_end *= 2.0,
            }
        }
        Err(ControlError::UndecidedBoundary {
            i_d,
            t_end: t_end / 2.0,
        })
    };

    if !judge(0.0)? {
        return Err(ControlError::NoStableCurrent);
    }
    let top = cfg.i_ceiling.min(static_limit(te, i_q));
    if top >= cfg.i_ceiling && judge(cfg.i_ceiling)? {
        return Ok(ImaxResult {
            i_max: cfg.i_ceiling,
            bracket: (cfg.i_ceiling, cfg.i_ceiling),
            iterations: 0,
            trajectories_evaluated: evaluated,
        });
    }
    let (mut lo, mut hi) = (0.0, top);
    let mut iterations = 0;
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if judge(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(ImaxResult {
        i_max: lo,
        bracket: (lo, hi),
        iterations,
        trajectories_evaluated: evaluated,
    })
}

/// Fault-current command from an updated estimate.
///
/// The bisection starts from the pre-fault operating angle of `prefault`.
/// When no current is stable the command falls back to `i_d_ref = 0`.
pub fn command_from_estimate(
    rec: &EstimateRecord,
    prefault: &CurrentCommand,
    pll: &PllParams,
    margin: f64,
    cfg: &ImaxConfig,
) -> Result<(CurrentCommand, Option<ImaxResult>), ControlError> {
    if rec.status != EstimateStatus::Updated {
        return Err(ControlError::NotUpdated);
    }
    let basis = rec.thevenin().ok_or(ControlError::NotUpdated)?;
    let pre_cur = DqCurrent::new(prefault.i_d_ref, prefault.i_q_ref);
    let delta0 = equilibrium_points(&prefault.basis, &pre_cur).map_or(cfg.initial_delta, |p| p.0);
    let cfg = ImaxConfig {
        initial_delta: delta0,
        ..*cfg
    };
    let (i_d_ref, imax) = match max_stable_current(&basis, pll, prefault.i_q_ref, &cfg) {
        Ok(r) => (prefault.i_d_ref.min(margin * r.i_max), Some(r)),
        Err(ControlError::NoStableCurrent | ControlError::NoEquilibrium(_)) => (0.0, None),
        Err(e) => return Err(e),
    };
    Ok((
        CurrentCommand {
            i_d_ref,
            i_q_ref: prefault.i_q_ref,
            issued_at: rec.t,
            basis,
        },
        imax,
    ))
}

/// `{i_max, bracket, iterations, te, margin, command}` summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaxSummary {
    pub i_max: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub iterations: u32,
    pub te: TeSummary,
    pub margin: f64,
    pub command: CommandSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeSummary {
    pub r: f64,
    pub x: f64,
    pub e_mag: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandSummary {
    pub i_d_ref: f64,
    pub i_q_ref: f64,
}

impl ImaxSummary {
    /// Summary of a bisection outcome; no stable current maps to null `i_max`
    /// and a zero command.
    pub fn new(
        te: &TheveninParams,
        i_q: f64,
        margin: f64,
        result: Result<ImaxResult, ControlError>,
    ) -> Result<Self, ControlError> {
        let te_s = TeSummary {
            r: te.r,
            x: te.x,
            e_mag: te.e_mag(),
        };
        match result {
            Ok(r) => Ok(Self {
                i_max: Some(r.i_max),
                bracket: Some(r.bracket),
                iterations: r.iterations,
                te: te_s,
                margin,
                command: CommandSummary {
                    i_d_ref: margin * r.i_max,
                    i_q_ref: i_q,
                },
            }),
            Err(ControlError::NoStableCurrent | ControlError::NoEquilibrium(_)) => Ok(Self {
                i_max: None,
                bracket: None,
                iterations: 0,
                te: te_s,
                margin,
                command: CommandSummary {
                    i_d_ref: 0.0,
                    i_q_ref: i_q,
                },
            }),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::{reactance_pu, PerUnitBase, Phasor};

    fn x_of(l: f64) -> f64 {
        reactance_pu(l, &PerUnitBase::default())
    }

    #[test]
    fn static_limit_examples() {
        let te = TheveninParams::lossless(0.285, x_of(0.107));
        assert!((static_limit(&te, 0.0) - 0.598).abs() < 1e-3);
        assert!((static_limit(&TheveninParams::lossless(1.0, 0.5), 0.0) - 2.0).abs() < 1e-15);
        let te = TheveninParams::new(Phasor::new(0.3, 0.0), 0.1, 0.4);
        assert!(static_limit(&te, 3.0).abs() < 1e-12);
    }

    #[test]
    fn stiff_grid_reaches_ceiling() {
        let te = TheveninParams::lossless(1.0, 0.01);
        let r = max_stable_current(&te, &PllParams::default(), 0.0, &ImaxConfig::new(0.0)).unwrap();
        assert_eq!(r.i_max, DEFAULT_I_CEILING);
    }

    #[test]
    fn result_is_verified_by_neighbours() {
        let te = TheveninParams::lossless(0.27, x_of(0.115));
        let pll = PllParams::default();
        let cfg = ImaxConfig::new(0.437);
        let r = max_stable_current(&te, &pll, 0.0, &cfg).unwrap();
        assert!(r.bracket.0 <= r.i_max && r.i_max <= r.bracket.1);
        assert!(r.bracket.1 - r.bracket.0 <= cfg.tol);
        let c = |i| classify_current(&te, &pll, i, 0.0, 0.437, cfg.t_end, cfg.dt).unwrap();
        assert_eq!(c(r.i_max - cfg.tol), Classification::Synchronous);
        assert_eq!(c(r.i_max + cfg.tol), Classification::LossOfSync);
        assert!(r.i_max <= static_limit(&te, 0.0));
    }

    #[test]
    fn command_is_min_of_prefault_and_margin() {
        let pll = PllParams::default();
        let pre_te = TheveninParams::lossless(1.0, x_of(0.11875));
        let prefault = CurrentCommand {
            i_d_ref: 0.8,
            i_q_ref: 0.0,
            issued_at: 0.0,
            basis: pre_te,
        };
        let weak = TheveninParams::lossless(0.27, x_of(0.115));
        let rec = EstimateRecord {
            t: 0.53,
            z: Some((weak.r, weak.x)),
            e: Some(weak.e),
            n_selected: 2,
            status: EstimateStatus::Updated,
        };
        let cfg = ImaxConfig::new(0.0);
        let (cmd, imax) = command_from_estimate(&rec, &prefault, &pll, 0.95, &cfg).unwrap();
        let imax = imax.unwrap();
        assert!((cmd.i_d_ref - 0.95 * imax.i_max).abs() < 1e-12);
        assert_eq!(cmd.basis, weak);

        let strong = EstimateRecord {
            z: Some((0.0, 0.05)),
            e: Some(Phasor::new(1.0, 0.0)),
            ..rec
        };
        let (cmd, _) = command_from_estimate(&strong, &prefault, &pll, 0.95, &cfg).unwrap();
        assert_eq!(cmd.i_d_ref, 0.8);

        let dead = EstimateRecord {
            z: Some((0.0, 0.5)),
            e: Some(Phasor::new(0.0, 0.0)),
            ..rec
        };
        let (cmd, imax) = command_from_estimate(&dead, &prefault, &pll, 0.95, &cfg).unwrap();
        assert_eq!((cmd.i_d_ref, imax), (0.0, None));
    }

    #[test]
    fn held_record_is_rejected() {
        let rec = EstimateRecord {
            t: 0.0,
            z: None,
            e: None,
            n_selected: 0,
            status: EstimateStatus::Held,
        };
        let prefault = CurrentCommand {
            i_d_ref: 0.8,
            i_q_ref: 0.0,
            issued_at: 0.0,
            basis: TheveninParams::lossless(1.0, 0.5),
        };
        assert!(matches!(
            command_from_estimate(
                &rec,
                &prefault,
                &PllParams::default(),
                0.95,
                &ImaxConfig::new(0.0)
            ),
            Err(ControlError::NotUpdated)
        ));
    }

    #[test]
    fn summary_for_no_stable_current() {
        let te = TheveninParams::lossless(0.3, 0.5);
        let s = ImaxSummary::new(&te, 0.0, 0.95, Err(ControlError::NoStableCurrent)).unwrap();
        assert_eq!(s.i_max, None);
        assert_eq!(s.command.i_d_ref, 0.0);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.starts_with("{\"i_max\":null,\"bracket\":null,\"iterations\":0,\"te\":"));
    }
}
