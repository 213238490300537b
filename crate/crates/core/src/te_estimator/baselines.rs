//! Ungated comparison estimators: sliding-window least squares, recursive
//! least squares with forgetting, and the per-pair `dV/dI` ratio.
//!
//! All three emit one record per difference, like the gated estimator, and
//! never apply the constraint gate.

use std::collections::VecDeque;

use nalgebra::{Matrix2 as NMatrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{
    diff, estimate, estimate_potential, solve_pair, DiffSample, EstimateRecord, EstimateStatus,
    EstimatorError,
};
use crate::core_types::{Matrix2, PmuSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlsConfig {
    pub forgetting: f64,
    pub p0: f64,
    /// Initial `(r, x)`.
    pub theta0: (f64, f64),
}

impl RlsConfig {
    pub fn new(theta0: (f64, f64)) -> Self {
        Self {
            forgetting: 0.98,
            p0: 100.0,
            theta0,
        }
    }
}

fn updated(s: &PmuSample, z: (f64, f64), n: usize) -> EstimateRecord {
    EstimateRecord {
        t: s.t,
        z: Some(z),
        e: Some(estimate_potential(s, z)),
        n_selected: n,
        status: EstimateStatus::Updated,
    }
}

fn held(t: f64, prev: Option<&EstimateRecord>, n: usize) -> EstimateRecord {
    EstimateRecord::held(t, prev, n)
}

fn diffs(samples: &[PmuSample], dt: f64) -> Result<Vec<DiffSample>, EstimatorError> {
    samples.windows(2).map(|p| diff(&p[0], &p[1], dt)).collect()
}

/// Least squares over the most recent `window_m` raw differences.
pub fn baseline_window_ls(
    samples: &[PmuSample],
    window_m: usize,
    dt: f64,
) -> Result<Vec<EstimateRecord>, EstimatorError> {
    let mut win: VecDeque<DiffSample> = VecDeque::with_capacity(window_m);
    let mut out: Vec<EstimateRecord> = Vec::new();
    for (k, d) in diffs(samples, dt)?.into_iter().enumerate() {
        if win.len() == window_m {
            win.pop_front();
        }
        win.push_back(d);
        let n = k + 1;
        let rec = if win.len() >= 2 {
            let w: Vec<DiffSample> = win.iter().copied().collect();
            match estimate(&w) {
                Ok(z) => updated(&d.end, z, n),
                Err(_) => held(d.t, out.last(), n),
            }
        } else {
            held(d.t, out.last(), n)
        };
        out.push(rec);
    }
    Ok(out)
}

/// Exponentially weighted recursive least squares over every difference.
pub fn baseline_rls(
    samples: &[PmuSample],
    cfg: &RlsConfig,
    dt: f64,
) -> Result<Vec<EstimateRecord>, EstimatorError> {
    let lambda = cfg.forgetting;
    let mut theta = Vector2::new(cfg.theta0.0, cfg.theta0.1);
    let mut p = NMatrix2::identity() * cfg.p0;
    let mut out = Vec::new();
    for (k, d) in diffs(samples, dt)?.into_iter().enumerate() {
        let h = Matrix2::from_phasor(d.di).m;
        let hm = NMatrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
        let y = Vector2::new(d.dv.re, d.dv.im);
        let s = NMatrix2::identity() * lambda + hm * p * hm.transpose();
        // s is symmetric positive definite since lambda > 0.
        if let Some(s_inv) = s.try_inverse() {
            let gain = p * hm.transpose() * s_inv;
            theta += gain * (y - hm * theta);
            p = (p - gain * hm * p) / lambda;
            p = (p + p.transpose()) * 0.5;
        }
        out.push(updated(&d.end, (theta[0], theta[1]), k + 1));
    }
    Ok(out)
}

/// Per-pair `dV/dI`; holds the previous value on a singular pair.
pub fn baseline_dv_di(samples: &[PmuSample], dt: f64) -> Result<Vec<EstimateRecord>, EstimatorError> {
    let mut out: Vec<EstimateRecord> = Vec::new();
    for (k, d) in diffs(samples, dt)?.into_iter().enumerate() {
        let rec = match solve_pair(&d) {
            Ok(z) => updated(&d.end, z, k + 1),
            Err(_) => held(d.t, out.last(), k + 1),
        };
        out.push(rec);
    }
    Ok(out)
}
