//! Randomized invariants across the numeric layers.

use std::f64::consts::PI;

use gsl_core::core_types::{phasor_div, Matrix2, Phasor, PmuSample, TheveninParams};
use gsl_core::pll_dynamics::{
    equilibrium_points, integrate, swing_rhs, Classification, DqCurrent, PllParams, PllState,
};
use gsl_core::stability_control::{max_stable_current, static_limit, ImaxConfig};
use gsl_core::te_estimator::{
    diff, estimate, relative_error_bound, run_stream, solve_pair, DiffSample, EstimateStatus,
    GateConfig,
};
use proptest::prelude::*;

const DT: f64 = 0.01;

fn phasor(lo: f64, hi: f64) -> impl Strategy<Value = Phasor> {
    (lo..hi, -PI..PI).prop_map(|(m, a)| Phasor::from_polar(m, a))
}

/// Equivalents with `r ≤ x ≤ 1.5` and `|E| ≤ 1`.
fn thevenin() -> impl Strategy<Value = TheveninParams> {
    (phasor(0.2, 1.0), 0.05..1.5f64, 0.0..1.0f64).prop_map(|(e, x, rf)| TheveninParams::new(e, rf * x * 0.2, x))
}

fn forward(te: &TheveninParams, currents: &[Phasor]) -> Vec<PmuSample> {
    currents
        .iter()
        .enumerate()
        .map(|(k, &i)| PmuSample {
            t: k as f64 * DT,
            v: te.terminal_voltage(i),
            i,
        })
        .collect()
}

fn diffs(s: &[PmuSample]) -> Vec<DiffSample> {
    s.windows(2).map(|p| diff(&p[0], &p[1], DT).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matrix_norm_times_inverse_norm_is_one(p in phasor(1e-3, 10.0)) {
        let m = Matrix2::from_phasor(p);
        let inv = m.inverse().unwrap();
        prop_assert!((m.spectral_norm() * inv.spectral_norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn error_bound_holds_under_bounded_drift(
        te in thevenin(),
        di in phasor(0.01, 0.5),
        de in phasor(0.0, 0.02),
    ) {
        let dv = te.z() * di + de;
        prop_assume!(dv.magnitude() > de.magnitude());
        let bound = relative_error_bound(dv.magnitude(), de.magnitude()).unwrap();
        let d = DiffSample { t: DT, dv, di, end: PmuSample { t: DT, v: te.e + dv, i: di } };
        let (r, x) = solve_pair(&d).unwrap();
        let err = (Phasor::new(r, x) - te.z()).magnitude() / te.z().magnitude();
        prop_assert!(err <= bound * (1.0 + 1e-12) + 1e-15, "{err} > {bound}");
    }

    #[test]
    fn phasor_division_inverts_multiplication(a in phasor(1e-3, 10.0), b in phasor(1e-3, 10.0)) {
        let q = phasor_div(a * b, b).unwrap();
        prop_assert!((q - a).magnitude() <= 1e-12 * a.magnitude().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn window_ls_recovers_impedance_exactly(
        te in thevenin(),
        currents in prop::collection::vec(phasor(0.1, 1.0), 3..8),
    ) {
        let (r, x) = estimate(&diffs(&forward(&te, &currents))).unwrap();
        prop_assert!((r - te.r).abs() <= 1e-9 && (x - te.x).abs() <= 1e-9);
    }

    #[test]
    fn gated_stream_first_update_is_exact(
        te in thevenin(),
        a in phasor(0.6, 1.0),
        b in phasor(0.6, 1.0),
    ) {
        // Alternating currents with |dI| well above the gate threshold.
        prop_assume!((a - b).magnitude() * te.z().magnitude() > 0.05);
        let currents = [Phasor::new(0.0, 0.0), a, b, a * 0.3, b];
        let samples = forward(&te, &currents);
        // At least two linearly independent current differences.
        prop_assume!(diffs(&samples)
            .windows(2)
            .any(|w| (w[0].di.re * w[1].di.im - w[0].di.im * w[1].di.re).abs() > 1e-3));
        let cfg = GateConfig::new(1.6);
        let recs = run_stream(&samples, &cfg, DT).unwrap();
        let first = recs.iter().find(|r| r.status == EstimateStatus::Updated);
        prop_assume!(first.is_some());
        let (r, x) = first.unwrap().z.unwrap();
        prop_assert!((r - te.r).abs() <= 1e-9 && (x - te.x).abs() <= 1e-9, "{r} {x} vs {te:?}");
    }

    #[test]
    fn updated_records_satisfy_the_gate_constraints(
        te in thevenin(),
        currents in prop::collection::vec(phasor(0.0, 1.2), 4..12),
        noise in prop::collection::vec(phasor(0.0, 0.05), 12),
    ) {
        let mut samples = forward(&te, &currents);
        for (s, n) in samples.iter_mut().zip(&noise) {
            s.v += *n;
        }
        let cfg = GateConfig::new(1.0);
        for rec in run_stream(&samples, &cfg, DT).unwrap() {
            if rec.status == EstimateStatus::Updated {
                let (r, x) = rec.z.unwrap();
                prop_assert!((0.0..=cfg.x_max).contains(&x) && r <= x);
                prop_assert!(rec.e.unwrap().magnitude() <= cfg.e_max);
            }
        }
    }

    #[test]
    fn quiescent_streams_never_update(te in thevenin(), i in phasor(0.0, 1.0), n in 2usize..40) {
        let samples = forward(&te, &vec![i; n]);
        let recs = run_stream(&samples, &GateConfig::new(1.6), DT).unwrap();
        prop_assert_eq!(recs.len(), n - 1);
        prop_assert!(recs.iter().all(|r| r.status == EstimateStatus::Held && r.z.is_none()));
    }

    #[test]
    fn quiescent_prefix_does_not_change_later_estimates(
        te in thevenin(),
        currents in prop::collection::vec(phasor(0.0, 1.0), 3..10),
        k in 1usize..6,
    ) {
        let cfg = GateConfig::new(1.6);
        let mut prefixed: Vec<Phasor> = vec![currents[0]; k];
        prefixed.extend(&currents);
        let plain: Vec<PmuSample> = forward(&te, &prefixed)[k..].to_vec();
        let a = run_stream(&plain, &cfg, DT).unwrap();
        let b = run_stream(&forward(&te, &prefixed), &cfg, DT).unwrap();
        prop_assert_eq!(&b[k..], &a[..]);
        // And the stream is a pure function of its input.
        prop_assert_eq!(run_stream(&plain, &cfg, DT).unwrap(), a);
    }

    #[test]
    fn difference_is_antisymmetric(v0 in phasor(0.0, 2.0), i0 in phasor(0.0, 2.0), v1 in phasor(0.0, 2.0), i1 in phasor(0.0, 2.0)) {
        let a = PmuSample { t: 0.0, v: v0, i: i0 };
        let b = PmuSample { t: DT, v: v1, i: i1 };
        let ab = diff(&a, &b, DT).unwrap();
        let ba = diff(&PmuSample { t: 0.0, ..b }, &PmuSample { t: DT, ..a }, DT).unwrap();
        prop_assert_eq!(ab.dv, -ba.dv);
        prop_assert_eq!(ab.di, -ba.di);
    }

    #[test]
    fn equilibria_are_fixed_points_with_expected_linearization(
        te in thevenin(),
        i_d in 0.0..1.2f64,
        i_q in -0.3..0.3f64,
    ) {
        let pll = PllParams::default();
        let cur = DqCurrent::new(i_d, i_q);
        let pts = equilibrium_points(&te, &cur);
        prop_assume!(pts.is_some_and(|(db, _)| db.sin() <= 0.95));
        let (db, du) = pts.unwrap();
        for (delta, stable) in [(db, true), (du, false)] {
            let at = |d: f64, w: f64| {
                swing_rhs(&PllState { delta: d, delta_dot: w, integrator: 0.0 }, &te, &cur, &pll).unwrap()
            };
            let (v, a) = at(delta, 0.0);
            prop_assert!(v.abs() <= 1e-9 && a.abs() <= 1e-9);
            let h = 1e-6;
            let a21 = (at(delta + h, 0.0).1 - at(delta - h, 0.0).1) / (2.0 * h);
            let a22 = (at(delta, h).1 - at(delta, -h).1) / (2.0 * h);
            let (trace, det) = (a22, -a21);
            if stable {
                prop_assert!(trace < 0.0 && det > 0.0, "stable node: tr {trace}, det {det}");
            } else {
                prop_assert!(det < 0.0, "saddle: det {det}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recorded_frequency_never_exceeds_the_clamp(
        te in thevenin(),
        i_d in 0.0..1.2f64,
        delta in -PI..PI,
        integrator in -50.0..50.0f64,
    ) {
        let pll = PllParams::default();
        let cur = DqCurrent::new(i_d, 0.0);
        let init = PllState { delta, delta_dot: 0.0, integrator };
        let traj = integrate(&init, &te, &cur, &pll, 0.5, 5e-5).unwrap();
        for p in &traj.points {
            prop_assert!((p.omega1 - pll.omega0).abs() <= pll.freq_limit + 1e-12);
        }
    }

    #[test]
    fn integration_agrees_with_the_swing_equation(
        e in 0.5..1.0f64,
        x in 0.1..0.6f64,
        i_d in 0.0..0.6f64,
        kick in -0.1..0.1f64,
    ) {
        let te = TheveninParams::lossless(e, x);
        let cur = DqCurrent::new(i_d, 0.0);
        prop_assume!(x * i_d < 0.8 * e);
        let pll = PllParams::default();
        let (db, _) = equilibrium_points(&te, &cur).unwrap();
        let mut errs = Vec::new();
        for h in [1e-4, 1e-5] {
            let traj = integrate(&PllState::at_rest(db + kick), &te, &cur, &pll, 0.02, h).unwrap();
            let mut worst: f64 = 0.0;
            for w in traj.points.windows(3) {
                let (a, m, b) = (&w[0], &w[1], &w[2]);
                // The clamp puts a kink in the trajectory; differences across it are not smooth.
                if w.iter().any(|p| (p.omega1 - pll.omega0).abs() >= 0.99 * pll.freq_limit) {
                    continue;
                }
                let s = PllState::with_rate(m.delta, m.delta_dot, &te, &cur, &pll);
                let (v, acc) = swing_rhs(&s, &te, &cur, &pll).unwrap();
                worst = worst
                    .max(((b.delta - a.delta) / (2.0 * h) - v).abs())
                    .max((((b.delta_dot - a.delta_dot) / (2.0 * h) - acc) / (1.0 + acc.abs())).abs());
            }
            errs.push(worst);
        }
        // Central differences are second order in h.
        prop_assert!(errs[0] <= 1e-2, "{errs:?}");
        prop_assert!(errs[1] <= errs[0] / 50.0 + 1e-9, "{errs:?}");
    }

    #[test]
    fn larger_current_never_restabilizes(e in 0.2..1.0f64, x in 0.1..0.8f64) {
        let te = TheveninParams::lossless(e, x);
        let pll = PllParams::default();
        let top = static_limit(&te, 0.0).min(1.2);
        let mut lost = false;
        for k in 0..=12 {
            let i_d = top * k as f64 / 12.0;
            let c = integrate(&PllState::at_rest(0.0), &te, &DqCurrent::new(i_d, 0.0), &pll, 2.0, 5e-5)
                .unwrap()
                .classification;
            if lost {
                prop_assert_eq!(c, Classification::LossOfSync, "i_d = {} after a loss", i_d);
            }
            lost |= c == Classification::LossOfSync;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dynamic_limit_is_sandwiched_and_verified(e in 0.2..1.0f64, x in 0.1..0.8f64) {
        let te = TheveninParams::lossless(e, x);
        let pll = PllParams::default();
        let cfg = ImaxConfig::new(0.0);
        let res = max_stable_current(&te, &pll, 0.0, &cfg).unwrap();
        prop_assert!(res.i_max <= static_limit(&te, 0.0) + 1e-12);
        let judge = |i: f64| {
            integrate(&PllState::at_rest(0.0), &te, &DqCurrent::new(i, 0.0), &pll, 8.0 * cfg.t_end, cfg.dt)
                .unwrap()
                .classification
        };
        prop_assert_eq!(judge(res.i_max - cfg.tol), Classification::Synchronous);
        if res.i_max < cfg.i_ceiling {
            prop_assert_eq!(judge(res.i_max + cfg.tol), Classification::LossOfSync);
        }
    }
}

#[test]
fn dynamic_limit_is_monotone_in_potential_and_reactance() {
    let pll = PllParams::default();
    let cfg = ImaxConfig::new(0.0);
    let es = [0.2, 0.4, 0.6, 0.8, 1.0];
    let xs = [0.1, 0.25, 0.4, 0.55, 0.8];
    let grid: Vec<Vec<f64>> = es
        .iter()
        .map(|&e| {
            xs.iter()
                .map(|&x| {
                    max_stable_current(&TheveninParams::lossless(e, x), &pll, 0.0, &cfg)
                        .unwrap()
                        .i_max
                })
                .collect()
        })
        .collect();
    // Each value is known to within one bisection tolerance.
    for i in 0..es.len() {
        for j in 0..xs.len() {
            if j + 1 < xs.len() {
                assert!(grid[i][j + 1] <= grid[i][j] + cfg.tol, "x: {grid:?}");
            }
            if i + 1 < es.len() {
                assert!(grid[i + 1][j] + cfg.tol >= grid[i][j], "E: {grid:?}");
            }
        }
    }
}
