//! Analytic error bounds for single-pair impedance solves under a drifting
//! Thevenin potential.

use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// Flux-decay generator quantities bounding the potential drift per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// d-axis transient open-circuit time constant, s.
    pub t_d0p: f64,
    /// Largest no-load potential change, pu.
    pub d_efd_max: f64,
    /// Sampling interval, s.
    pub dt: f64,
}

/// Largest potential change over one sampling interval:
/// `ΔE_fd,max · ΔT / T′d0`.
pub fn de_max(b: &BoundInputs) -> f64 {
    debug_assert!(b.t_d0p > 0.0);
    b.d_efd_max * b.dt / b.t_d0p
}

/// Voltage change needed for a relative impedance error below `k_percent`.
pub fn required_dv(k_percent: f64, de_max: f64) -> f64 {
    debug_assert!(k_percent > 0.0);
    (100.0 / k_percent + 1.0) * de_max
}

/// Upper bound `|dE| / (|dV| − |dE|)` of the relative impedance error.
pub fn relative_error_bound(dv_norm: f64, de_norm: f64) -> Result<f64, EstimatorError> {
    if !(dv_norm > de_norm && de_norm >= 0.0) {
        return Err(EstimatorError::BoundUndefined {
            dv: dv_norm,
            de: de_norm,
        });
    }
    Ok(de_norm / (dv_norm - de_norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn de_max_examples() {
        let b = BoundInputs {
            t_d0p: 5.0,
            d_efd_max: 5.0,
            dt: 0.01,
        };
        assert!((de_max(&b) - 0.01).abs() < 1e-12);
        assert_eq!(de_max(&BoundInputs { dt: 0.0, ..b }), 0.0);
        let doubled = BoundInputs {
            d_efd_max: 10.0,
            ..b
        };
        assert!((de_max(&doubled) - 2.0 * de_max(&b)).abs() < 1e-15);
    }

    #[test]
    fn required_dv_examples() {
        assert!((required_dv(10.0, 0.01) - 0.11).abs() < 1e-12);
        assert!((required_dv(100.0, 0.01) - 0.02).abs() < 1e-12);
        assert_eq!(required_dv(7.0, 0.0), 0.0);
    }

    #[test]
    fn relative_error_bound_examples() {
        assert!((relative_error_bound(0.11, 0.01).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(relative_error_bound(0.3, 0.0).unwrap(), 0.0);
        assert!((relative_error_bound(0.02, 0.01).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            relative_error_bound(0.01, 0.01),
            Err(EstimatorError::BoundUndefined { .. })
        ));
    }
}
