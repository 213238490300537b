//! Shared domain types: phasors, PMU samples, Thevenin parameters, the
//! per-unit base and the structured 2×2 matrix of the impedance relation.
//!
//! # Sign convention
//!
//! Every current phasor in this crate is the current injected by the
//! converter into the grid at the PCC. With a Thevenin equivalent `E`
//! behind `Z = r + jx` the PCC voltage is
//!
//! ```text
//! V = E + Z·I
//! ```
//!
//! so that `dV = Z·dI + dE` for two samples and `Z = dV/dI` when `dE = 0`.
//! The estimator, the simulator and the PLL model all use this convention.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magnitude below which a phasor is treated as zero in a division.
pub const PHASOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CoreError {
    #[error("division by a phasor of magnitude {0:e}")]
    DivisionBySingularPhasor(f64),
}

/// A complex per-unit quantity in the synchronous reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phasor {
    pub re: f64,
    pub im: f64,
}

impl Phasor {
    pub const ZERO: Phasor = Phasor { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn from_polar(mag: f64, ang: f64) -> Self {
        Self::new(mag * ang.cos(), mag * ang.sin())
    }

    pub fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Angle in (−π, π].
    pub fn angle(self) -> f64 {
        let a = self.im.atan2(self.re);
        if a <= -PI {
            PI
        } else {
            a
        }
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    /// Rotates by `ang` radians.
    pub fn rotate(self, ang: f64) -> Self {
        self * Phasor::from_polar(1.0, ang)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl From<Complex64> for Phasor {
    fn from(c: Complex64) -> Self {
        Self::new(c.re, c.im)
    }
}

impl From<Phasor> for Complex64 {
    fn from(p: Phasor) -> Self {
        Complex64::new(p.re, p.im)
    }
}

impl Add for Phasor {
    type Output = Phasor;
    fn add(self, o: Phasor) -> Phasor {
        Phasor::new(self.re + o.re, self.im + o.im)
    }
}

impl AddAssign for Phasor {
    fn add_assign(&mut self, o: Phasor) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl Sub for Phasor {
    type Output = Phasor;
    fn sub(self, o: Phasor) -> Phasor {
        Phasor::new(self.re - o.re, self.im - o.im)
    }
}

impl Neg for Phasor {
    type Output = Phasor;
    fn neg(self) -> Phasor {
        Phasor::new(-self.re, -self.im)
    }
}

impl Mul for Phasor {
    type Output = Phasor;
    fn mul(self, o: Phasor) -> Phasor {
        Phasor::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

impl Mul<f64> for Phasor {
    type Output = Phasor;
    fn mul(self, k: f64) -> Phasor {
        Phasor::new(self.re * k, self.im * k)
    }
}

impl Div<f64> for Phasor {
    type Output = Phasor;
    fn div(self, k: f64) -> Phasor {
        Phasor::new(self.re / k, self.im / k)
    }
}

/// Complex quotient `num / den`.
pub fn phasor_div(num: Phasor, den: Phasor) -> Result<Phasor, CoreError> {
    let m2 = den.re * den.re + den.im * den.im;
    let mag = m2.sqrt();
    if mag < PHASOR_EPS {
        return Err(CoreError::DivisionBySingularPhasor(mag));
    }
    Ok(Phasor::new(
        (num.re * den.re + num.im * den.im) / m2,
        (num.im * den.re - num.re * den.im) / m2,
    ))
}

/// Timestamped PCC voltage and injected current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmuSample {
    pub t: f64,
    pub v: Phasor,
    pub i: Phasor,
}

/// Equivalent potential behind a series impedance `r + jx`, all in pu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheveninParams {
    pub e: Phasor,
    pub r: f64,
    pub x: f64,
}

impl TheveninParams {
    pub fn new(e: Phasor, r: f64, x: f64) -> Self {
        Self { e, r, x }
    }

    /// Real potential of magnitude `e_mag` behind a lossless reactance.
    pub fn lossless(e_mag: f64, x: f64) -> Self {
        Self::new(Phasor::new(e_mag, 0.0), 0.0, x)
    }

    pub fn e_mag(&self) -> f64 {
        self.e.magnitude()
    }

    pub fn z(&self) -> Phasor {
        Phasor::new(self.r, self.x)
    }

    /// PCC voltage for injected current `i`.
    pub fn terminal_voltage(&self, i: Phasor) -> Phasor {
        self.e + self.z() * i
    }

    pub fn is_finite(&self) -> bool {
        self.e.is_finite() && self.r.is_finite() && self.x.is_finite()
    }
}

/// System base for per-unit conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub f_nom_hz: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_base_mva: 750.0,
            v_base_kv: 230.0,
            f_nom_hz: 50.0,
        }
    }
}

impl PerUnitBase {
    pub fn is_valid(&self) -> bool {
        [self.s_base_mva, self.v_base_kv, self.f_nom_hz]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Base impedance in ohms.
    pub fn z_base(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.s_base_mva
    }

    /// Nominal angular frequency in rad/s.
    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f_nom_hz
    }

    pub fn reactance_pu(&self, l_henries: f64) -> f64 {
        reactance_pu(l_henries, self)
    }

    pub fn henries(&self, x_pu: f64) -> f64 {
        x_pu * self.z_base() / self.omega0()
    }
}

/// Per-unit reactance of an inductance at the nominal frequency.
pub fn reactance_pu(l_henries: f64, base: &PerUnitBase) -> f64 {
    debug_assert!(l_henries >= 0.0);
    base.omega0() * l_henries / base.z_base()
}

/// Real 2×2 matrix. Built from a phasor `dI` it has the structure
/// `[[dI_R, −dI_I], [dI_I, dI_R]]`, which maps `(r, x)` to `Re/Im` of `dI·Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2 {
    pub m: [[f64; 2]; 2],
}

impl Matrix2 {
    pub fn new(m: [[f64; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn from_phasor(di: Phasor) -> Self {
        Self::new([[di.re, -di.im], [di.im, di.re]])
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Matrix2> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let [[a, b], [c, d]] = self.m;
        Some(Self::new([[d / det, -b / det], [-c / det, a / det]]))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        // σ_max = (‖(a+d, c−b)‖ + ‖(a−d, b+c)‖)/2; free of the cancellation
        // the Frobenius/determinant form suffers near conformal matrices.
        0.5 * ((a + d).hypot(c - b) + (a - d).hypot(b + c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_base() -> PerUnitBase {
        PerUnitBase::default()
    }

    #[test]
    fn reactance_zero_inductance() {
        assert_eq!(reactance_pu(0.0, &paper_base()), 0.0);
    }

    #[test]
    fn reactance_of_fault_inductance() {
        // z_base = 230^2 / 750 = 70.5333.. ohm
        let expected = 2.0 * PI * 50.0 * 0.107 / (230.0 * 230.0 / 750.0);
        let x = reactance_pu(0.107, &paper_base());
        assert!((x - expected).abs() < 1e-15);
        assert!((x - 0.4766).abs() < 1e-4);
    }

    #[test]
    fn reactance_linear_in_frequency() {
        let b60 = PerUnitBase {
            f_nom_hz: 60.0,
            ..paper_base()
        };
        let x50 = reactance_pu(0.107, &paper_base());
        let x60 = reactance_pu(0.107, &b60);
        assert!((x60 / x50 - 1.2).abs() < 1e-12);
    }

    #[test]
    fn henries_round_trip() {
        let b = paper_base();
        for l in [1e-4, 0.01, 0.107, 0.5, 3.0] {
            let back = b.henries(b.reactance_pu(l));
            assert!(((back - l) / l).abs() < 1e-12);
        }
    }

    #[test]
    fn phasor_div_examples() {
        let one = Phasor::new(1.0, 0.0);
        assert_eq!(phasor_div(one, one).unwrap(), one);
        let q = phasor_div(Phasor::new(0.01, 0.02), Phasor::new(0.1, 0.0)).unwrap();
        assert!((q.re - 0.1).abs() < 1e-15 && (q.im - 0.2).abs() < 1e-15);
    }

    #[test]
    fn phasor_div_rejects_zero() {
        let err = phasor_div(Phasor::new(1.0, 0.0), Phasor::new(1e-13, 0.0));
        assert!(matches!(err, Err(CoreError::DivisionBySingularPhasor(_))));
    }

    #[test]
    fn angle_range_is_half_open() {
        assert_eq!(Phasor::new(-1.0, 0.0).angle(), PI);
        assert_eq!(Phasor::new(-1.0, -0.0).angle(), PI);
        assert!((Phasor::new(0.0, -1.0).angle() + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_structure_matches_complex_product() {
        let di = Phasor::new(0.3, -0.7);
        let z = Phasor::new(0.05, 0.48);
        let prod = di * z;
        let mz = Matrix2::from_phasor(di).apply([z.re, z.im]);
        assert!((mz[0] - prod.re).abs() < 1e-15 && (mz[1] - prod.im).abs() < 1e-15);
        assert!((Matrix2::from_phasor(di).determinant() - (0.09 + 0.49)).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix2::new([[3.0, 0.0], [0.0, -0.5]]);
        assert!((m.spectral_norm() - 3.0).abs() < 1e-15);
        assert!((m.inverse().unwrap().spectral_norm() - 2.0).abs() < 1e-15);
    }
}
