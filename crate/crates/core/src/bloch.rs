//! Two-level state algebra: complex 2×2 matrices, Bloch vectors and the
//! pure-state angle coordinate.
//!
//! A density matrix is parameterized as ρ = ½(I + r·σ), so that
//! ρ = ½[[1+z, x−iy], [x+iy, 1−z]].

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Absolute tolerance for Bloch-ball membership, |r| ≤ 1 + tol.
pub const BLOCH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("unphysical Bloch vector: |r| = {norm} exceeds 1")]
    OutsideBlochBall { norm: f64 },
    #[error("constant of motion undefined on the pure-state manifold (y = 0)")]
    PureManifold,
    #[error("z = {0} lies outside [-1, 1]")]
    ZOutOfRange(f64),
    #[error("theta = {0} lies outside [0, pi]")]
    ThetaOutOfRange(f64),
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Complex 2×2 matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexMatrix2 {
    pub m: [[Complex64; 2]; 2],
}

impl ComplexMatrix2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Self { m: [[a, b], [c, d]] }
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn pauli_x() -> Self {
        Self::real(0.0, 1.0, 1.0, 0.0)
    }

    pub fn pauli_y() -> Self {
        Self::new(ZERO, -I, I, ZERO)
    }

    pub fn pauli_z() -> Self {
        Self::real(1.0, 0.0, 0.0, -1.0)
    }

    /// The three Pauli matrices in (x, y, z) order.
    pub fn paulis() -> [Self; 3] {
        [Self::pauli_x(), Self::pauli_y(), Self::pauli_z()]
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self::new(m[0][0].conj(), m[1][0].conj(), m[0][1].conj(), m[1][1].conj())
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let m = &self.m;
        Self::new(s * m[0][0], s * m[0][1], s * m[1][0], s * m[1][1])
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = *self - *other;
        d.m.iter()
            .flat_map(|row| row.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.dagger()) <= tol
    }

    /// Real Bloch components Tr(σᵢ M) of a matrix, together with the largest
    /// imaginary part encountered.
    pub fn bloch_components(&self) -> ([f64; 3], f64) {
        let m = &self.m;
        let tx = m[0][1] + m[1][0];
        let ty = I * (m[0][1] - m[1][0]);
        let tz = m[0][0] - m[1][1];
        let imag = tx.im.abs().max(ty.im.abs()).max(tz.im.abs());
        ([tx.re, ty.re, tz.re], imag)
    }
}

impl Add for ComplexMatrix2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (a, b) = (&self.m, &o.m);
        Self::new(a[0][0] + b[0][0], a[0][1] + b[0][1], a[1][0] + b[1][0], a[1][1] + b[1][1])
    }
}

impl Sub for ComplexMatrix2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for ComplexMatrix2 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_real(-1.0)
    }
}

impl Mul for ComplexMatrix2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (a, b) = (&self.m, &o.m);
        Self::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

/// Coherence (Bloch) vector of a two-level density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(r: &[f64]) -> Self {
        Self::new(r[0], r[1], r[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_physical(&self) -> bool {
        self.norm() <= 1.0 + BLOCH_TOL
    }

    /// Unchecked ½(I + r·σ); used where the caller already owns a valid point.
    pub(crate) fn density_matrix(&self) -> ComplexMatrix2 {
        let half = 0.5;
        ComplexMatrix2::new(
            Complex64::new(half * (1.0 + self.z), 0.0),
            Complex64::new(half * self.x, -half * self.y),
            Complex64::new(half * self.x, half * self.y),
            Complex64::new(half * (1.0 - self.z), 0.0),
        )
    }
}

/// ρ = ½(I + r·σ). Rejects vectors outside the Bloch ball.
pub fn bloch_to_rho(r: BlochVector) -> Result<ComplexMatrix2, StateError> {
    if !r.is_physical() {
        return Err(StateError::OutsideBlochBall { norm: r.norm() });
    }
    Ok(r.density_matrix())
}

/// Purity Tr ρ² = ½(1 + |r|²).
pub fn purity(r: BlochVector) -> f64 {
    0.5 * (1.0 + r.norm_squared())
}

/// The conserved quantity f = (1 − x² − z²)/y² of the raising/lowering
/// dynamics. Undefined once the state is pure (y = 0).
pub fn constant_of_motion(r: BlochVector) -> Result<f64, StateError> {
    if r.y == 0.0 {
        return Err(StateError::PureManifold);
    }
    Ok((1.0 - r.x * r.x - r.z * r.z) / (r.y * r.y))
}

/// Polar angle of a pure state on the x–z great circle, θ ∈ [0, π].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PureAngle(f64);

impl PureAngle {
    pub fn new(theta: f64) -> Result<Self, StateError> {
        if (0.0..=PI).contains(&theta) {
            Ok(Self(theta))
        } else {
            Err(StateError::ThetaOutOfRange(theta))
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// θ = arccos z.
pub fn z_to_theta(z: f64) -> Result<PureAngle, StateError> {
    if !(-1.0..=1.0).contains(&z) {
        return Err(StateError::ZOutOfRange(z));
    }
    Ok(PureAngle(z.acos()))
}

pub fn theta_to_z(theta: PureAngle) -> f64 {
    theta.0.cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rho_examples() {
        let mixed = bloch_to_rho(BlochVector::new(0.0, 0.0, 0.0)).unwrap();
        assert!(mixed.max_abs_diff(&ComplexMatrix2::identity().scale_real(0.5)) < 1e-15);

        let north = bloch_to_rho(BlochVector::new(0.0, 0.0, 1.0)).unwrap();
        assert!(north.max_abs_diff(&ComplexMatrix2::real(1.0, 0.0, 0.0, 0.0)) < 1e-15);

        let rho = bloch_to_rho(BlochVector::new(0.5, 0.5, 0.5)).unwrap();
        let expected =
            ComplexMatrix2::new(c(1.5, 0.0), c(0.5, -0.5), c(0.5, 0.5), c(0.5, 0.0)).scale_real(0.5);
        assert!(rho.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn rho_rejects_unphysical() {
        let err = bloch_to_rho(BlochVector::new(1.0, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, StateError::OutsideBlochBall { .. }));
        // within tolerance is accepted
        assert!(bloch_to_rho(BlochVector::new(1.0 + 5e-10, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn purity_examples() {
        assert_abs_diff_eq!(purity(BlochVector::new(0.0, 0.0, 0.0)), 0.5);
        assert_abs_diff_eq!(purity(BlochVector::new(0.0, 0.0, 1.0)), 1.0);
        assert_abs_diff_eq!(purity(BlochVector::new(0.5, 0.5, 0.5)), 0.875);
    }

    #[test]
    fn constant_of_motion_examples() {
        let f = |x, y, z| constant_of_motion(BlochVector::new(x, y, z)).unwrap();
        assert_abs_diff_eq!(f(0.5, 0.5, 0.5), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f(0.0, 1.0, 0.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f(0.1, 0.2, 0.3), 22.5, epsilon = 1e-12);
        assert_eq!(
            constant_of_motion(BlochVector::new(0.6, 0.0, 0.8)),
            Err(StateError::PureManifold)
        );
    }

    #[test]
    fn angle_examples() {
        assert_abs_diff_eq!(z_to_theta(1.0).unwrap().radians(), 0.0);
        assert_abs_diff_eq!(z_to_theta(0.0).unwrap().radians(), PI / 2.0);
        assert_abs_diff_eq!(z_to_theta(-1.0).unwrap().radians(), PI);
        assert!(z_to_theta(1.0 + 1e-12).is_err());
        assert!(PureAngle::new(-0.1).is_err());
    }

    fn ball_point() -> impl Strategy<Value = BlochVector> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..=1.0f64).prop_map(|(x, y, z, s)| {
            let n = (x * x + y * y + z * z).sqrt().max(1e-12);
            let r = s.cbrt() / n;
            BlochVector::new(x * r, y * r, z * r)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rho_is_hermitian_unit_trace(r in ball_point()) {
            let rho = bloch_to_rho(r).unwrap();
            prop_assert!(rho.is_hermitian(1e-15));
            prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }

        #[test]
        fn purity_matches_trace_of_square(r in ball_point()) {
            let rho = bloch_to_rho(r).unwrap();
            let tr = (rho * rho).trace();
            prop_assert!((tr.re - purity(r)).abs() < 1e-12);
            prop_assert!(tr.im.abs() < 1e-12);
        }

        #[test]
        fn bloch_components_invert_rho(r in ball_point()) {
            let (comp, imag) = bloch_to_rho(r).unwrap().bloch_components();
            prop_assert!(imag < 1e-15);
            for (a, b) in comp.iter().zip(r.to_array()) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }

        #[test]
        fn bloch_components_match_pauli_traces(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64) {
            let m = ComplexMatrix2::new(Complex64::new(a, b), Complex64::new(c, d), Complex64::new(d, a), Complex64::new(b, c));
            let (fast, _) = m.bloch_components();
            for (k, s) in ComplexMatrix2::paulis().iter().enumerate() {
                let t = (*s * m).trace();
                prop_assert!((t.re - fast[k]).abs() < 1e-14);
            }
        }

        #[test]
        fn z_theta_round_trip(z in -1.0..=1.0f64) {
            let back = theta_to_z(z_to_theta(z).unwrap());
            prop_assert!((back - z).abs() < 1e-12);
        }
    }
}
