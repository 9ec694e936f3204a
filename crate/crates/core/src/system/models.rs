//! One-dimensional models with closed-form coefficients and derivatives.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::SdeSystem;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Pure-state relaxation on the x–z great circle in the z coordinate:
///
/// dz = −(γ + 2z) dt + √(2(1 − z²)(1 + γz + z²)) dW
///
/// γ = 0 is the equally weighted case, γ ≠ 0 weights the two channels by
/// (1 ∓ γ/2).
#[derive(Debug, Clone, Copy)]
pub struct PureZ {
    gamma: f64,
}

impl PureZ {
    /// Requires |γ| < 2, otherwise the diffusion coefficient changes sign
    /// inside (−1, 1).
    pub fn new(gamma: f64) -> Option<Self> {
        (gamma.is_finite() && gamma.abs() < 2.0).then_some(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// D(z) = (1 − z²)(1 + γz + z²) = 1 + γz − γz³ − z⁴.
    pub fn diffusion_coefficient(&self, z: f64) -> f64 {
        let g = self.gamma;
        1.0 + g * z - g * z * z * z - z * z * z * z
    }
}

impl SdeSystem for PureZ {
    fn name(&self) -> String {
        format!("pure-z:{}", self.gamma)
    }

    fn labels(&self) -> Vec<String> {
        vec!["z".into()]
    }

    fn dim(&self) -> usize {
        1
    }

    fn noise_count(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -(self.gamma + 2.0 * x[0]);
    }

    fn noise(&self, x: &[f64], out: &mut [f64]) {
        // clamped: 2D(z) dips below zero when |z| overshoots 1
        out[0] = (2.0 * self.diffusion_coefficient(x[0])).max(0.0).sqrt();
    }

    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].clamp(-1.0, 1.0);
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        (-1.0..=1.0).contains(&x[0])
    }

    fn interval(&self) -> Option<(f64, f64)> {
        Some((-1.0, 1.0))
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        scalar(self.diffusion_coefficient(x[0]))
    }

    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let (z, g) = (x[0], self.gamma);
        vec![scalar(g - 3.0 * g * z * z - 4.0 * z * z * z)]
    }

    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let (z, g) = (x[0], self.gamma);
        vec![vec![scalar(-6.0 * g * z - 12.0 * z * z)]]
    }

    fn drift_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        scalar(-2.0)
    }
}

/// Pure-state relaxation in the polar angle θ = arccos z:
///
/// dθ = ½ sin 2θ dt + √(2(1 + cos²θ)) dW
///
/// The noise does not vanish at θ = 0, π; those ends are reflecting.
#[derive(Debug, Clone, Copy, Default)]
pub struct Theta;

impl Theta {
    pub fn diffusion_coefficient(theta: f64) -> f64 {
        let c = theta.cos();
        1.0 + c * c
    }
}

impl SdeSystem for Theta {
    fn name(&self) -> String {
        "pure-theta".into()
    }

    fn labels(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn dim(&self) -> usize {
        1
    }

    fn noise_count(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * (2.0 * x[0]).sin();
    }

    fn noise(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (2.0 * Self::diffusion_coefficient(x[0])).sqrt();
    }

    fn project(&self, x: &mut [f64]) {
        let mut t = x[0];
        // a single Euler step never crosses more than one wall
        if t < 0.0 {
            t = -t;
        }
        if t > PI {
            t = 2.0 * PI - t;
        }
        x[0] = t.clamp(0.0, PI);
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        (0.0..=PI).contains(&x[0])
    }

    fn interval(&self) -> Option<(f64, f64)> {
        Some((0.0, PI))
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        scalar(Self::diffusion_coefficient(x[0]))
    }

    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        vec![scalar(-(2.0 * x[0]).sin())]
    }

    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![scalar(-2.0 * (2.0 * x[0]).cos())]]
    }

    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        scalar((2.0 * x[0]).cos())
    }
}

/// Scalar process dx = x dt + x² dW on x ≥ 0, whose stationary density
/// 4π^{-1/2} x⁻⁴ exp(−1/x²) leaves a non-vanishing D·p at infinity.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticNoise;

impl SdeSystem for QuadraticNoise {
    fn name(&self) -> String {
        "quadratic-noise".into()
    }

    fn labels(&self) -> Vec<String> {
        vec!["x".into()]
    }

    fn dim(&self) -> usize {
        1
    }

    fn noise_count(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn noise(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0];
    }

    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].abs();
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        x[0] >= 0.0 && x[0].is_finite()
    }

    fn interval(&self) -> Option<(f64, f64)> {
        Some((0.0, f64::INFINITY))
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        scalar(0.5 * x[0].powi(4))
    }

    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        vec![scalar(2.0 * x[0].powi(3))]
    }

    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![scalar(6.0 * x[0] * x[0])]]
    }

    fn drift_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        scalar(1.0)
    }
}
