//! Itô SDE systems `dxᵢ = Aᵢ(x) dt + Σⱼ Bᵢⱼ(x) dWⱼ` behind a common trait.
//!
//! Every model in the crate (the Bloch-coordinate dynamics, the pure-state
//! z and θ descriptions, the reduced (x, z) system and the scalar boundary
//! example) implements [`SdeSystem`]. Models are looked up by name through
//! [`registry::ModelRegistry`].
//!
//! Derivatives of the diffusion matrix and drift default to central finite
//! differences. Models with closed forms override them.

use nalgebra::{DMatrix, DVector};

pub mod chart;
pub mod models;
pub mod registry;

pub use chart::{BallChart, Chart, ChartedSystem};
pub use models::{PureZ, QuadraticNoise, Theta};
pub use registry::{ModelError, ModelRegistry};

/// Step for first derivatives by central differences.
pub const FD_STEP: f64 = 1e-6;
/// Step for differentiating an already differentiated field.
pub const FD_OUTER_STEP: f64 = 1e-4;

pub trait SdeSystem: Send + Sync {
    fn name(&self) -> String;

    /// Coordinate labels; their count is the dimension N.
    fn labels(&self) -> Vec<String>;

    fn dim(&self) -> usize {
        self.labels().len()
    }

    /// Number of independent Wiener processes M.
    fn noise_count(&self) -> usize;

    /// Time-reversal parity εᵢ = ±1 per coordinate. All even by default.
    fn parity(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }

    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Noise matrix B (N×M), written row-major into `out`.
    fn noise(&self, x: &[f64], out: &mut [f64]);

    /// Map a state that left the domain through discretization back onto it.
    fn project(&self, _x: &mut [f64]) {}

    fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite())
    }

    /// Domain of a one-dimensional system.
    fn interval(&self) -> Option<(f64, f64)> {
        None
    }

    /// Coordinates in which the integrator takes its steps, if not these.
    fn chart(&self) -> Option<&dyn Chart> {
        None
    }

    /// Drift and noise of the Itô equation for ξ = φ(x), at ξ. The default
    /// transforms A and B at φ⁻¹(ξ) with the chart's derivatives; systems
    /// that can avoid the cancellation this suffers near the chart boundary
    /// override it.
    fn chart_coefficients(&self, xi: &[f64], drift: &mut [f64], noise: &mut [f64]) {
        if let Some(chart) = self.chart() {
            chart::transform_coefficients(self, chart, xi, drift, noise);
        } else {
            self.drift(xi, drift);
            self.noise(xi, noise);
        }
    }

    /// D = ½BBᵀ.
    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        let b = noise_matrix(self, x);
        &b * b.transpose() * 0.5
    }

    /// ∂D/∂x_k for each coordinate k.
    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        fd_gradient(x, FD_STEP, |p| self.diffusion(p))
    }

    /// ∂²D/∂x_k∂x_l, indexed `[k][l]`.
    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        fd_gradient_of_gradient(x, FD_OUTER_STEP, |p| self.diffusion_gradient(p))
    }

    /// Jacobian with entries ∂Aᵢ/∂x_k.
    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let cols = fd_gradient(x, FD_STEP, |p| {
            let v = drift_vector(self, p);
            DMatrix::from_column_slice(n, 1, v.as_slice())
        });
        let mut jac = DMatrix::zeros(n, n);
        for (k, col) in cols.iter().enumerate() {
            jac.set_column(k, &col.column(0));
        }
        jac
    }
}

pub fn drift_vector<S: SdeSystem + ?Sized>(sys: &S, x: &[f64]) -> DVector<f64> {
    let mut out = vec![0.0; sys.dim()];
    sys.drift(x, &mut out);
    DVector::from_vec(out)
}

pub fn noise_matrix<S: SdeSystem + ?Sized>(sys: &S, x: &[f64]) -> DMatrix<f64> {
    let (n, m) = (sys.dim(), sys.noise_count());
    let mut out = vec![0.0; n * m];
    sys.noise(x, &mut out);
    DMatrix::from_row_slice(n, m, &out)
}

/// Central-difference gradient of a matrix-valued field.
pub fn fd_gradient<F>(x: &[f64], h: f64, f: F) -> Vec<DMatrix<f64>>
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let plus = f(&p);
            p[k] = x[k] - h;
            let minus = f(&p);
            p[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Central-difference derivative of a gradient field: result `[k][l]` is
/// ∂/∂x_l of component k.
pub fn fd_gradient_of_gradient<F>(x: &[f64], h: f64, grad: F) -> Vec<Vec<DMatrix<f64>>>
where
    F: Fn(&[f64]) -> Vec<DMatrix<f64>>,
{
    let n = x.len();
    let mut p = x.to_vec();
    let mut out: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(n); n];
    for l in 0..n {
        p[l] = x[l] + h;
        let plus = grad(&p);
        p[l] = x[l] - h;
        let minus = grad(&p);
        p[l] = x[l];
        for k in 0..n {
            out[k].push((&plus[k] - &minus[k]) / (2.0 * h));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-dimensional test system with polynomial coefficients and no
    /// derivative overrides, so every default path is exercised.
    struct Poly;

    impl SdeSystem for Poly {
        fn name(&self) -> String {
            "poly".into()
        }
        fn labels(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn noise_count(&self) -> usize {
            2
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[1];
            out[1] = -x[1] * x[1] * x[1];
        }
        fn noise(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[x[0], 1.0, x[1] * x[0], x[1] * x[1]]);
        }
    }

    #[test]
    fn default_derivatives_match_hand_calculus() {
        let x = [0.3, -0.7];
        let (a, b) = (x[0], x[1]);
        // D = ½ [[a²+1, a²b + b²], [a²b + b², a²b² + b⁴]]
        let d = Poly.diffusion(&x);
        assert!((d[(0, 1)] - 0.5 * (a * a * b + b * b)).abs() < 1e-14);

        let g = Poly.diffusion_gradient(&x);
        assert!((g[0][(0, 0)] - a).abs() < 1e-9);
        assert!((g[1][(0, 1)] - 0.5 * (a * a + 2.0 * b)).abs() < 1e-9);
        assert!((g[1][(1, 1)] - 0.5 * (2.0 * a * a * b + 4.0 * b * b * b)).abs() < 1e-9);

        let h = Poly.diffusion_hessian(&x);
        assert!((h[0][1][(0, 1)] - a).abs() < 1e-6);
        assert!((h[1][1][(1, 1)] - 0.5 * (2.0 * a * a + 12.0 * b * b)).abs() < 1e-6);

        let j = Poly.drift_jacobian(&x);
        assert!((j[(0, 0)] - b).abs() < 1e-9);
        assert!((j[(0, 1)] - a).abs() < 1e-9);
        assert!((j[(1, 1)] + 3.0 * b * b).abs() < 1e-9);
        assert!(j[(1, 0)].abs() < 1e-12);
    }
}
