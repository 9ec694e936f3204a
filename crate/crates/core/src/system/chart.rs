//! Integration charts for models whose trajectories creep towards a
//! boundary where the diffusion matrix degenerates.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{drift_vector, fd_gradient, fd_gradient_of_gradient, SdeSystem, FD_OUTER_STEP, FD_STEP};

/// A smooth invertible map ξ = φ(x) from the interior of the model domain
/// onto an open set that Euler steps cannot leave. Derivatives are taken at
/// the point with chart coordinates ξ so that they stay accurate where x
/// itself has run out of digits.
pub trait Chart: Send + Sync {
    /// Writes φ(x) into `xi`; `false` if x has no image.
    fn forward(&self, x: &[f64], xi: &mut [f64]) -> bool;

    fn inverse(&self, xi: &[f64], x: &mut [f64]);

    /// J_ij = ∂ξ_i/∂x_j row-major into `jac`, and ∂²ξ_i/∂x_j∂x_k into
    /// `hess[(i * n + j) * n + k]`.
    fn derivatives(&self, xi: &[f64], jac: &mut [f64], hess: &mut [f64]);

    /// ln |det ∂ξ/∂x|.
    fn log_det_jacobian(&self, xi: &[f64]) -> f64;
}

/// ξ = x / √(1 − |x|²), sending the open unit ball onto ℝⁿ. Purifying
/// trajectories approach the sphere only asymptotically, and in ξ that
/// approach is multiplicative growth instead of an O(dt) overshoot.
#[derive(Debug, Clone, Copy, Default)]
pub struct BallChart;

impl BallChart {
    /// 1 − |x|² recovered from ξ without cancellation.
    pub fn gap(xi: &[f64]) -> f64 {
        (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).recip()
    }
}

impl Chart for BallChart {
    fn forward(&self, x: &[f64], xi: &mut [f64]) -> bool {
        let s = 1.0 - x.iter().map(|v| v * v).sum::<f64>();
        if !(s > 0.0) {
            return false;
        }
        let r = s.sqrt().recip();
        for (o, v) in xi.iter_mut().zip(x) {
            *o = v * r;
        }
        true
    }

    fn inverse(&self, xi: &[f64], x: &mut [f64]) {
        let r = Self::gap(xi).sqrt();
        for (o, v) in x.iter_mut().zip(xi) {
            *o = v * r;
        }
    }

    fn derivatives(&self, xi: &[f64], jac: &mut [f64], hess: &mut [f64]) {
        let n = xi.len();
        let s = Self::gap(xi);
        let rs = s.sqrt();
        let x: Vec<f64> = xi.iter().map(|v| v * rs).collect();
        let (s1, s3) = (rs.recip(), (s * rs).recip());
        let s5 = s3 / s;
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..n {
            for j in 0..n {
                jac[i * n + j] = delta(i, j) * s1 + x[i] * x[j] * s3;
                for k in 0..n {
                    hess[(i * n + j) * n + k] = (delta(i, j) * x[k] + delta(i, k) * x[j] + delta(j, k) * x[i]) * s3
                        + 3.0 * x[i] * x[j] * x[k] * s5;
                }
            }
        }
    }

    /// det J = s^{-(n/2 + 1)}.
    fn log_det_jacobian(&self, xi: &[f64]) -> f64 {
        -(xi.len() as f64 / 2.0 + 1.0) * Self::gap(xi).ln()
    }
}

/// Itô-transformed coefficients at ξ: J A + Σ_jk H_ijk D_jk and J B, with A
/// and B taken at φ⁻¹(ξ).
pub fn transform_coefficients<S: SdeSystem + ?Sized>(
    system: &S,
    chart: &dyn Chart,
    xi: &[f64],
    drift: &mut [f64],
    noise: &mut [f64],
) {
    let (n, m) = (xi.len(), system.noise_count());
    let mut x = vec![0.0; n];
    chart.inverse(xi, &mut x);
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n * m]);
    system.drift(&x, &mut a);
    system.noise(&x, &mut b);
    let (mut jac, mut hess) = (vec![0.0; n * n], vec![0.0; n * n * n]);
    chart.derivatives(xi, &mut jac, &mut hess);
    push_forward(n, n, m, &jac, &hess, &a, &b, drift, noise);
}

/// Itô push-forward of (A, B) on N coordinates through a map ψ into n chart
/// coordinates, given ∂ψ_i/∂x_j (n×N row-major) and ∂²ψ_i/∂x_j∂x_k.
#[allow(clippy::too_many_arguments)]
pub fn push_forward(
    n: usize,
    big_n: usize,
    m: usize,
    jac: &[f64],
    hess: &[f64],
    a: &[f64],
    b: &[f64],
    drift: &mut [f64],
    noise: &mut [f64],
) {
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..big_n {
            acc += jac[i * big_n + j] * a[j];
            for k in 0..big_n {
                let h = hess[(i * big_n + j) * big_n + k];
                if h != 0.0 {
                    let d_jk = 0.5 * (0..m).map(|c| b[j * m + c] * b[k * m + c]).sum::<f64>();
                    acc += h * d_jk;
                }
            }
        }
        drift[i] = acc;
        for c in 0..m {
            noise[i * m + c] = (0..big_n).map(|j| jac[i * big_n + j] * b[j * m + c]).sum();
        }
    }
}

/// A system re-expressed in its chart coordinates. Finite-difference steps
/// scale with |ξ|, which grows without bound near the boundary.
pub struct ChartedSystem {
    inner: Arc<dyn SdeSystem>,
}

impl ChartedSystem {
    /// `None` if `inner` has no chart.
    pub fn new(inner: Arc<dyn SdeSystem>) -> Option<Self> {
        inner.chart()?;
        Some(Self { inner })
    }

    pub fn inner(&self) -> &dyn SdeSystem {
        self.inner.as_ref()
    }

    pub fn chart_ref(&self) -> &dyn Chart {
        self.inner.chart().expect("checked in new")
    }

    pub fn to_chart(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut xi = vec![0.0; x.len()];
        self.chart_ref().forward(x, &mut xi).then_some(xi)
    }

    fn scale(xi: &[f64]) -> f64 {
        xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
    }
}

impl SdeSystem for ChartedSystem {
    fn name(&self) -> String {
        format!("{}/chart", self.inner.name())
    }

    fn labels(&self) -> Vec<String> {
        self.inner.labels().iter().map(|l| format!("xi_{l}")).collect()
    }

    fn noise_count(&self) -> usize {
        self.inner.noise_count()
    }

    fn parity(&self) -> Vec<f64> {
        self.inner.parity()
    }

    fn drift(&self, xi: &[f64], out: &mut [f64]) {
        let mut noise = vec![0.0; xi.len() * self.noise_count()];
        self.inner.chart_coefficients(xi, out, &mut noise);
    }

    fn noise(&self, xi: &[f64], out: &mut [f64]) {
        let mut drift = vec![0.0; xi.len()];
        self.inner.chart_coefficients(xi, &mut drift, out);
    }

    fn diffusion_gradient(&self, xi: &[f64]) -> Vec<DMatrix<f64>> {
        fd_gradient(xi, FD_STEP * Self::scale(xi), |p| self.diffusion(p))
    }

    fn diffusion_hessian(&self, xi: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        fd_gradient_of_gradient(xi, FD_OUTER_STEP * Self::scale(xi), |p| self.diffusion_gradient(p))
    }

    fn drift_jacobian(&self, xi: &[f64]) -> DMatrix<f64> {
        let n = xi.len();
        let cols = fd_gradient(xi, FD_STEP * Self::scale(xi), |p| {
            DMatrix::from_column_slice(n, 1, drift_vector(self, p).as_slice())
        });
        DMatrix::from_fn(n, n, |i, k| cols[k][(i, 0)])
    }
}
