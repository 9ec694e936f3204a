//! Environmental entropy production per integration step.

use nalgebra::{DMatrix, DVector};

use super::EntropyError;
use crate::system::{drift_vector, SdeSystem};

/// |z| beyond 1 − `SINGULAR_EPS` counts as hitting the poles of the z form.
pub const SINGULAR_EPS: f64 = 1e-6;

/// Irreversible and reversible drift parts, and their Jacobians, under the
/// parity vector ε.
struct DriftSplit {
    irr: DVector<f64>,
    rev: DVector<f64>,
    /// ∂A^irr_i/∂x_k
    irr_jac: DMatrix<f64>,
    /// ∂A^rev_i/∂x_k
    rev_jac: DMatrix<f64>,
}

fn split_drift(system: &dyn SdeSystem, x: &[f64]) -> DriftSplit {
    let eps = system.parity();
    let a = drift_vector(system, x);
    let jac = system.drift_jacobian(x);
    if eps.iter().all(|&e| e == 1.0) {
        let n = a.len();
        return DriftSplit { irr: a, rev: DVector::zeros(n), irr_jac: jac, rev_jac: DMatrix::zeros(n, n) };
    }
    let ex: Vec<f64> = x.iter().zip(&eps).map(|(v, e)| v * e).collect();
    let a_e = drift_vector(system, &ex);
    let jac_e = system.drift_jacobian(&ex);
    let n = a.len();
    let irr = DVector::from_fn(n, |i, _| 0.5 * (a[i] + eps[i] * a_e[i]));
    let rev = DVector::from_fn(n, |i, _| 0.5 * (a[i] - eps[i] * a_e[i]));
    // d/dx_k [A_i(εx)] = J_ik(εx) ε_k
    let irr_jac = DMatrix::from_fn(n, n, |i, k| 0.5 * (jac[(i, k)] + eps[i] * eps[k] * jac_e[(i, k)]));
    let rev_jac = DMatrix::from_fn(n, n, |i, k| 0.5 * (jac[(i, k)] - eps[i] * eps[k] * jac_e[(i, k)]));
    DriftSplit { irr, rev, irr_jac, rev_jac }
}

/// dΔs_env for one step dx taken from x over dt, for any system with an
/// invertible diffusion matrix. Derivatives of D come from the system, so a
/// reduced system supplies the constraint-corrected ones.
pub fn ds_env_general(system: &dyn SdeSystem, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
    let n = x.len();
    let singular = || EntropyError::SingularDiffusion { state: x.to_vec() };
    let d = system.diffusion(x);
    let dinv = d.clone().cholesky().ok_or_else(singular)?.inverse();
    if dinv.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let grad = system.diffusion_gradient(x);
    let hess = system.diffusion_hessian(x);
    if grad.iter().chain(hess.iter().flatten()).any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(singular());
    }
    let split = split_drift(system, x);
    let (ai, ar) = (&split.irr, &split.rev);

    // v_i = Σ_m ∂D_im/∂x_m and its derivatives ∂v_i/∂x_k
    let v = DVector::from_fn(n, |i, _| (0..n).map(|m| grad[m][(i, m)]).sum::<f64>());
    let dv = DMatrix::from_fn(n, n, |i, k| (0..n).map(|m| hess[m][k][(i, m)]).sum::<f64>());
    // ∂(D⁻¹)/∂x_k = −D⁻¹ (∂D/∂x_k) D⁻¹
    let dinv_grad: Vec<DMatrix<f64>> = grad.iter().map(|g| -(&dinv * g * &dinv)).collect();

    let mut noise_part = 0.0;
    let mut dt_part = -(0..n).map(|i| split.rev_jac[(i, i)]).sum::<f64>();
    for i in 0..n {
        for j in 0..n {
            let h = 0.5 * dinv[(i, j)];
            noise_part += h * (ai[i] * dx[j] + ai[j] * dx[i]);
            noise_part -= h * (v[j] * dx[i] + v[i] * dx[j]);
            dt_part -= h * (ar[i] * ai[j] + ar[j] * ai[i]);
            dt_part += h * (ar[j] * v[i] + ar[i] * v[j]);

            let mut bracket = 0.0;
            for k in 0..n {
                let dk = &dinv_grad[k];
                // ∂_k(D⁻¹_ij A_j), ∂_k(D⁻¹_ij A_i), ∂_k(D⁻¹_ij v_j), ∂_k(D⁻¹_ij v_i)
                let t_aj = dk[(i, j)] * ai[j] + dinv[(i, j)] * split.irr_jac[(j, k)];
                let t_ai = dk[(i, j)] * ai[i] + dinv[(i, j)] * split.irr_jac[(i, k)];
                let t_vj = dk[(i, j)] * v[j] + dinv[(i, j)] * dv[(j, k)];
                let t_vi = dk[(i, j)] * v[i] + dinv[(i, j)] * dv[(i, k)];
                bracket += d[(i, k)] * t_aj + d[(j, k)] * t_ai - d[(i, k)] * t_vj - d[(j, k)] * t_vi;
            }
            dt_part += 0.5 * bracket;
        }
    }
    Ok(noise_part + dt_part * dt)
}

/// Closed-form increment in the z frame of the pure-state dynamics with
/// equal weights. The Wiener increment is recovered from the step as
/// dW = (dz + 2z dt)/√(2(1 − z⁴)).
pub fn ds_env_z(z: f64, dz: f64, dt: f64) -> Result<f64, EntropyError> {
    if !(z.abs() <= 1.0 - SINGULAR_EPS) {
        return Err(EntropyError::NearSingularity { coordinate: z });
    }
    let z2 = z * z;
    let z4 = z2 * z2;
    let one_minus = 1.0 - z4;
    let b = (2.0 * one_minus).sqrt();
    let dw = (dz + 2.0 * z * dt) / b;
    let noise = 2.0 * z * (2.0 * z2 - 1.0) / one_minus.sqrt() * 2f64.sqrt();
    let drift = 2.0 / one_minus * (-1.0 - 7.0 * z4 + 8.0 * z2 + 2.0 * z4 * z2);
    Ok(noise * dw + drift * dt)
}

/// Closed-form increment in the θ frame; regular on all of [0, π].
pub fn ds_env_theta(theta: f64, dtheta: f64, dt: f64) -> Result<f64, EntropyError> {
    if !theta.is_finite() {
        return Err(EntropyError::NearSingularity { coordinate: theta });
    }
    let d = 1.0 + theta.cos().powi(2);
    let s2 = (2.0 * theta).sin();
    let dw = (dtheta - 0.5 * s2 * dt) / (2.0 * d).sqrt();
    let noise = 3.0 * s2 / (2f64.sqrt() * d.sqrt());
    Ok(noise * dw + theta_drift(theta) * dt)
}

/// dt coefficient of the θ-frame increment.
pub fn theta_drift(theta: f64) -> f64 {
    let c2 = (2.0 * theta).cos();
    let s2 = (2.0 * theta).sin();
    (6.0 + 18.0 * c2 + 3.0 * s2 * s2) / (4.0 * (1.0 + theta.cos().powi(2)))
}

/// dt coefficient of the z-frame increment.
pub fn z_drift(z: f64) -> f64 {
    let z2 = z * z;
    2.0 * (-1.0 + 8.0 * z2 - 7.0 * z2 * z2 + 2.0 * z2 * z2 * z2) / (1.0 - z2 * z2)
}
