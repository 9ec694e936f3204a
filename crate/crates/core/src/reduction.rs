//! Elimination of spectator coordinates when the diffusion matrix is
//! singular.
//!
//! A constant of motion f confines the dynamics to a level set, and ∇f spans
//! the null space of D. Split the coordinates into dynamical ones (kept) and
//! spectators (reconstructed from the constraint). Along the level set the
//! spectators move with dx_s = R dx_d where R = −P⁻¹Q, P and Q being the
//! spectator and dynamical blocks of the stacked null vectors. Derivatives of
//! the retained fields then pick up the chain-rule correction
//!
//! dF/dx_m = ∂F/∂x_m + Σ_l (∂F/∂x_l) R_lm.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::null_eigenvectors;
use crate::system::{
    chart::{push_forward, transform_coefficients},
    drift_vector, fd_gradient_of_gradient, noise_matrix, BallChart, Chart, SdeSystem, FD_OUTER_STEP,
};

/// Null-space threshold relative to the largest eigenvalue of D.
pub const NULL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("{spectators} spectators given, but N − M = {expected}")]
    SpectatorCount { spectators: usize, expected: usize },
    #[error("spectator index {0} out of range")]
    BadIndex(usize),
    #[error("expected {expected} null eigenvectors of D at {point:?}, found {found}")]
    NullSpace { expected: usize, found: usize, point: Vec<f64> },
    #[error("null-space rank at {0:?} is ambiguous")]
    AmbiguousRank(Vec<f64>),
    #[error("spectator block P is singular at {0:?}")]
    SingularP(Vec<f64>),
    #[error("point {0:?} lies outside the reduced domain")]
    OutsideDomain(Vec<f64>),
}

/// D = ½BBᵀ at `point`.
pub fn diffusion_matrix(system: &dyn SdeSystem, point: &[f64]) -> DMatrix<f64> {
    let b = noise_matrix(system, point);
    &b * b.transpose() * 0.5
}

/// Recovers spectator coordinates from the dynamical ones.
pub trait Spectators: Send + Sync {
    fn reconstruct(&self, dynamical: &[f64]) -> Vec<f64>;

    fn project(&self, _dynamical: &mut [f64]) {}

    fn in_domain(&self, dynamical: &[f64]) -> bool {
        dynamical.iter().all(|v| v.is_finite())
    }

    fn chart(&self) -> Option<&dyn Chart> {
        None
    }

    /// Distance from a dynamical point to the edge of the reduced domain.
    fn boundary_distance(&self, _dynamical: &[f64]) -> f64 {
        f64::INFINITY
    }

    /// The chart written as a function ψ of dynamical and spectator
    /// coordinates together, at the point with chart coordinates ξ. Pushing
    /// the parent's coefficients through ψ avoids differentiating the
    /// constraint numerically.
    fn chart_lift(&self, _xi: &[f64]) -> Option<ChartLift> {
        None
    }
}

/// A chart expressed on the full coordinates, ordered dynamical then
/// spectator: ∂ψ_i/∂u_j row-major and ∂²ψ_i/∂u_j∂u_k.
#[derive(Debug, Clone)]
pub struct ChartLift {
    pub dynamical: Vec<f64>,
    pub spectators: Vec<f64>,
    pub jac: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Identity reduction: nothing to reconstruct.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSpectators;

impl Spectators for NoSpectators {
    fn reconstruct(&self, _dynamical: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// y recovered from (x, z) on the level set (1 − x² − z²)/y² = f₀, taking the
/// positive branch.
#[derive(Debug, Clone, Copy)]
pub struct BlochY {
    pub f0: f64,
}

impl Spectators for BlochY {
    fn reconstruct(&self, d: &[f64]) -> Vec<f64> {
        let s = 1.0 - d[0] * d[0] - d[1] * d[1];
        vec![(s.max(0.0) / self.f0).sqrt()]
    }

    fn project(&self, d: &mut [f64]) {
        let n2 = d[0] * d[0] + d[1] * d[1];
        if n2 > 1.0 {
            let s = n2.sqrt();
            d[0] /= s;
            d[1] /= s;
        }
    }

    fn in_domain(&self, d: &[f64]) -> bool {
        d.iter().all(|v| v.is_finite()) && d[0] * d[0] + d[1] * d[1] <= 1.0 + crate::bloch::BLOCH_TOL
    }

    fn chart(&self) -> Option<&dyn Chart> {
        Some(&BallChart)
    }

    fn boundary_distance(&self, d: &[f64]) -> f64 {
        1.0 - d[0].hypot(d[1])
    }

    /// On the level set ξ = (x, z)/√(1 − x² − z²) = (x, z)/(√f₀ y), a ratio
    /// of parent coordinates whose noise stays resolved as y → 0.
    fn chart_lift(&self, xi: &[f64]) -> Option<ChartLift> {
        let s = BallChart::gap(xi);
        let r = s.sqrt();
        let d: Vec<f64> = xi.iter().map(|v| v * r).collect();
        // ordering (x, z, y); √f₀ y = r
        let mut jac = vec![0.0; 2 * 3];
        let mut hess = vec![0.0; 2 * 9];
        let sf = self.f0.sqrt();
        for i in 0..2 {
            jac[i * 3 + i] = 1.0 / r;
            jac[i * 3 + 2] = -d[i] * sf / s;
            hess[(i * 3 + i) * 3 + 2] = -sf / s;
            hess[(i * 3 + 2) * 3 + i] = -sf / s;
            hess[(i * 3 + 2) * 3 + 2] = 2.0 * d[i] * self.f0 / (s * r);
        }
        Some(ChartLift { dynamical: d, spectators: vec![r / sf], jac, hess })
    }
}

/// Coordinate partition and reconstruction for one reduction.
#[derive(Clone)]
pub struct ReductionMap {
    pub dynamical: Vec<usize>,
    pub spectators: Vec<usize>,
    reconstruction: Arc<dyn Spectators>,
}

impl std::fmt::Debug for ReductionMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReductionMap")
            .field("dynamical", &self.dynamical)
            .field("spectators", &self.spectators)
            .finish()
    }
}

/// P, Q and R = −P⁻¹Q at one point.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub null_vectors: Vec<DVector<f64>>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ReductionMap {
    pub fn is_identity(&self) -> bool {
        self.spectators.is_empty()
    }

    /// Full coordinate vector for a dynamical point.
    pub fn full_point(&self, dynamical: &[f64]) -> Vec<f64> {
        self.assemble(dynamical, &self.reconstruction.reconstruct(dynamical))
    }

    fn assemble(&self, dynamical: &[f64], spectators: &[f64]) -> Vec<f64> {
        let n = self.dynamical.len() + self.spectators.len();
        let mut full = vec![0.0; n];
        for (&i, &v) in self.dynamical.iter().zip(dynamical) {
            full[i] = v;
        }
        for (&i, &v) in self.spectators.iter().zip(spectators) {
            full[i] = v;
        }
        full
    }

    /// Null vectors of the full D at `full`, and the blocks built from them.
    pub fn blocks(&self, system: &dyn SdeSystem, full: &[f64]) -> Result<Blocks, ReductionError> {
        let l = self.spectators.len();
        let m = self.dynamical.len();
        if l == 0 {
            return Ok(Blocks {
                null_vectors: Vec::new(),
                p: DMatrix::zeros(0, 0),
                q: DMatrix::zeros(0, m),
                r: DMatrix::zeros(0, m),
            });
        }
        let ns = null_eigenvectors(&diffusion_matrix(system, full), NULL_TOL);
        if ns.ambiguous {
            return Err(ReductionError::AmbiguousRank(full.to_vec()));
        }
        if ns.vectors.len() != l {
            return Err(ReductionError::NullSpace { expected: l, found: ns.vectors.len(), point: full.to_vec() });
        }
        let p = DMatrix::from_fn(l, l, |a, b| ns.vectors[a][self.spectators[b]]);
        let q = DMatrix::from_fn(l, m, |a, k| ns.vectors[a][self.dynamical[k]]);
        let lu = p.clone().lu();
        // the null vectors are unit length, so |det P| is already scale-free
        if lu.determinant().abs() < 1e-12 {
            return Err(ReductionError::SingularP(full.to_vec()));
        }
        let r = -lu.solve(&q).ok_or_else(|| ReductionError::SingularP(full.to_vec()))?;
        Ok(Blocks { null_vectors: ns.vectors, p, q, r })
    }

    /// Chain-rule derivative along the constraint surface: `grads[k]` holds
    /// ∂F/∂x_k over all N coordinates; the result has one entry per
    /// dynamical coordinate.
    pub fn modified_derivative(&self, grads: &[DMatrix<f64>], r: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.dynamical
            .iter()
            .enumerate()
            .map(|(mi, &m)| {
                let mut g = grads[m].clone();
                for (li, &l) in self.spectators.iter().enumerate() {
                    g += &grads[l] * r[(li, mi)];
                }
                g
            })
            .collect()
    }

    fn restrict(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.dynamical.len();
        DMatrix::from_fn(m, m, |i, j| mat[(self.dynamical[i], self.dynamical[j])])
    }
}

/// The SDE in the dynamical coordinates alone.
#[derive(Clone)]
pub struct ReducedSystem {
    parent: Arc<dyn SdeSystem>,
    map: ReductionMap,
}

impl std::fmt::Debug for ReducedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReducedSystem").field("parent", &self.parent.name()).field("map", &self.map).finish()
    }
}

impl ReducedSystem {
    pub fn map(&self) -> &ReductionMap {
        &self.map
    }

    pub fn parent(&self) -> &Arc<dyn SdeSystem> {
        &self.parent
    }

    /// R at a dynamical point.
    pub fn r_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, ReductionError> {
        let full = self.map.full_point(x);
        Ok(self.map.blocks(self.parent.as_ref(), &full)?.r)
    }

    fn nan_matrices(&self) -> Vec<DMatrix<f64>> {
        let m = self.map.dynamical.len();
        vec![DMatrix::from_element(m, m, f64::NAN); m]
    }
}

impl SdeSystem for ReducedSystem {
    fn name(&self) -> String {
        format!("{}/reduced", self.parent.name())
    }

    fn labels(&self) -> Vec<String> {
        let all = self.parent.labels();
        self.map.dynamical.iter().map(|&i| all[i].clone()).collect()
    }

    fn dim(&self) -> usize {
        self.map.dynamical.len()
    }

    fn noise_count(&self) -> usize {
        self.parent.noise_count()
    }

    fn parity(&self) -> Vec<f64> {
        let eps = self.parent.parity();
        self.map.dynamical.iter().map(|&i| eps[i]).collect()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let a = drift_vector(self.parent.as_ref(), &self.map.full_point(x));
        for (o, &i) in out.iter_mut().zip(&self.map.dynamical) {
            *o = a[i];
        }
    }

    fn noise(&self, x: &[f64], out: &mut [f64]) {
        let b = noise_matrix(self.parent.as_ref(), &self.map.full_point(x));
        let mcols = b.ncols();
        for (row, &i) in self.map.dynamical.iter().enumerate() {
            for j in 0..mcols {
                out[row * mcols + j] = b[(i, j)];
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        self.map.reconstruction.project(x);
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.map.reconstruction.in_domain(x)
    }

    fn chart(&self) -> Option<&dyn Chart> {
        if self.map.is_identity() {
            self.parent.chart()
        } else {
            self.map.reconstruction.chart()
        }
    }

    fn chart_coefficients(&self, xi: &[f64], drift: &mut [f64], noise: &mut [f64]) {
        let Some(chart) = self.chart() else {
            self.drift(xi, drift);
            self.noise(xi, noise);
            return;
        };
        let Some(lift) = self.map.reconstruction.chart_lift(xi) else {
            return transform_coefficients(self, chart, xi, drift, noise);
        };
        let full = self.map.assemble(&lift.dynamical, &lift.spectators);
        let a = drift_vector(self.parent.as_ref(), &full);
        let b = noise_matrix(self.parent.as_ref(), &full);
        let order: Vec<usize> = self.map.dynamical.iter().chain(&self.map.spectators).copied().collect();
        let m = b.ncols();
        let a_u: Vec<f64> = order.iter().map(|&i| a[i]).collect();
        let b_u: Vec<f64> = order.iter().flat_map(|&i| (0..m).map(move |c| (i, c))).map(|(i, c)| b[(i, c)]).collect();
        push_forward(xi.len(), order.len(), m, &lift.jac, &lift.hess, &a_u, &b_u, drift, noise);
    }

    fn interval(&self) -> Option<(f64, f64)> {
        if self.map.is_identity() {
            self.parent.interval()
        } else {
            None
        }
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        self.map.restrict(&self.parent.diffusion(&self.map.full_point(x)))
    }

    /// NaN entries where P is singular.
    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let full = self.map.full_point(x);
        let Ok(blocks) = self.map.blocks(self.parent.as_ref(), &full) else {
            return self.nan_matrices();
        };
        let grads: Vec<DMatrix<f64>> =
            self.parent.diffusion_gradient(&full).iter().map(|g| self.map.restrict(g)).collect();
        self.map.modified_derivative(&grads, &blocks.r)
    }

    /// Differentiates the modified gradient with a stencil that stays
    /// inside the domain.
    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let h = FD_OUTER_STEP.min(1e-2 * self.map.reconstruction.boundary_distance(x));
        fd_gradient_of_gradient(x, h, |p| self.diffusion_gradient(p))
    }

    fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let full = self.map.full_point(x);
        let m = self.dim();
        let Ok(blocks) = self.map.blocks(self.parent.as_ref(), &full) else {
            return DMatrix::from_element(m, m, f64::NAN);
        };
        let jac = self.parent.drift_jacobian(&full);
        let cols: Vec<DMatrix<f64>> = (0..jac.ncols())
            .map(|k| DMatrix::from_fn(m, 1, |i, _| jac[(self.map.dynamical[i], k)]))
            .collect();
        let modified = self.map.modified_derivative(&cols, &blocks.r);
        DMatrix::from_fn(m, m, |i, k| modified[k][(i, 0)])
    }
}

/// Drop `spectators` from `system`. `anchor` is a dynamical point at which P
/// must be invertible.
pub fn reduce(
    system: Arc<dyn SdeSystem>,
    spectators: &[usize],
    reconstruction: Arc<dyn Spectators>,
    anchor: &[f64],
) -> Result<ReducedSystem, ReductionError> {
    let n = system.dim();
    let expected = n.saturating_sub(system.noise_count());
    if spectators.len() != expected {
        return Err(ReductionError::SpectatorCount { spectators: spectators.len(), expected });
    }
    if let Some(&bad) = spectators.iter().find(|&&i| i >= n) {
        return Err(ReductionError::BadIndex(bad));
    }
    let mut spectators = spectators.to_vec();
    spectators.sort_unstable();
    spectators.dedup();
    if spectators.len() != expected {
        return Err(ReductionError::SpectatorCount { spectators: spectators.len(), expected });
    }
    let dynamical: Vec<usize> = (0..n).filter(|i| !spectators.contains(i)).collect();
    let map = ReductionMap { dynamical, spectators, reconstruction };
    if !map.reconstruction.in_domain(anchor) {
        return Err(ReductionError::OutsideDomain(anchor.to_vec()));
    }
    let full = map.full_point(anchor);
    map.blocks(system.as_ref(), &full)?;
    Ok(ReducedSystem { parent: system, map })
}

/// The Bloch dynamics in (x, z) on the level set f = f₀, with y as the
/// spectator.
pub fn reduce_bloch_xz(system: Arc<dyn SdeSystem>, f0: f64, anchor: [f64; 2]) -> Result<ReducedSystem, ReductionError> {
    reduce(system, &[1], Arc::new(BlochY { f0 }), &anchor)
}

/// Itô differential of a scalar field along the SDE at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantResidual {
    /// Σᵢ ∂ᵢf Aᵢ + Σᵢⱼ ∂ᵢ∂ⱼf Dᵢⱼ.
    pub drift: f64,
    /// Σᵢ ∂ᵢf Bᵢⱼ per noise channel j.
    pub noise: Vec<f64>,
}

impl ConstantResidual {
    pub fn max_abs(&self) -> f64 {
        self.noise.iter().fold(self.drift.abs(), |m, v| m.max(v.abs()))
    }
}

const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];

/// Residuals of df for a scalar field f. First derivatives use fourth-order
/// central differences with step `h`; second derivatives use the same stencil
/// twice with step 100h, which keeps roundoff below the truncation error.
pub fn verify_constant<F>(system: &dyn SdeSystem, f: F, point: &[f64], h: f64) -> ConstantResidual
where
    F: Fn(&[f64]) -> f64,
{
    let n = point.len();
    let mut p = point.to_vec();
    let grad: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (s, w) in STENCIL {
                p[i] = point[i] + s * h;
                acc += w * f(&p);
            }
            p[i] = point[i];
            acc / (12.0 * h)
        })
        .collect();

    let h2 = 100.0 * h;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            if i == j {
                // f'' = (−f₋₂ + 16f₋₁ − 30f₀ + 16f₁ − f₂)/(12h²)
                for (s, w) in [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)] {
                    p[i] = point[i] + s * h2;
                    acc += w * f(&p);
                }
                acc /= 12.0 * h2 * h2;
            } else {
                for (si, wi) in STENCIL {
                    for (sj, wj) in STENCIL {
                        p[i] = point[i] + si * h2;
                        p[j] = point[j] + sj * h2;
                        acc += wi * wj * f(&p);
                    }
                }
                acc /= 144.0 * h2 * h2;
            }
            p[i] = point[i];
            p[j] = point[j];
            hess[(i, j)] = acc;
            hess[(j, i)] = acc;
        }
    }

    let a = drift_vector(system, point);
    let b = noise_matrix(system, point);
    let d = &b * b.transpose() * 0.5;
    let g = DVector::from_vec(grad);
    let drift = g.dot(&a) + hess.component_mul(&d).sum();
    let noise = (g.transpose() * &b).iter().copied().collect();
    ConstantResidual { drift, noise }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{raising_lowering, raising_lowering_diffusion};
    use crate::system::{fd_gradient, PureZ};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bloch() -> Arc<dyn SdeSystem> {
        Arc::new(raising_lowering())
    }

    fn f_motion(r: &[f64]) -> f64 {
        (1.0 - r[0] * r[0] - r[2] * r[2]) / (r[1] * r[1])
    }

    /// Closed-form reduced diffusion matrix in (x, z).
    fn d_red(x: f64, z: f64) -> [[f64; 2]; 2] {
        let off = x * z * (x * x - 2.0);
        [[x.powi(4) - 2.0 * x * x + z * z + 1.0, off], [off, x * x * (z * z + 1.0)]]
    }

    /// Its partial derivatives, `[k]` = ∂/∂(x, z)_k.
    fn d_red_grad(x: f64, z: f64) -> [[[f64; 2]; 2]; 2] {
        let offx = z * (3.0 * x * x - 2.0);
        let offz = x * (x * x - 2.0);
        [
            [[4.0 * x.powi(3) - 4.0 * x, offx], [offx, 2.0 * x * (z * z + 1.0)]],
            [[2.0 * z, offz], [offz, 2.0 * x * x * z]],
        ]
    }

    #[test]
    fn diffusion_matrix_at_reference_point() {
        let d = diffusion_matrix(bloch().as_ref(), &[0.5, 0.5, 0.5]);
        let want = [[0.8125, -0.1875, -0.4375], [-0.1875, 0.0625, 0.0625], [-0.4375, 0.0625, 0.3125]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(d[(i, j)], want[i][j], epsilon = 1e-15);
            }
        }
        let closed = raising_lowering_diffusion(&[0.5, 0.5, 0.5]);
        assert!((d - closed).amax() < 1e-15);
        let z = PureZ::new(0.0).unwrap();
        assert_abs_diff_eq!(diffusion_matrix(&z, &[0.3])[(0, 0)], 1.0 - 0.3f64.powi(4), epsilon = 1e-15);
    }

    #[test]
    fn null_vector_at_reference_point() {
        let d = diffusion_matrix(bloch().as_ref(), &[0.5, 0.5, 0.5]);
        let ns = null_eigenvectors(&d, NULL_TOL);
        assert_eq!(ns.vectors.len(), 1);
        let expected = DVector::from_vec(vec![1.0, 2.0, 1.0]) / 6f64.sqrt();
        assert_abs_diff_eq!(ns.vectors[0].dot(&expected).abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_matrix_and_drift_at_reference_point() {
        let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
        assert_eq!(red.labels(), vec!["x".to_string(), "z".to_string()]);
        let d = red.diffusion(&[0.5, 0.5]);
        assert_abs_diff_eq!(d[(0, 0)], 0.8125, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(0, 1)], -0.4375, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)], 0.3125, epsilon = 1e-15);
        assert_abs_diff_eq!(d.determinant(), 0.0625, epsilon = 1e-12);
        let a = drift_vector(&red, &[0.5, 0.5]);
        assert_abs_diff_eq!(a[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], -1.0, epsilon = 1e-15);
        // spectator recovered on the f₀ = 2 level set
        assert_abs_diff_eq!(red.map().full_point(&[0.5, 0.5])[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn r_matrix_matches_constraint() {
        let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
        let (x, z) = (0.3, -0.4);
        let y = red.map().full_point(&[x, z])[1];
        let r = red.r_matrix(&[x, z]).unwrap();
        let s = 1.0 - x * x - z * z;
        assert_abs_diff_eq!(r[(0, 0)], -x * y / s, epsilon = 1e-10);
        assert_abs_diff_eq!(r[(0, 1)], -y * z / s, epsilon = 1e-10);
    }

    #[test]
    fn lifted_chart_coefficients_match_generic_transform() {
        let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
        for p in [[0.5, 0.5], [0.3, -0.6], [-0.9, 0.1]] {
            let mut xi = [0.0; 2];
            assert!(BallChart.forward(&p, &mut xi));
            let (mut a1, mut b1, mut a2, mut b2) = ([0.0; 2], [0.0; 4], [0.0; 2], [0.0; 4]);
            red.chart_coefficients(&xi, &mut a1, &mut b1);
            transform_coefficients(&red, &BallChart, &xi, &mut a2, &mut b2);
            for (u, v) in a1.iter().chain(&b1).zip(a2.iter().chain(&b2)) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn hessian_stencil_stays_inside_the_disk() {
        let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
        let r = (1.0f64 - 1e-7).sqrt();
        let h = red.diffusion_hessian(&[0.6 * r, 0.8 * r]);
        assert!(h.iter().flatten().all(|m| m.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn identity_reduction_for_full_rank_system() {
        let z: Arc<dyn SdeSystem> = Arc::new(PureZ::new(0.0).unwrap());
        let red = reduce(z.clone(), &[], Arc::new(NoSpectators), &[0.2]).unwrap();
        assert!(red.map().is_identity());
        assert_eq!(red.dim(), 1);
        assert_abs_diff_eq!(red.diffusion(&[0.2])[(0, 0)], z.diffusion(&[0.2])[(0, 0)]);
        assert_abs_diff_eq!(
            red.diffusion_gradient(&[0.2])[0][(0, 0)],
            z.diffusion_gradient(&[0.2])[0][(0, 0)]
        );
        assert_eq!(red.interval(), Some((-1.0, 1.0)));
    }

    #[test]
    fn rejects_bad_partitions() {
        let e = reduce(bloch(), &[], Arc::new(NoSpectators), &[0.5, 0.5, 0.5]).unwrap_err();
        assert!(matches!(e, ReductionError::SpectatorCount { spectators: 0, expected: 1 }));
        let e = reduce(bloch(), &[5], Arc::new(BlochY { f0: 2.0 }), &[0.5, 0.5]).unwrap_err();
        assert_eq!(e, ReductionError::BadIndex(5));
    }

    #[test]
    fn singular_where_y_vanishes() {
        // on the unit circle the level set degenerates and D loses rank
        let e = reduce_bloch_xz(bloch(), 2.0, [0.6, 0.8]).unwrap_err();
        assert!(matches!(e, ReductionError::NullSpace { .. } | ReductionError::SingularP(_)));
    }

    #[test]
    fn constant_of_motion_has_vanishing_differential() {
        let sys = raising_lowering();
        let res = verify_constant(&sys, f_motion, &[0.5, 0.5, 0.5], 1e-5);
        assert!(res.max_abs() < 1e-6, "{res:?}");
        let z = verify_constant(&sys, |r: &[f64]| r[2], &[0.5, 0.5, 0.5], 1e-5);
        assert!(z.noise.iter().any(|v| v.abs() > 0.1));
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
        let circ = verify_constant(&sys, norm, &[0.6, 0.0, 0.8], 1e-5);
        assert!(circ.max_abs() < 1e-6, "{circ:?}");
    }

    fn interior_xz() -> impl Strategy<Value = (f64, f64)> {
        (-0.9..0.9f64, -0.9..0.9f64)
            .prop_filter("inside the disk", |(x, z)| x * x + z * z < 0.9 && z.abs() > 0.05)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn diffusion_is_positive_semidefinite(
            r in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
                .prop_filter("inside the ball", |(x, y, z)| x * x + y * y + z * z < 1.0)
        ) {
            let d = diffusion_matrix(bloch().as_ref(), &[r.0, r.1, r.2]);
            let eig = crate::linalg::symmetric_eigen(&d);
            prop_assert!(eig.values[0] > -1e-10);
        }

        #[test]
        fn analytic_null_vector(
            r in (-0.9..0.9f64, -0.9..0.9f64, -0.9..0.9f64).prop_filter("interior", |(x, y, z)| {
                x * x + y * y + z * z < 0.98 && y.abs() > 0.1 && z.abs() > 0.1
            })
        ) {
            let (x, y, z) = r;
            let d = diffusion_matrix(bloch().as_ref(), &[x, y, z]);
            let alpha = DVector::from_vec(vec![x / z, (1.0 - x * x - z * z) / (y * z), 1.0]);
            prop_assert!((d * alpha).amax() < 1e-8);
        }

        #[test]
        fn reduced_matrix_matches_closed_form((x, z) in interior_xz()) {
            let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
            let d = red.diffusion(&[x, z]);
            let want = d_red(x, z);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((d[(i, j)] - want[i][j]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn modified_derivatives_match_closed_form((x, z) in interior_xz(), f0 in 0.5..5.0f64) {
            let red = reduce_bloch_xz(bloch(), f0, [x, z]).unwrap();
            let got = red.diffusion_gradient(&[x, z]);
            let want = d_red_grad(x, z);
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        prop_assert!((got[k][(i, j)] - want[k][i][j]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_jacobian_matches_differences() {
        let red = reduce_bloch_xz(bloch(), 2.0, [0.5, 0.5]).unwrap();
        let p = [0.3, 0.2];
        let jac = red.drift_jacobian(&p);
        let fd = fd_gradient(&p, 1e-6, |q| DMatrix::from_column_slice(2, 1, drift_vector(&red, q).as_slice()));
        for k in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(jac[(i, k)], fd[k][(i, 0)], epsilon = 1e-8);
            }
        }
    }
}
