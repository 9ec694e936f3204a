//! Bloch-coordinate SDEs generated by the stochastic Lindblad equation
//!
//! dρ = Σₖ (cₖρcₖ† − ½ρcₖ†cₖ − ½cₖ†cₖρ) dt
//!    + Σₖ (ρcₖ† + cₖρ − Tr[(cₖ + cₖ†)ρ] ρ) dWₖ
//!
//! with one real Wiener increment per operator. Each operator contributes one
//! column of the Bloch noise matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::bloch::{BlochVector, ComplexMatrix2};
use crate::system::{noise_matrix, BallChart, Chart, PureZ, SdeSystem, Theta};

/// Largest imaginary part tolerated when projecting increments onto the
/// real Bloch components.
pub const IMAG_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error("at least one Lindblad operator is required")]
    NoOperators,
    #[error("operator weight {0} is negative")]
    NegativeWeight(f64),
    #[error("Bloch projection has imaginary part {0:e}")]
    ComplexProjection(f64),
    #[error("|gamma| = {0} must be below 2")]
    GammaOutOfRange(f64),
}

/// Environmental coupling channel, entering the dynamics as √weight · c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladOperator {
    pub matrix: ComplexMatrix2,
    pub weight: f64,
}

impl LindbladOperator {
    pub fn new(matrix: ComplexMatrix2, weight: f64) -> Result<Self, LindbladError> {
        if !(weight >= 0.0) {
            return Err(LindbladError::NegativeWeight(weight));
        }
        Ok(Self { matrix, weight })
    }

    pub fn unit(matrix: ComplexMatrix2) -> Self {
        Self { matrix, weight: 1.0 }
    }

    /// √weight · c
    pub fn effective(&self) -> ComplexMatrix2 {
        self.matrix.scale_real(self.weight.sqrt())
    }
}

/// c₊ = [[0, 0], [1, 0]] in the σ_z eigenbasis.
pub fn raising() -> ComplexMatrix2 {
    ComplexMatrix2::real(0.0, 0.0, 1.0, 0.0)
}

/// c₋ = [[0, 1], [0, 0]] in the σ_z eigenbasis.
pub fn lowering() -> ComplexMatrix2 {
    ComplexMatrix2::real(0.0, 1.0, 0.0, 0.0)
}

/// dt coefficient cρc† − ½ρc†c − ½c†cρ for one operator.
pub fn drift_increment(rho: &ComplexMatrix2, op: &LindbladOperator) -> ComplexMatrix2 {
    let c = op.effective();
    let cd = c.dagger();
    let cdc = cd * c;
    c * *rho * cd - (*rho * cdc).scale_real(0.5) - (cdc * *rho).scale_real(0.5)
}

/// dW coefficient ρc† + cρ − Tr[(c + c†)ρ] ρ for one operator.
pub fn noise_increment(rho: &ComplexMatrix2, op: &LindbladOperator) -> ComplexMatrix2 {
    let c = op.effective();
    let cd = c.dagger();
    let expectation = ((c + cd) * *rho).trace();
    *rho * cd + c * *rho - rho.scale(expectation)
}

#[derive(Debug, Clone, Copy)]
struct Channel {
    c: ComplexMatrix2,
    cd: ComplexMatrix2,
    /// Tr[(c + c†) σₖ/2] for k = x, y, z.
    herm_traces: [f64; 3],
    herm: ComplexMatrix2,
}

/// Three-dimensional Bloch SDE built from an arbitrary operator set.
///
/// The drift is affine in r and is tabulated once at construction from
/// [`drift_increment`]. The noise columns are quadratic in r and are evaluated
/// from [`noise_increment`] on every call; their first and second derivatives
/// are exact.
#[derive(Debug, Clone)]
pub struct LindbladBloch {
    name: String,
    ops: Vec<LindbladOperator>,
    channels: Vec<Channel>,
    drift_offset: [f64; 3],
    drift_linear: [[f64; 3]; 3],
    gap: Option<GapFactors>,
    cartesian: bool,
}

/// B, ∂ₖB and ∂ₖ∂ₗB.
type NoiseDerivatives = (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>);

/// With s = 1 − |r|², dynamics that keep pure states pure satisfy
/// r·Bₖ = s ℓₖ(r) with ℓₖ affine and −2r·A − |B|² = s q(r) with q quadratic.
/// Both factors are fitted once from the coefficients, so that the chart
/// equations can be written without cancelling O(1) terms near the sphere.
#[derive(Debug, Clone)]
struct GapFactors {
    ell: Vec<[f64; 4]>,
    q: [f64; 10],
}

fn affine_basis(r: &[f64]) -> [f64; 4] {
    [1.0, r[0], r[1], r[2]]
}

fn quadratic_basis(r: &[f64]) -> [f64; 10] {
    let (x, y, z) = (r[0], r[1], r[2]);
    [1.0, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z]
}

fn dot<const N: usize>(c: &[f64; N], basis: &[f64; N]) -> f64 {
    c.iter().zip(basis).map(|(a, b)| a * b).sum()
}

impl GapFactors {
    /// Least-squares fit on interior points, rejected unless it reproduces
    /// the coefficients at points it was not fitted on.
    fn fit(sys: &LindbladBloch) -> Option<Self> {
        let m = sys.channels.len();
        let grid = [-0.5, -0.1, 0.3, 0.55];
        let mut fit_points = Vec::new();
        for a in grid {
            for b in grid {
                for c in grid {
                    fit_points.push([a, b, c]);
                }
            }
        }
        let samples = |r: &[f64; 3]| {
            let s = 1.0 - r.iter().map(|v| v * v).sum::<f64>();
            let mut a = [0.0; 3];
            let mut b = vec![0.0; 3 * m];
            sys.drift(r, &mut a);
            sys.noise(r, &mut b);
            let col = |k: usize| (0..3).map(|i| b[i * m + k]).collect::<Vec<_>>();
            let ell: Vec<f64> = (0..m).map(|k| col(k).iter().zip(r).map(|(u, v)| u * v).sum::<f64>() / s).collect();
            let b2: f64 = b.iter().map(|v| v * v).sum();
            let ra: f64 = r.iter().zip(&a).map(|(u, v)| u * v).sum();
            (ell, (-2.0 * ra - b2) / s)
        };
        let n = fit_points.len();
        let lin = DMatrix::from_fn(n, 4, |i, j| affine_basis(&fit_points[i])[j]).svd(true, true);
        let quad = DMatrix::from_fn(n, 10, |i, j| quadratic_basis(&fit_points[i])[j]).svd(true, true);
        let values: Vec<_> = fit_points.iter().map(samples).collect();
        let mut ell = Vec::with_capacity(m);
        for k in 0..m {
            let rhs = DMatrix::from_fn(n, 1, |i, _| values[i].0[k]);
            let c = lin.solve(&rhs, 1e-12).ok()?;
            ell.push([c[0], c[1], c[2], c[3]]);
        }
        let rhs = DMatrix::from_fn(n, 1, |i, _| values[i].1);
        let c = quad.solve(&rhs, 1e-12).ok()?;
        let q = std::array::from_fn(|j| c[j]);
        let factors = Self { ell, q };
        for r in [[0.7, -0.2, 0.1], [-0.15, 0.62, -0.48], [0.05, 0.01, -0.9]] {
            let (want_ell, want_q) = samples(&r);
            let got = factors.ell_at(&r);
            let ok = want_ell.iter().zip(&got).all(|(w, g)| (w - g).abs() < 1e-9)
                && (want_q - factors.q_at(&r)).abs() < 1e-9;
            if !ok {
                return None;
            }
        }
        Some(factors)
    }

    fn ell_at(&self, r: &[f64]) -> Vec<f64> {
        let basis = affine_basis(r);
        self.ell.iter().map(|c| dot(c, &basis)).collect()
    }

    fn q_at(&self, r: &[f64]) -> f64 {
        dot(&self.q, &quadratic_basis(r))
    }
}

fn half_pauli(k: usize) -> ComplexMatrix2 {
    ComplexMatrix2::paulis()[k].scale_real(0.5)
}

fn project_real(m: &ComplexMatrix2) -> Result<[f64; 3], LindbladError> {
    let (v, imag) = m.bloch_components();
    if imag > IMAG_TOL {
        return Err(LindbladError::ComplexProjection(imag));
    }
    Ok(v)
}

/// Build the Bloch SDE for `ops`; noise column k belongs to `ops[k]`.
pub fn build_bloch_sde(
    name: impl Into<String>,
    ops: &[LindbladOperator],
) -> Result<LindbladBloch, LindbladError> {
    if ops.is_empty() {
        return Err(LindbladError::NoOperators);
    }
    for op in ops {
        if !(op.weight >= 0.0) {
            return Err(LindbladError::NegativeWeight(op.weight));
        }
    }

    let total_drift = |rho: &ComplexMatrix2| {
        ops.iter()
            .map(|op| drift_increment(rho, op))
            .fold(ComplexMatrix2::zero(), |acc, m| acc + m)
    };
    let offset_rho = ComplexMatrix2::identity().scale_real(0.5);
    let drift_offset = project_real(&total_drift(&offset_rho))?;
    let mut drift_linear = [[0.0; 3]; 3];
    for k in 0..3 {
        let col = project_real(&total_drift(&half_pauli(k)))?;
        for i in 0..3 {
            drift_linear[i][k] = col[i];
        }
    }

    let channels = ops
        .iter()
        .map(|op| {
            let c = op.effective();
            let cd = c.dagger();
            let herm = c + cd;
            let mut herm_traces = [0.0; 3];
            for (k, t) in herm_traces.iter_mut().enumerate() {
                *t = (herm * half_pauli(k)).trace().re;
            }
            Channel { c, cd, herm_traces, herm }
        })
        .collect();

    let mut sys = LindbladBloch {
        name: name.into(),
        ops: ops.to_vec(),
        channels,
        drift_offset,
        drift_linear,
        gap: None,
        cartesian: false,
    };
    sys.gap = GapFactors::fit(&sys);

    // The noise projection is real for Hermitian ρ; check on a few points.
    for r in [[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [-0.3, 0.6, -0.2], [0.0, 0.0, 1.0]] {
        let rho = BlochVector::from_slice(&r).density_matrix();
        for op in ops {
            project_real(&noise_increment(&rho, op))?;
        }
    }
    Ok(sys)
}

/// Equal-weight raising and lowering channels, with noise columns ordered so
/// that dx has coefficients (1 − x² − z, 1 − x² + z).
pub fn raising_lowering() -> LindbladBloch {
    build_bloch_sde(
        "raising-lowering",
        &[LindbladOperator::unit(lowering()), LindbladOperator::unit(raising())],
    )
    .expect("unit-weight operators are valid")
}

/// Unequally weighted channels. The z drift is −(γ + 2z), so the stationary
/// mean of z is −γ/2.
pub fn weighted(gamma: f64) -> Result<LindbladBloch, LindbladError> {
    if !(gamma.abs() < 2.0) {
        return Err(LindbladError::GammaOutOfRange(gamma));
    }
    build_bloch_sde(
        format!("weighted:{gamma}"),
        &[
            LindbladOperator::new(lowering(), 1.0 - gamma / 2.0)?,
            LindbladOperator::new(raising(), 1.0 + gamma / 2.0)?,
        ],
    )
}

/// One-dimensional z dynamics of a pure state.
pub fn pure_state_sde(gamma: f64) -> Result<PureZ, LindbladError> {
    PureZ::new(gamma).ok_or(LindbladError::GammaOutOfRange(gamma))
}

/// One-dimensional θ dynamics of a pure state.
pub fn theta_sde() -> Theta {
    Theta
}

/// Closed-form drift and noise matrix of the equal-weight raising/lowering
/// model, used to cross-check [`raising_lowering`].
pub fn raising_lowering_closed_form(r: &[f64]) -> ([f64; 3], [[f64; 2]; 3]) {
    let (x, y, z) = (r[0], r[1], r[2]);
    let drift = [-x, -y, -2.0 * z];
    let noise = [
        [1.0 - x * x - z, 1.0 - x * x + z],
        [-x * y, -x * y],
        [x * (1.0 - z), -x * (1.0 + z)],
    ];
    (drift, noise)
}

/// Closed-form diffusion matrix ½BBᵀ of the equal-weight model.
pub fn raising_lowering_diffusion(r: &[f64]) -> DMatrix<f64> {
    let (x, y, z) = (r[0], r[1], r[2]);
    let (x2, z2) = (x * x, z * z);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            x2 * x2 - 2.0 * x2 + z2 + 1.0,
            x * y * (x2 - 1.0),
            x * z * (x2 - 2.0),
            x * y * (x2 - 1.0),
            x2 * y * y,
            x2 * y * z,
            x * z * (x2 - 2.0),
            x2 * y * z,
            x2 * (z2 + 1.0),
        ],
    )
}

impl LindbladBloch {
    pub fn operators(&self) -> &[LindbladOperator] {
        &self.ops
    }

    /// Step r itself with projected Euler instead of the ball chart.
    pub fn cartesian(mut self) -> Self {
        self.cartesian = true;
        self
    }

    /// Whether steps are taken in ξ = r/√(1 − |r|²).
    pub fn steps_in_chart(&self) -> bool {
        self.chart().is_some()
    }

    /// Noise matrix B and its first and second derivatives, evaluated from
    /// the operator algebra with ∂ρ/∂rₖ = σₖ/2.
    fn noise_with_derivatives(
        &self,
        x: &[f64],
    ) -> NoiseDerivatives {
        let m = self.channels.len();
        let rho = BlochVector::from_slice(x).density_matrix();
        let mut b = DMatrix::zeros(3, m);
        let mut db = vec![DMatrix::zeros(3, m); 3];
        let mut d2b = vec![vec![DMatrix::zeros(3, m); 3]; 3];
        for (j, ch) in self.channels.iter().enumerate() {
            let expect = (ch.herm * rho).trace();
            let col = (rho * ch.cd + ch.c * rho - rho.scale(expect)).bloch_components().0;
            for i in 0..3 {
                b[(i, j)] = col[i];
            }
            for k in 0..3 {
                let s = half_pauli(k);
                let tk = Complex64::new(ch.herm_traces[k], 0.0);
                let dm = s * ch.cd + ch.c * s - rho.scale(tk) - s.scale(expect);
                let dcol = dm.bloch_components().0;
                for i in 0..3 {
                    db[k][(i, j)] = dcol[i];
                }
                for l in 0..3 {
                    let sl = half_pauli(l);
                    let d2 = -(sl.scale_real(ch.herm_traces[k]) + s.scale_real(ch.herm_traces[l]));
                    let d2col = d2.bloch_components().0;
                    for i in 0..3 {
                        d2b[k][l][(i, j)] = d2col[i];
                    }
                }
            }
        }
        (b, db, d2b)
    }
}

impl SdeSystem for LindbladBloch {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn labels(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }

    fn dim(&self) -> usize {
        3
    }

    fn noise_count(&self) -> usize {
        self.channels.len()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..3 {
            let row = &self.drift_linear[i];
            out[i] = self.drift_offset[i] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
        }
    }

    fn noise(&self, x: &[f64], out: &mut [f64]) {
        let m = self.channels.len();
        let rho = BlochVector::from_slice(x).density_matrix();
        for (j, ch) in self.channels.iter().enumerate() {
            let expect = (ch.herm * rho).trace();
            let col = (rho * ch.cd + ch.c * rho - rho.scale(expect)).bloch_components().0;
            for i in 0..3 {
                out[i * m + j] = col[i];
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        let n2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        if n2 > 1.0 {
            let n = n2.sqrt();
            x.iter_mut().for_each(|v| *v /= n);
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        BlochVector::from_slice(x).is_physical()
    }

    fn chart(&self) -> Option<&dyn Chart> {
        match (&self.gap, self.cartesian) {
            (Some(_), false) => Some(&BallChart),
            _ => None,
        }
    }

    /// dξ = [A + Σₖ ℓₖBₖ]/√s dt + ξ(3|ℓ|²/2 − q/2) dt + Σₖ (Bₖ/√s + ξℓₖ) dWₖ
    fn chart_coefficients(&self, xi: &[f64], drift: &mut [f64], noise: &mut [f64]) {
        let Some(gap) = self.gap.as_ref().filter(|_| !self.cartesian) else {
            self.drift(xi, drift);
            self.noise(xi, noise);
            return;
        };
        let m = self.channels.len();
        let s = BallChart::gap(xi);
        let root = s.sqrt();
        let x: Vec<f64> = xi.iter().map(|v| v * root).collect();
        let mut a = [0.0; 3];
        self.drift(&x, &mut a);
        self.noise(&x, noise);
        let ell = gap.ell_at(&x);
        let ell2: f64 = ell.iter().map(|v| v * v).sum();
        let radial = 1.5 * ell2 - 0.5 * gap.q_at(&x);
        for i in 0..3 {
            let row = &mut noise[i * m..(i + 1) * m];
            let mix: f64 = row.iter().zip(&ell).map(|(b, l)| b * l).sum();
            drift[i] = (a[i] + mix) / root + xi[i] * radial;
            for (b, l) in row.iter_mut().zip(&ell) {
                *b = *b / root + xi[i] * l;
            }
        }
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        let b = noise_matrix(self, x);
        &b * b.transpose() * 0.5
    }

    fn diffusion_gradient(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let (b, db, _) = self.noise_with_derivatives(x);
        db.iter()
            .map(|dbk| {
                let t = dbk * b.transpose();
                (&t + t.transpose()) * 0.5
            })
            .collect()
    }

    fn diffusion_hessian(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let (b, db, d2b) = self.noise_with_derivatives(x);
        (0..3)
            .map(|k| {
                (0..3)
                    .map(|l| {
                        let t = &d2b[k][l] * b.transpose();
                        let cross = &db[k] * db[l].transpose();
                        (&t + t.transpose() + &cross + cross.transpose()) * 0.5
                    })
                    .collect()
            })
            .collect()
    }

    fn drift_jacobian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, k| self.drift_linear[i][k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::bloch_to_rho;
    use crate::system::{drift_vector, fd_gradient, fd_gradient_of_gradient};
    use proptest::prelude::*;

    fn diag(a: f64, d: f64) -> ComplexMatrix2 {
        ComplexMatrix2::real(a, 0.0, 0.0, d)
    }

    /// Entrywise oracle: explicit index loops instead of the matrix type's
    /// operators.
    fn matmul(a: &ComplexMatrix2, b: &ComplexMatrix2) -> ComplexMatrix2 {
        let mut out = ComplexMatrix2::zero();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out.m[i][j] += a.m[i][k] * b.m[k][j];
                }
            }
        }
        out
    }

    fn oracle_drift(rho: &ComplexMatrix2, c: &ComplexMatrix2) -> ComplexMatrix2 {
        let mut cd = ComplexMatrix2::zero();
        for i in 0..2 {
            for j in 0..2 {
                cd.m[i][j] = c.m[j][i].conj();
            }
        }
        let cdc = matmul(&cd, c);
        let a = matmul(&matmul(c, rho), &cd);
        let b = matmul(rho, &cdc);
        let d = matmul(&cdc, rho);
        let mut out = ComplexMatrix2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.m[i][j] = a.m[i][j] - 0.5 * b.m[i][j] - 0.5 * d.m[i][j];
            }
        }
        out
    }

    #[test]
    fn drift_increment_examples() {
        let up = diag(1.0, 0.0);
        let got = drift_increment(&up, &LindbladOperator::unit(raising()));
        assert!(got.max_abs_diff(&diag(-1.0, 1.0)) < 1e-15);
        assert!(got.max_abs_diff(&oracle_drift(&up, &raising())) < 1e-15);

        let down = diag(0.0, 1.0);
        let got = drift_increment(&down, &LindbladOperator::unit(raising()));
        assert!(got.max_abs_diff(&ComplexMatrix2::zero()) < 1e-15);

        let mixed = diag(0.5, 0.5);
        let got = drift_increment(&mixed, &LindbladOperator::unit(lowering()));
        assert!(got.max_abs_diff(&diag(0.5, -0.5)) < 1e-15);
        assert!(got.max_abs_diff(&oracle_drift(&mixed, &lowering())) < 1e-15);
    }

    #[test]
    fn noise_increment_examples() {
        let mixed = diag(0.5, 0.5);
        let got = noise_increment(&mixed, &LindbladOperator::unit(raising()));
        assert!(got.max_abs_diff(&ComplexMatrix2::real(0.0, 0.5, 0.5, 0.0)) < 1e-15);

        // ρ c₋† and c₋ ρ both vanish for ρ = diag(1, 0), as does ⟨c₋ + c₋†⟩
        let up = diag(1.0, 0.0);
        let got = noise_increment(&up, &LindbladOperator::unit(lowering()));
        assert!(got.max_abs_diff(&ComplexMatrix2::zero()) < 1e-15);

        let rho = bloch_to_rho(BlochVector::new(0.3, -0.2, 0.6)).unwrap();
        let zero_op = LindbladOperator::unit(ComplexMatrix2::zero());
        assert!(noise_increment(&rho, &zero_op).max_abs_diff(&ComplexMatrix2::zero()) < 1e-15);
    }

    #[test]
    fn weights_scale_rates_linearly() {
        let rho = bloch_to_rho(BlochVector::new(0.1, 0.4, -0.3)).unwrap();
        let unit = drift_increment(&rho, &LindbladOperator::unit(raising()));
        let tripled = drift_increment(&rho, &LindbladOperator::new(raising(), 3.0).unwrap());
        assert!(tripled.max_abs_diff(&unit.scale_real(3.0)) < 1e-15);
        assert_eq!(
            LindbladOperator::new(raising(), -0.1),
            Err(LindbladError::NegativeWeight(-0.1))
        );
    }

    #[test]
    fn builder_rejects_empty_set() {
        assert_eq!(build_bloch_sde("none", &[]).unwrap_err(), LindbladError::NoOperators);
    }

    #[test]
    fn raising_lowering_examples() {
        let sys = raising_lowering();
        let r = [0.5, 0.5, 0.5];
        let a = drift_vector(&sys, &r);
        for (got, want) in a.iter().zip([-0.5, -0.5, -1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let b = noise_matrix(&sys, &r);
        let want = [[0.25, 1.25], [-0.25, -0.25], [0.25, -0.75]];
        for i in 0..3 {
            for j in 0..2 {
                assert!((b[(i, j)] - want[i][j]).abs() < 1e-15, "B[{i}][{j}]");
            }
        }
    }

    #[test]
    fn weighted_model_on_pure_circle() {
        let g = 0.5;
        let sys = weighted(g).unwrap();
        for z in [-0.9f64, -0.4, 0.0, 0.3, 0.8] {
            let x = (1.0 - z * z).sqrt();
            let r = [x, 0.0, z];
            let a = drift_vector(&sys, &r);
            assert!((a[2] + g + 2.0 * z).abs() < 1e-14);
            let d = sys.diffusion(&r);
            let want = (1.0 - z * z) * (1.0 + g * z + z * z);
            assert!((d[(2, 2)] - want).abs() < 1e-14);
        }
        assert!(weighted(2.0).is_err());
    }

    #[test]
    fn pure_state_sde_validates_gamma() {
        assert!(pure_state_sde(0.0).is_ok());
        assert_eq!(pure_state_sde(-2.0).unwrap_err(), LindbladError::GammaOutOfRange(-2.0));
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let sys = weighted(0.3).unwrap();
        let r = [0.2, -0.45, 0.35];
        let grad = sys.diffusion_gradient(&r);
        let fd = fd_gradient(&r, 1e-6, |p| sys.diffusion(p));
        for k in 0..3 {
            assert!((&grad[k] - &fd[k]).amax() < 1e-9);
        }
        let hess = sys.diffusion_hessian(&r);
        let fd2 = fd_gradient_of_gradient(&r, 1e-5, |p| sys.diffusion_gradient(p));
        for k in 0..3 {
            for l in 0..3 {
                assert!((&hess[k][l] - &fd2[k][l]).amax() < 1e-8);
            }
        }
    }

    fn ball_point() -> impl Strategy<Value = [f64; 3]> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..=1.0f64).prop_map(|(x, y, z, s)| {
            let n = (x * x + y * y + z * z).sqrt().max(1e-12);
            let r = s.cbrt() / n;
            [x * r, y * r, z * r]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn numeric_sde_matches_closed_form(r in ball_point()) {
            let sys = raising_lowering();
            let (a0, b0) = raising_lowering_closed_form(&r);
            let a = drift_vector(&sys, &r);
            let b = noise_matrix(&sys, &r);
            for i in 0..3 {
                prop_assert!((a[i] - a0[i]).abs() < 1e-10);
                for j in 0..2 {
                    prop_assert!((b[(i, j)] - b0[i][j]).abs() < 1e-10);
                }
            }
            let d = sys.diffusion(&r);
            prop_assert!((d - raising_lowering_diffusion(&r)).amax() < 1e-10);
        }

        #[test]
        fn increments_preserve_trace(r in ball_point(), w in 0.0..3.0f64) {
            let rho = BlochVector::from_slice(&r).density_matrix();
            for m in [raising(), lowering(), ComplexMatrix2::pauli_z(), ComplexMatrix2::pauli_x() + raising()] {
                let op = LindbladOperator::new(m, w).unwrap();
                prop_assert!(drift_increment(&rho, &op).trace().norm() < 1e-12);
                prop_assert!(noise_increment(&rho, &op).trace().norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_factors_of_the_equal_weight_model() {
        let gap = raising_lowering().gap.expect("purity preserving");
        let r = [0.3, -0.6, 0.2];
        // r·Bₖ = x s and −2r·A − |B|² = −2(1 − x²) s
        for l in gap.ell_at(&r) {
            assert!((l - 0.3).abs() < 1e-12);
        }
        assert!((gap.q_at(&r) + 2.0 * (1.0 - 0.09)).abs() < 1e-12);
        assert!(weighted(0.7).unwrap().gap.is_some());
    }

    #[test]
    fn chart_coefficients_match_generic_transform() {
        use crate::system::chart::transform_coefficients;
        for sys in [raising_lowering(), weighted(-0.4).unwrap()] {
            for r in [[0.3, -0.6, 0.2], [0.1, 0.2, -0.5]] {
                let mut xi = [0.0; 3];
                assert!(BallChart.forward(&r, &mut xi));
                let (mut a1, mut b1, mut a2, mut b2) = ([0.0; 3], [0.0; 6], [0.0; 3], [0.0; 6]);
                sys.chart_coefficients(&xi, &mut a1, &mut b1);
                transform_coefficients(&sys, &BallChart, &xi, &mut a2, &mut b2);
                for (u, v) in a1.iter().chain(&b1).zip(a2.iter().chain(&b2)) {
                    assert!((u - v).abs() < 1e-12, "{u} {v}");
                }
            }
        }
    }
}
