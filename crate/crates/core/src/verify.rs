//! Invariant suite behind the `verify` command.
//!
//! Every check reports a residual and the tolerance it is held to. The
//! entropy methods under test are injectable, so a deliberately broken
//! closed form can be fed through the same checks.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::bloch::{constant_of_motion, BlochVector};
use crate::entropy::fpe::Pdf1DGrid;
use crate::entropy::sys::dp_limit_at_infinity;
use crate::entropy::{
    boundary_term_mean, ds_env_general, ds_env_z, fpe_stationary_1d, stationary_pdf_quadratic_noise,
    stationary_pdf_theta, theta_drift, z_drift, ClosedFormTheta, ClosedFormZ, EntropyError, EnvEntropyMethod,
};
use crate::lindblad::raising_lowering;
use crate::linalg::null_eigenvectors;
use crate::reduction::{diffusion_matrix, reduce_bloch_xz, verify_constant, NULL_TOL};
use crate::system::{PureZ, QuadraticNoise, SdeSystem, Theta};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `residual` is finite and at most `tolerance`.
    pub fn below(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self { name, residual, tolerance, passed: residual.is_finite() && residual <= tolerance }
    }

    /// Passes when `residual` exceeds `tolerance`, for checks that a
    /// quantity is visibly nonzero.
    pub fn above(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self { name, residual, tolerance, passed: residual.is_finite() && residual > tolerance }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict}  {:<32} residual {:.3e}  tolerance {:.1e}", self.name, self.residual, self.tolerance)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Extrapolated [D p] at the upper end for dx = x dt + x² dW.
    pub dp_limit: f64,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "[D p] at infinity for dx = x dt + x^2 dW: {:.6} (2/sqrt(pi) = {:.6})", self.dp_limit, 2.0 / PI.sqrt())
    }
}

pub struct VerifySuite {
    pub z_method: Arc<dyn EnvEntropyMethod>,
    pub theta_method: Arc<dyn EnvEntropyMethod>,
    /// Cells of the grid for the quadratic-noise stationary solve.
    pub fpe_cells: usize,
}

impl Default for VerifySuite {
    fn default() -> Self {
        Self { z_method: Arc::new(ClosedFormZ), theta_method: Arc::new(ClosedFormTheta), fpe_cells: 100_000 }
    }
}

/// Closed-form z increment with the sign of its dt coefficient flipped.
/// Exists so that tests can confirm the suite catches it.
pub struct FlippedZDrift;

impl EnvEntropyMethod for FlippedZDrift {
    fn name(&self) -> String {
        "closed-form-z-flipped".into()
    }

    fn accepts(&self, labels: &[String]) -> bool {
        ClosedFormZ.accepts(labels)
    }

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
        Ok(ds_env_z(x[0], dx[0], dt)? - 2.0 * z_drift(x[0]) * dt)
    }
}

const BLOCH_POINTS: [[f64; 3]; 5] =
    [[0.5, 0.5, 0.5], [0.3, -0.2, 0.4], [-0.6, 0.3, 0.1], [0.1, 0.7, -0.5], [-0.2, -0.4, -0.6]];

/// D_red of the (x, z) system in closed form.
pub fn reduced_diffusion_closed_form(x: f64, z: f64) -> [[f64; 2]; 2] {
    let x2 = x * x;
    let xz = -x * z * (2.0 - x2);
    [[(1.0 - x2).powi(2) + z * z, xz], [xz, x2 * (1.0 + z * z)]]
}

impl VerifySuite {
    pub fn run(&self) -> Report {
        let mut checks = Vec::new();
        let bloch: Arc<dyn SdeSystem> = Arc::new(raising_lowering());

        let f = |r: &[f64]| constant_of_motion(BlochVector::from_slice(r)).unwrap_or(f64::NAN);
        let worst = BLOCH_POINTS
            .iter()
            .map(|p| verify_constant(bloch.as_ref(), f, p, 1e-5).max_abs())
            .fold(0.0, f64::max);
        checks.push(Check::below("constant-of-motion", worst, 1e-6));
        let z_noise = verify_constant(bloch.as_ref(), |r| r[2], &[0.5, 0.5, 0.5], 1e-5)
            .noise
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        checks.push(Check::above("z-is-not-constant", z_noise, 1e-3));

        let mut worst = 0.0f64;
        for p in BLOCH_POINTS {
            let [x, y, z] = p;
            let alpha = DVector::from_vec(vec![x / z, (1.0 - x * x - z * z) / (y * z), 1.0]);
            let d = diffusion_matrix(bloch.as_ref(), &p);
            worst = worst.max((d * &alpha).amax() / alpha.norm());
        }
        checks.push(Check::below("null-eigenvector", worst, 1e-8));
        let ns = null_eigenvectors(&diffusion_matrix(bloch.as_ref(), &[0.5, 0.5, 0.5]), NULL_TOL);
        let want = DVector::from_vec(vec![1.0, 2.0, 1.0]) / 6f64.sqrt();
        let captured = ns.vectors.iter().map(|v| v.dot(&want).powi(2)).sum::<f64>();
        let miss = if ns.vectors.len() == 1 && !ns.ambiguous { (1.0 - captured).abs() } else { f64::INFINITY };
        checks.push(Check::below("null-space-span", miss, 1e-10));

        let reduced = reduce_bloch_xz(bloch.clone(), 2.0, [0.5, 0.5]);
        let (mut worst, mut det_err) = (f64::INFINITY, f64::INFINITY);
        if let Ok(red) = &reduced {
            worst = 0.0;
            for (x, z) in [(0.5, 0.5), (0.2, -0.3), (-0.6, 0.4), (0.1, 0.9), (-0.35, -0.55)] {
                let got = red.diffusion(&[x, z]);
                let want = reduced_diffusion_closed_form(x, z);
                for i in 0..2 {
                    for j in 0..2 {
                        worst = worst.max((got[(i, j)] - want[i][j]).abs());
                    }
                }
            }
            det_err = (red.diffusion(&[0.5, 0.5]).determinant() - 0.0625).abs();
        }
        checks.push(Check::below("reduced-diffusion", worst, 1e-10));
        checks.push(Check::below("reduced-determinant", det_err, 1e-12));

        let zsys = PureZ::new(0.0).expect("gamma 0 is valid");
        let z_steps = [(0.3, 0.01, 1e-4), (-0.7, -0.02, 1e-4), (0.95, 0.001, 1e-5), (0.0, 0.03, 1e-3)];
        checks.push(Check::below("entropy-z-consistency", self.step_mismatch(&zsys, &*self.z_method, &z_steps), 1e-8));
        let theta_steps = [(0.1, 0.02, 1e-4), (1.3, -0.01, 1e-4), (3.0, 0.005, 1e-5), (PI / 2.0, 0.03, 1e-3)];
        checks.push(Check::below(
            "entropy-theta-consistency",
            self.step_mismatch(&Theta, &*self.theta_method, &theta_steps),
            1e-8,
        ));

        let balance = stationary_pdf_theta().and_then(|p| p.expectation(theta_drift)).map_or(f64::INFINITY, f64::abs);
        checks.push(Check::below("stationary-balance-theta", balance, 1e-8));

        let boundary = |sys: &dyn SdeSystem, a: f64, b: f64| {
            fpe_stationary_1d(sys, &Pdf1DGrid::uniform_edges(a, b, 2000))
                .map_or(f64::INFINITY, |g| boundary_term_mean(sys, &g).abs())
        };
        checks.push(Check::below("boundary-term-z", boundary(&zsys, -1.0, 1.0), 1e-8));
        checks.push(Check::below("boundary-term-theta", boundary(&Theta, 0.0, PI), 1e-8));

        let (l1, dp_limit) = self.quadratic_noise();
        checks.push(Check::below("quadratic-noise-l1", l1, 1e-3));
        checks.push(Check::below("quadratic-noise-dp-limit", (dp_limit - 2.0 / PI.sqrt()).abs(), 1e-3));

        Report { checks, dp_limit }
    }

    fn step_mismatch(&self, system: &dyn SdeSystem, method: &dyn EnvEntropyMethod, steps: &[(f64, f64, f64)]) -> f64 {
        steps
            .iter()
            .map(|&(x, dx, dt)| match (ds_env_general(system, &[x], &[dx], dt), method.increment(&[x], &[dx], dt)) {
                (Ok(a), Ok(b)) => (a - b).abs(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// L1 distance of the stationary FPE solution on [1e-3, 100] from the
    /// analytic density, and the extrapolated limit of D p.
    pub fn quadratic_noise(&self) -> (f64, f64) {
        let edges = Pdf1DGrid::uniform_edges(1e-3, 100.0, self.fpe_cells);
        let Ok(grid) = fpe_stationary_1d(&QuadraticNoise, &edges) else {
            return (f64::INFINITY, f64::NAN);
        };
        let l1 = stationary_pdf_quadratic_noise().map_or(f64::INFINITY, |p| grid.l1_to(|x| p.pdf(x)));
        let dp = dp_limit_at_infinity(&QuadraticNoise, &grid, 10.0).unwrap_or(f64::NAN);
        (l1, dp)
    }
}
