//! Closed-form stationary densities, normalized by quadrature.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::quadrature::{integrate, QuadratureError, DEFAULT_REL_TOL};

type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct StationaryPdf {
    pub label: String,
    pub bounds: (f64, f64),
    density: Density,
    norm: f64,
    norm_error: f64,
}

impl std::fmt::Debug for StationaryPdf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StationaryPdf")
            .field("label", &self.label)
            .field("bounds", &self.bounds)
            .field("norm", &self.norm)
            .finish()
    }
}

impl StationaryPdf {
    pub fn new<F>(label: &str, bounds: (f64, f64), density: F) -> Result<Self, QuadratureError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let integral = integrate(&density, bounds.0, bounds.1, DEFAULT_REL_TOL)?;
        Ok(Self {
            label: label.to_string(),
            bounds,
            density: Arc::new(density),
            norm: integral.value,
            norm_error: integral.error,
        })
    }

    pub fn unnormalized(&self, x: f64) -> f64 {
        (self.density)(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (self.density)(x) / self.norm
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn normalization_error(&self) -> f64 {
        self.norm_error
    }

    /// Stationary expectation of `g`.
    pub fn expectation<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64, QuadratureError> {
        let (a, b) = self.bounds;
        integrate(|x| g(x) * self.pdf(x), a, b, DEFAULT_REL_TOL).map(|r| r.value)
    }

    /// Probability of [lo, hi].
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64, QuadratureError> {
        integrate(|x| self.pdf(x), lo, hi, DEFAULT_REL_TOL).map(|r| r.value)
    }

    /// Rejection sample from a uniform proposal on finite bounds; `ceiling`
    /// must bound the unnormalized density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, ceiling: f64) -> f64 {
        let (a, b) = self.bounds;
        loop {
            let x = rng.random_range(a..b);
            if rng.random::<f64>() * ceiling <= (self.density)(x) {
                return x;
            }
        }
    }
}

/// (1 − z⁴)^{-1/2}(1 + z²)^{-1} on [−1, 1].
pub fn stationary_pdf_z() -> Result<StationaryPdf, QuadratureError> {
    StationaryPdf::new("z", (-1.0, 1.0), |z: f64| {
        let z2 = z * z;
        1.0 / ((1.0 - z2 * z2).sqrt() * (1.0 + z2))
    })
}

/// (1 + cos²θ)^{-3/2} on [0, π].
pub fn stationary_pdf_theta() -> Result<StationaryPdf, QuadratureError> {
    StationaryPdf::new("theta", (0.0, PI), |t: f64| (1.0 + t.cos().powi(2)).powf(-1.5))
}

/// x⁻⁴ exp(−1/x²) on [0, ∞), the stationary density of dx = x dt + x² dW.
/// Its normalized form is 4π^{-1/2} x⁻⁴ exp(−1/x²).
pub fn stationary_pdf_quadratic_noise() -> Result<StationaryPdf, QuadratureError> {
    StationaryPdf::new("x", (0.0, f64::INFINITY), |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            let s = 1.0 / (x * x);
            s * s * (-s).exp()
        }
    })
}
