//! Stochastic entropy production: the environmental part per step, the
//! system part through the Fokker–Planck density, and the boundary terms
//! that enter mean balances.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{EntropyTrace, Trajectory};
use crate::system::{ChartedSystem, SdeSystem};

pub mod env;
pub mod fpe;
pub mod stationary;
pub mod sys;

pub use env::{ds_env_general, ds_env_theta, ds_env_z, theta_drift, z_drift, SINGULAR_EPS};
pub use fpe::{
    fpe_solve_1d, fpe_stationary_1d, FpeError, FpeOperator, FpeOptions, FpeScheme, FpeSchemeRegistry, Pdf1DGrid,
};
pub use stationary::{stationary_pdf_quadratic_noise, stationary_pdf_theta, stationary_pdf_z, StationaryPdf};
pub use sys::{attach_system_entropy, boundary_term_mean, ds_sys_mean, mean_rates, SysEntropyRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("diffusion matrix is singular at {state:?}")]
    SingularDiffusion { state: Vec<f64> },
    #[error("coordinate {coordinate} is within the singular region of the closed form")]
    NearSingularity { coordinate: f64 },
    #[error("unknown entropy method `{0}`")]
    UnknownMethod(String),
    #[error("entropy method `{method}` does not apply to coordinates {labels:?}")]
    FrameMismatch { method: String, labels: Vec<String> },
}

/// Running totals along one trajectory, in units of k_B.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntropyLedger {
    pub env: f64,
    pub sys: Option<f64>,
    /// Steps whose environmental increment could not be evaluated.
    pub flagged: usize,
    /// Per-step environmental increments (NaN for flagged steps), if kept.
    pub increments: Option<Vec<f64>>,
}

impl EntropyLedger {
    pub fn retaining() -> Self {
        Self { increments: Some(Vec::new()), ..Self::default() }
    }

    /// Add one environmental increment, or count the step as flagged.
    pub fn record(&mut self, increment: Result<f64, EntropyError>) {
        let value = match increment {
            Ok(v) if v.is_finite() => {
                self.env += v;
                v
            }
            _ => {
                self.flagged += 1;
                f64::NAN
            }
        };
        if let Some(inc) = self.increments.as_mut() {
            inc.push(value);
        }
    }

    /// Δs_tot = Δs_sys + Δs_env.
    pub fn total(&self) -> Option<f64> {
        self.sys.map(|s| s + self.env)
    }
}

/// A way of evaluating dΔs_env from one step of a trajectory.
pub trait EnvEntropyMethod: Send + Sync {
    fn name(&self) -> String;

    /// Whether trajectories with these coordinate labels can be processed.
    fn accepts(&self, labels: &[String]) -> bool;

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError>;
}

/// The full formula with derivatives taken from `system`.
pub struct General {
    system: Arc<dyn SdeSystem>,
}

impl General {
    pub fn new(system: Arc<dyn SdeSystem>) -> Self {
        Self { system }
    }
}

impl EnvEntropyMethod for General {
    fn name(&self) -> String {
        "general".into()
    }

    fn accepts(&self, labels: &[String]) -> bool {
        labels == self.system.labels().as_slice()
    }

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
        ds_env_general(self.system.as_ref(), x, dx, dt)
    }
}

/// The general formula evaluated in the system's integration chart, with the
/// Jacobian term that converts the result back:
/// dΔs_env(x) = dΔs_env(ξ) + d ln|det ∂ξ/∂x|.
/// Where D degenerates at the chart boundary this avoids the cancellation
/// between O(1/det D) terms that the literal form suffers in x.
pub struct InChart {
    charted: Arc<ChartedSystem>,
}

impl InChart {
    /// `None` if `system` has no chart.
    pub fn new(system: Arc<dyn SdeSystem>) -> Option<Self> {
        ChartedSystem::new(system).map(|c| Self { charted: Arc::new(c) })
    }
}

impl EnvEntropyMethod for InChart {
    fn name(&self) -> String {
        "general-chart".into()
    }

    fn accepts(&self, labels: &[String]) -> bool {
        labels == self.charted.inner().labels().as_slice()
    }

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
        let next: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + b).collect();
        let singular = || EntropyError::SingularDiffusion { state: x.to_vec() };
        let xi0 = self.charted.to_chart(x).ok_or_else(singular)?;
        let xi1 = self.charted.to_chart(&next).ok_or_else(singular)?;
        let dxi: Vec<f64> = xi1.iter().zip(&xi0).map(|(a, b)| a - b).collect();
        let chart = self.charted.chart_ref();
        let jacobian = chart.log_det_jacobian(&xi1) - chart.log_det_jacobian(&xi0);
        Ok(ds_env_general(self.charted.as_ref(), &xi0, &dxi, dt)? + jacobian)
    }
}

fn is_single(labels: &[String], want: &str) -> bool {
    labels.len() == 1 && labels[0] == want
}

pub struct ClosedFormZ;

impl EnvEntropyMethod for ClosedFormZ {
    fn name(&self) -> String {
        "closed-form-z".into()
    }

    fn accepts(&self, labels: &[String]) -> bool {
        is_single(labels, "z")
    }

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
        ds_env_z(x[0], dx[0], dt)
    }
}

pub struct ClosedFormTheta;

impl EnvEntropyMethod for ClosedFormTheta {
    fn name(&self) -> String {
        "closed-form-theta".into()
    }

    fn accepts(&self, labels: &[String]) -> bool {
        is_single(labels, "theta")
    }

    fn increment(&self, x: &[f64], dx: &[f64], dt: f64) -> Result<f64, EntropyError> {
        ds_env_theta(x[0], dx[0], dt)
    }
}

type MethodBuilder = Box<dyn Fn(Arc<dyn SdeSystem>) -> Arc<dyn EnvEntropyMethod> + Send + Sync>;

/// Entropy methods by name. Builders receive the system being simulated.
pub struct EntropyMethodRegistry {
    builders: BTreeMap<String, MethodBuilder>,
}

impl Default for EntropyMethodRegistry {
    fn default() -> Self {
        let mut r = Self { builders: BTreeMap::new() };
        r.register("general", |s| Arc::new(General::new(s)));
        r.register("general-chart", |s| match InChart::new(s.clone()) {
            Some(m) => Arc::new(m),
            None => Arc::new(General::new(s)),
        });
        r.register("closed-form-z", |_| Arc::new(ClosedFormZ));
        r.register("closed-form-theta", |_| Arc::new(ClosedFormTheta));
        r
    }
}

impl EntropyMethodRegistry {
    pub fn register<F>(&mut self, name: &str, build: F)
    where
        F: Fn(Arc<dyn SdeSystem>) -> Arc<dyn EnvEntropyMethod> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Box::new(build));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str, system: Arc<dyn SdeSystem>) -> Result<Arc<dyn EnvEntropyMethod>, EntropyError> {
        let build = self.builders.get(name).ok_or_else(|| EntropyError::UnknownMethod(name.to_string()))?;
        Ok(build(system))
    }

    /// The closed form matching a one-dimensional frame, otherwise the
    /// general formula, evaluated in the integration chart when there is one.
    pub fn default_for(&self, system: Arc<dyn SdeSystem>) -> Arc<dyn EnvEntropyMethod> {
        let labels = system.labels();
        let name = if is_single(&labels, "theta") {
            "closed-form-theta"
        } else if is_single(&labels, "z") && system.name() == "pure-z:0" {
            "closed-form-z"
        } else if system.chart().is_some() {
            "general-chart"
        } else {
            "general"
        };
        self.create(name, system).expect("built-in method")
    }
}

/// Accumulate dΔs_env along the recorded samples of `traj`. Steps where the
/// method fails are skipped and counted in the ledger. Only the projected
/// states are recorded, so a step that was reflected at a wall is scored as
/// the projected move, unlike in the ledger kept during integration.
pub fn attach_entropy(mut traj: Trajectory, method: &dyn EnvEntropyMethod) -> Result<Trajectory, EntropyError> {
    if !method.accepts(&traj.labels) {
        return Err(EntropyError::FrameMismatch { method: method.name(), labels: traj.labels.clone() });
    }
    let dt = traj.dt * traj.record_stride as f64;
    let n = traj.dim();
    let mut ledger = EntropyLedger::retaining();
    let mut env = Vec::with_capacity(traj.len());
    env.push(0.0);
    let mut dx = vec![0.0; n];
    for k in 1..traj.len() {
        let (prev, next) = (traj.state(k - 1), traj.state(k));
        for i in 0..n {
            dx[i] = next[i] - prev[i];
        }
        ledger.record(method.increment(prev, &dx, dt));
        env.push(ledger.env);
    }
    let sys = traj.entropy.take().and_then(|e| e.sys);
    if let Some(s) = &sys {
        ledger.sys = s.last().copied();
    }
    traj.entropy = Some(EntropyTrace { env, sys, ledger });
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_trajectory, run_trajectory_with, IntegratorConfig, TrajectoryOptions};
    use crate::system::{PureZ, Theta};

    fn cubature_rate(method: &dyn EnvEntropyMethod, system: &dyn SdeSystem, x: [f64; 2], dt: f64) -> f64 {
        let h = (2.0 * dt).sqrt();
        let mut acc = 0.0;
        for c in 0..2 {
            for sg in [-1.0, 1.0] {
                let mut dw = [0.0; 2];
                dw[c] = sg * h;
                let y = crate::engine::step(system, &x, &dw, dt).unwrap();
                acc += 0.25 * method.increment(&x, &[y[0] - x[0], y[1] - x[1]], dt).unwrap();
            }
        }
        acc / dt
    }

    fn reduced_xz() -> Arc<dyn SdeSystem> {
        let bloch: Arc<dyn SdeSystem> = Arc::new(crate::lindblad::raising_lowering());
        Arc::new(crate::reduction::reduce_bloch_xz(bloch, 2.0, [0.5, 0.5]).unwrap())
    }

    #[test]
    fn chart_form_matches_literal_form_in_mean() {
        let red = reduced_xz();
        let chart = InChart::new(red.clone()).unwrap();
        let literal = General::new(red.clone());
        for x in [[0.5, 0.5], [0.9, 0.3], [-0.2, 0.4]] {
            let a = cubature_rate(&chart, red.as_ref(), x, 1e-6);
            let b = cubature_rate(&literal, red.as_ref(), x, 1e-6);
            assert!((a - b).abs() < 1e-3 * b.abs().max(1.0), "{x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn chart_form_stays_resolved_near_the_circle() {
        let red = reduced_xz();
        let chart = InChart::new(red.clone()).unwrap();
        let at = |s: f64| {
            let r = (1.0 - s).sqrt();
            cubature_rate(&chart, red.as_ref(), [-0.9777 * r, 0.2100 * r], 1e-6)
        };
        let reference = at(1e-4);
        for s in [1e-6, 1e-8] {
            assert!((at(s) - reference).abs() < 0.01 * reference.abs(), "s = {s}");
        }
        assert_eq!(EntropyMethodRegistry::default().default_for(red).name(), "general-chart");
    }

    #[test]
    fn ledger_accumulates_and_flags() {
        let mut l = EntropyLedger::retaining();
        l.record(Ok(0.5));
        l.record(Err(EntropyError::NearSingularity { coordinate: 1.0 }));
        l.record(Ok(-0.25));
        assert_eq!(l.env, 0.25);
        assert_eq!(l.flagged, 1);
        assert_eq!(l.increments.as_ref().unwrap().len(), 3);
        assert!(l.total().is_none());
        l.sys = Some(1.0);
        assert_eq!(l.total(), Some(1.25));
    }

    #[test]
    fn registry_resolves_methods() {
        let reg = EntropyMethodRegistry::default();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, ["closed-form-theta", "closed-form-z", "general", "general-chart"]);
        let theta: Arc<dyn SdeSystem> = Arc::new(Theta);
        assert_eq!(reg.default_for(theta.clone()).name(), "closed-form-theta");
        assert!(matches!(reg.create("nope", theta), Err(EntropyError::UnknownMethod(_))));
    }

    #[test]
    fn attach_matches_inline_accumulation() {
        // short enough that no step is reflected at 0 or π
        let cfg = IntegratorConfig::new(1e-3, 200, 9).unwrap();
        let start = [std::f64::consts::FRAC_PI_2];
        let traj = run_trajectory(&Theta, &cfg, &start).unwrap();
        assert!(traj.column(0).iter().all(|t| (0.3..2.8).contains(t)));
        let attached = attach_entropy(traj, &ClosedFormTheta).unwrap();
        let inline =
            run_trajectory_with(&Theta, &cfg, &start, TrajectoryOptions { record_wiener: false, entropy: Some(&ClosedFormTheta) })
                .unwrap();
        let (a, b) = (attached.entropy.unwrap(), inline.entropy.unwrap());
        assert_eq!(a.env.len(), b.env.len());
        for (x, y) in a.env.iter().zip(&b.env) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attach_rejects_wrong_frame() {
        let cfg = IntegratorConfig::new(1e-3, 10, 9).unwrap();
        let traj = run_trajectory(&Theta, &cfg, &[1.0]).unwrap();
        assert!(matches!(attach_entropy(traj, &ClosedFormZ), Err(EntropyError::FrameMismatch { .. })));
    }

    #[test]
    fn singular_encounters_are_counted() {
        let z = PureZ::new(0.0).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 10, 1).unwrap();
        let mut traj = run_trajectory(&z, &cfg, &[0.0]).unwrap();
        // force two samples onto the pole
        traj.states[3] = 1.0;
        traj.states[4] = 1.0;
        let out = attach_entropy(traj, &ClosedFormZ).unwrap();
        assert_eq!(out.entropy.unwrap().ledger.flagged, 2);
    }
}
