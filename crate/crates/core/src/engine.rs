//! Euler–Maruyama integration with deterministic seeding and a parallel
//! ensemble runner.
//!
//! Every trajectory owns a ChaCha8 stream seeded from a 64-bit seed. Ensemble
//! member `i` draws its seed from a ChaCha20 stream keyed on the master seed
//! and selected by `i` ([`child_seed`]), so results do not depend on how
//! trajectories are scheduled across workers.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::entropy::{EntropyLedger, EnvEntropyMethod};
use crate::system::{Chart, SdeSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state {0:?} lies outside the model domain")]
    InitialOutsideDomain(Vec<f64>),
    #[error("state has {got} coordinates, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite state {state:?} after step {step}")]
    NonFinite { step: u64, state: Vec<f64> },
    #[error("entropy method `{method}` does not apply to coordinates {labels:?}")]
    FrameMismatch { method: String, labels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
    pub record_stride: u64,
}

impl IntegratorConfig {
    pub fn new(dt: f64, steps: u64, seed: u64) -> Result<Self, SimError> {
        Self { dt, steps, seed, record_stride: 1 }.validated()
    }

    pub fn with_stride(mut self, stride: u64) -> Result<Self, SimError> {
        self.record_stride = stride;
        self.validated()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validated(self) -> Result<Self, SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(SimError::InvalidConfig("steps must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(SimError::InvalidConfig("record stride must be at least 1".into()));
        }
        Ok(self)
    }

    /// Number of recorded samples, including the initial state.
    pub fn sample_count(&self) -> usize {
        (self.steps / self.record_stride) as usize + 1
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Seed of ensemble member `index`: word 0 of the ChaCha20 stream `index`
/// under key `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn trajectory_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reusable Euler–Maruyama stepper with scratch buffers. Systems that
/// provide a [`Chart`] are stepped in chart coordinates and mapped back.
pub struct Stepper<'a> {
    system: &'a dyn SdeSystem,
    chart: Option<&'a dyn Chart>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    xi: Vec<f64>,
    raw: Vec<f64>,
    /// The state `xi` was last mapped to. Stepping on from the same state
    /// reuses ξ, which near the chart boundary carries more digits than
    /// φ(x) can recover.
    charted: Vec<f64>,
    cache_valid: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a dyn SdeSystem) -> Self {
        let (n, m) = (system.dim(), system.noise_count());
        let chart = system.chart();
        Self {
            system,
            chart,
            drift: vec![0.0; n],
            noise: vec![0.0; n * m],
            xi: vec![0.0; n],
            raw: vec![0.0; n],
            charted: vec![0.0; n],
            cache_valid: false,
        }
    }

    /// State after the last step before projection onto the domain.
    pub fn unprojected(&self) -> &[f64] {
        &self.raw
    }

    /// x ← project(x + A dt + B dW). Returns `false` on a non-finite result.
    pub fn advance(&mut self, x: &mut [f64], dw: &[f64], dt: f64) -> bool {
        if let Some(chart) = self.chart {
            let cached = self.cache_valid && self.charted == x;
            if cached || chart.forward(x, &mut self.xi) {
                self.system.chart_coefficients(&self.xi, &mut self.drift, &mut self.noise);
                euler(&mut self.xi, &self.drift, &self.noise, dw, dt);
                chart.inverse(&self.xi, x);
                self.raw.copy_from_slice(x);
                self.system.project(x);
                let finite = x.iter().all(|v| v.is_finite());
                self.charted.copy_from_slice(x);
                self.cache_valid = finite;
                return finite;
            }
        }
        self.cache_valid = false;
        self.system.drift(x, &mut self.drift);
        self.system.noise(x, &mut self.noise);
        euler(x, &self.drift, &self.noise, dw, dt);
        self.raw.copy_from_slice(x);
        self.system.project(x);
        x.iter().all(|v| v.is_finite())
    }
}

fn euler(x: &mut [f64], drift: &[f64], noise: &[f64], dw: &[f64], dt: f64) {
    let m = dw.len();
    for (i, xi) in x.iter_mut().enumerate() {
        let row = &noise[i * m..(i + 1) * m];
        let mut inc = drift[i] * dt;
        for (b, w) in row.iter().zip(dw) {
            inc += b * w;
        }
        *xi += inc;
    }
}

/// One Euler–Maruyama step from `state` with Wiener increment `dw`.
pub fn step(system: &dyn SdeSystem, state: &[f64], dw: &[f64], dt: f64) -> Result<Vec<f64>, SimError> {
    if state.len() != system.dim() {
        return Err(SimError::Dimension { expected: system.dim(), got: state.len() });
    }
    if dw.len() != system.noise_count() {
        return Err(SimError::Dimension { expected: system.noise_count(), got: dw.len() });
    }
    let mut x = state.to_vec();
    if !Stepper::new(system).advance(&mut x, dw, dt) {
        return Err(SimError::NonFinite { step: 1, state: x });
    }
    Ok(x)
}

/// What the integrator hands to an observer after every step.
pub struct StepEvent<'s> {
    /// 1-based step index.
    pub step: u64,
    pub time: f64,
    pub before: &'s [f64],
    pub after: &'s [f64],
    /// `after` before projection. Differs only on steps that left the domain.
    pub unprojected: &'s [f64],
    pub dw: &'s [f64],
}

/// Integrate `steps` Euler–Maruyama steps, calling `observe` after each one.
/// Returns the final state.
pub fn integrate<F>(
    system: &dyn SdeSystem,
    config: &IntegratorConfig,
    initial: &[f64],
    mut observe: F,
) -> Result<Vec<f64>, SimError>
where
    F: FnMut(&StepEvent<'_>),
{
    let config = config.validated()?;
    let (n, m) = (system.dim(), system.noise_count());
    if initial.len() != n {
        return Err(SimError::Dimension { expected: n, got: initial.len() });
    }
    if !system.in_domain(initial) {
        return Err(SimError::InitialOutsideDomain(initial.to_vec()));
    }
    let mut rng = trajectory_rng(config.seed);
    let sqrt_dt = config.dt.sqrt();
    let mut stepper = Stepper::new(system);
    let mut x = initial.to_vec();
    let mut before = x.clone();
    let mut dw = vec![0.0; m];
    for k in 1..=config.steps {
        for w in dw.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *w = g * sqrt_dt;
        }
        before.copy_from_slice(&x);
        if !stepper.advance(&mut x, &dw, config.dt) {
            return Err(SimError::NonFinite { step: k, state: x });
        }
        let ev = StepEvent {
            step: k,
            time: k as f64 * config.dt,
            before: &before,
            after: &x,
            unprojected: stepper.unprojected(),
            dw: &dw,
        };
        observe(&ev);
    }
    Ok(x)
}

/// Cumulative entropy columns sampled on the trajectory's time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub env: Vec<f64>,
    /// Only available for one-dimensional models with a solved density.
    pub sys: Option<Vec<f64>>,
    pub ledger: EntropyLedger,
}

impl EntropyTrace {
    /// Δs_tot = Δs_sys + Δs_env per sample, when the system part is known.
    pub fn total(&self) -> Option<Vec<f64>> {
        self.sys.as_ref().map(|s| s.iter().zip(&self.env).map(|(a, b)| a + b).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub dt: f64,
    pub record_stride: u64,
    pub times: Vec<f64>,
    /// Recorded states, row-major with `labels.len()` columns.
    pub states: Vec<f64>,
    /// Wiener increments of every step (only with stride 1).
    pub wiener: Option<Vec<f64>>,
    pub entropy: Option<EntropyTrace>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.states[i * n..(i + 1) * n]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.states.iter().skip(k).step_by(self.dim()).copied().collect()
    }

    pub fn column_by_label(&self, label: &str) -> Option<Vec<f64>> {
        self.labels.iter().position(|l| l == label).map(|k| self.column(k))
    }
}

#[derive(Default, Clone, Copy)]
pub struct TrajectoryOptions<'m> {
    pub record_wiener: bool,
    pub entropy: Option<&'m dyn EnvEntropyMethod>,
}

pub fn run_trajectory(
    system: &dyn SdeSystem,
    config: &IntegratorConfig,
    initial: &[f64],
) -> Result<Trajectory, SimError> {
    run_trajectory_with(system, config, initial, TrajectoryOptions::default())
}

/// Integrate one trajectory, recording every `record_stride`-th state and
/// optionally accumulating the environmental entropy step by step.
pub fn run_trajectory_with(
    system: &dyn SdeSystem,
    config: &IntegratorConfig,
    initial: &[f64],
    options: TrajectoryOptions<'_>,
) -> Result<Trajectory, SimError> {
    let config = config.validated()?;
    let labels = system.labels();
    if let Some(method) = options.entropy {
        if !method.accepts(&labels) {
            return Err(SimError::FrameMismatch { method: method.name(), labels });
        }
    }
    let samples = config.sample_count();
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples * labels.len());
    times.push(0.0);
    states.extend_from_slice(initial);
    let record_wiener = options.record_wiener && config.record_stride == 1;
    let mut wiener = record_wiener.then(|| Vec::with_capacity(config.steps as usize * system.noise_count()));
    let mut ledger = EntropyLedger::default();
    let mut env_trace = options.entropy.map(|_| {
        let mut v = Vec::with_capacity(samples);
        v.push(0.0);
        v
    });
    let mut dx = vec![0.0; labels.len()];

    integrate(system, &config, initial, |ev| {
        if let Some(w) = wiener.as_mut() {
            w.extend_from_slice(ev.dw);
        }
        if let Some(method) = options.entropy {
            // a reflected step is scored as the step actually taken
            for ((d, a), b) in dx.iter_mut().zip(ev.unprojected).zip(ev.before) {
                *d = a - b;
            }
            ledger.record(method.increment(ev.before, &dx, config.dt));
        }
        if ev.step % config.record_stride == 0 {
            times.push(ev.time);
            states.extend_from_slice(ev.after);
            if let Some(e) = env_trace.as_mut() {
                e.push(ledger.env);
            }
        }
    })?;

    Ok(Trajectory {
        labels,
        dt: config.dt,
        record_stride: config.record_stride,
        times,
        states,
        wiener,
        entropy: env_trace.map(|env| EntropyTrace { env, sys: None, ledger }),
    })
}

#[derive(Clone)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    /// Worker threads; 0 uses the global rayon pool size.
    pub workers: usize,
    pub keep_traces: bool,
    pub entropy: Option<Arc<dyn EnvEntropyMethod>>,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize) -> Self {
        Self { n_traj, workers: 0, keep_traces: false, entropy: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub index: usize,
    pub seed: u64,
    pub final_state: Option<Vec<f64>>,
    pub ledger: Option<EntropyLedger>,
    pub failure: Option<String>,
}

/// Pointwise ensemble statistics on the shared recording grid.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    /// `mean[k][t]` for coordinate k.
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance, same layout as `mean`.
    pub var: Vec<Vec<f64>>,
    pub mean_ds_env: Option<Vec<f64>>,
    pub var_ds_env: Option<Vec<f64>>,
    pub summaries: Vec<TrajectorySummary>,
    pub completed: usize,
    pub failed: usize,
    pub traces: Vec<Trajectory>,
}

impl EnsembleResult {
    /// Standard error of the mean of coordinate `k` at sample `t`.
    pub fn standard_error(&self, k: usize, t: usize) -> f64 {
        (self.var[k][t] / self.completed as f64).sqrt()
    }
}

/// Welford accumulator over a fixed-length series.
#[derive(Debug, Clone)]
struct SeriesStats {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl SeriesStats {
    fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }
}

/// Trajectories are integrated in fixed-size chunks and folded into the
/// statistics in index order.
const CHUNK: usize = 64;

pub fn run_ensemble(
    system: &dyn SdeSystem,
    config: &IntegratorConfig,
    initial: &[f64],
    ensemble: &EnsembleConfig,
) -> Result<EnsembleResult, SimError> {
    run_ensemble_from(system, config, ensemble, |_| initial.to_vec())
}

/// Ensemble with a per-member initial state, e.g. drawn from a stationary
/// density.
pub fn run_ensemble_from<F>(
    system: &dyn SdeSystem,
    config: &IntegratorConfig,
    ensemble: &EnsembleConfig,
    initial: F,
) -> Result<EnsembleResult, SimError>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let config = config.validated()?;
    if ensemble.n_traj == 0 {
        return Err(SimError::InvalidConfig("ensemble needs at least one trajectory".into()));
    }
    let labels = system.labels();
    let n = labels.len();
    if let Some(method) = ensemble.entropy.as_deref() {
        if !method.accepts(&labels) {
            return Err(SimError::FrameMismatch { method: method.name(), labels });
        }
    }
    let samples = config.sample_count();
    let times: Vec<f64> = (0..samples).map(|i| i as f64 * config.record_stride as f64 * config.dt).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ensemble.workers)
        .build()
        .map_err(|e| SimError::InvalidConfig(format!("thread pool: {e}")))?;

    let run_one = |index: usize| {
        let seed = child_seed(config.seed, index as u64);
        let cfg = config.with_seed(seed);
        let opts = TrajectoryOptions { record_wiener: false, entropy: ensemble.entropy.as_deref() };
        (index, seed, run_trajectory_with(system, &cfg, &initial(index), opts))
    };

    let mut coord_stats = SeriesStats::new(samples * n);
    let mut env_stats = ensemble.entropy.as_ref().map(|_| SeriesStats::new(samples));
    let mut summaries = Vec::with_capacity(ensemble.n_traj);
    let mut traces = Vec::new();
    let mut failed = 0;

    for start in (0..ensemble.n_traj).step_by(CHUNK) {
        let end = (start + CHUNK).min(ensemble.n_traj);
        let results: Vec<_> = pool.install(|| (start..end).into_par_iter().map(run_one).collect());
        for (index, seed, result) in results {
            match result {
                Ok(traj) => {
                    coord_stats.push(traj.states.iter().copied());
                    if let (Some(stats), Some(e)) = (env_stats.as_mut(), traj.entropy.as_ref()) {
                        stats.push(e.env.iter().copied());
                    }
                    summaries.push(TrajectorySummary {
                        index,
                        seed,
                        final_state: Some(traj.last_state().to_vec()),
                        ledger: traj.entropy.as_ref().map(|e| e.ledger.clone()),
                        failure: None,
                    });
                    if ensemble.keep_traces {
                        traces.push(traj);
                    }
                }
                Err(err @ SimError::NonFinite { .. }) => {
                    failed += 1;
                    summaries.push(TrajectorySummary {
                        index,
                        seed,
                        final_state: None,
                        ledger: None,
                        failure: Some(err.to_string()),
                    });
                }
                Err(err) => return Err(err),
            }
        }
    }

    let unflatten = |flat: &[f64]| -> Vec<Vec<f64>> {
        (0..n).map(|k| flat.iter().skip(k).step_by(n).copied().collect()).collect()
    };
    let var_flat = coord_stats.variance();
    Ok(EnsembleResult {
        labels,
        times,
        mean: unflatten(&coord_stats.mean),
        var: unflatten(&var_flat),
        mean_ds_env: env_stats.as_ref().map(|s| s.mean.clone()),
        var_ds_env: env_stats.as_ref().map(|s| s.variance()),
        summaries,
        completed: coord_stats.count,
        failed,
        traces,
    })
}
