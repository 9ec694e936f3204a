//! `qsd`: simulate, analyse and check quantum state diffusion of a qubit.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 verification failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use qsd_core::config::{parse_config_file, parse_list, ConfigError, Frame, RunConfig, Setup};
use qsd_core::engine::{
    integrate, run_ensemble, run_trajectory_with, EnsembleConfig, IntegratorConfig, SimError, TrajectoryOptions,
};
use qsd_core::entropy::fpe::{fpe_solve_1d_with, FpeOptions};
use qsd_core::entropy::{
    attach_system_entropy, fpe_stationary_1d, stationary_pdf_quadratic_noise, stationary_pdf_theta, stationary_pdf_z,
    EntropyMethodRegistry, EnvEntropyMethod, FpeError, FpeSchemeRegistry, Pdf1DGrid, StationaryPdf,
};
use qsd_core::io as csv;
use qsd_core::stats::{chi_square_histogram, Histogram};
use qsd_core::system::{drift_vector, SdeSystem};
use qsd_core::verify::{FlippedZDrift, VerifySuite};

#[derive(Parser)]
#[command(name = "qsd", version, about = "Quantum state diffusion of a qubit with stochastic entropy production")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory, with optional entropy columns.
    Simulate(Flags),
    /// Ensemble means and variances, with optional per-trajectory entropy traces.
    Ensemble(Flags),
    /// Histogram of a long z or theta series against the stationary density.
    Histogram(Flags),
    /// Stationary density of a one-dimensional model.
    Stationary(Flags),
    /// Fokker-Planck evolution of a one-dimensional density.
    Fpe(Flags),
    /// Run the invariant suite and print residuals.
    Verify(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// File of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// raising-lowering, weighted:GAMMA, pure-z:GAMMA, pure-theta, quadratic-noise
    #[arg(long)]
    model: Option<String>,
    /// xyz, xz, z, theta (x for quadratic-noise)
    #[arg(long)]
    frame: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ntraj: Option<usize>,
    /// Comma-separated initial point.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every STRIDE-th step.
    #[arg(long)]
    stride: Option<u64>,
    /// Worker threads for ensembles; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Level of the constant of motion for the xz frame.
    #[arg(long)]
    f0: Option<f64>,
    /// Entropy method: auto, none, or a registered name.
    #[arg(long)]
    entropy: Option<String>,
    /// Add ds_sys and ds_tot from the stationary density (1-D models).
    #[arg(long)]
    sys_entropy: bool,
    /// Ensemble: also write per-trajectory ds_env traces here.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Histogram bin width.
    #[arg(long)]
    bin_width: Option<f64>,
    /// Histogram: steps discarded before binning.
    #[arg(long)]
    burn: Option<u64>,
    /// Histogram: bin every THIN-th step.
    #[arg(long)]
    thin: Option<u64>,
    /// Histogram: run the 3-D model and bin its z (or polar angle).
    #[arg(long)]
    from_xyz: bool,
    /// Grid cells for stationary and fpe.
    #[arg(long)]
    cells: Option<usize>,
    /// Comma-separated snapshot times for fpe.
    #[arg(long)]
    times: Option<String>,
    /// fpe time stepping: explicit or implicit.
    #[arg(long)]
    scheme: Option<String>,
    /// fpe: width of the initial Gaussian.
    #[arg(long)]
    width: Option<f64>,
    /// xyz frame: step in the ball chart (chart, default) or in r itself (cartesian).
    #[arg(long)]
    stepping: Option<String>,
    #[arg(long, hide = true)]
    mutate: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut p: Vec<(&'static str, String)> = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k, v));
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        put("model", self.model.clone());
        put("frame", self.frame.clone());
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("dt", self.dt.map(|v| v.to_string()));
        put("steps", self.steps.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("ntraj", self.ntraj.map(|v| v.to_string()));
        put("init", self.init.clone());
        put("out", s(&self.out));
        put("stride", self.stride.map(|v| v.to_string()));
        put("workers", self.workers.map(|v| v.to_string()));
        put("f0", self.f0.map(|v| v.to_string()));
        put("entropy", self.entropy.clone());
        put("sys-entropy", self.sys_entropy.then(|| "true".into()));
        put("traces", s(&self.traces));
        put("bin-width", self.bin_width.map(|v| v.to_string()));
        put("burn", self.burn.map(|v| v.to_string()));
        put("thin", self.thin.map(|v| v.to_string()));
        put("from-xyz", self.from_xyz.then(|| "true".into()));
        put("cells", self.cells.map(|v| v.to_string()));
        put("times", self.times.clone());
        put("scheme", self.scheme.clone());
        put("width", self.width.map(|v| v.to_string()));
        put("stepping", self.stepping.clone());
        put("mutate", self.mutate.clone());
        p
    }

    fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            for (k, v) in parse_config_file(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in self.pairs() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

enum Failure {
    Config(String),
    Numerical(String),
    Verification,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<FpeError> for Failure {
    fn from(e: FpeError) -> Self {
        // every solver error is a rejected grid, step or scheme
        Failure::Config(e.to_string())
    }
}

fn io_failure(path: Option<&Path>, e: io::Error) -> Failure {
    let target = path.map_or("stdout".to_string(), |p| p.display().to_string());
    Failure::Config(format!("cannot write {target}: {e}"))
}

/// Runs `write` against the output file, or stdout.
fn emit<F>(path: Option<&Path>, write: F) -> Result<(), Failure>
where
    F: FnOnce(Box<dyn Write>) -> io::Result<Box<dyn Write>>,
{
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(path, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    write(sink).and_then(|mut w| w.flush()).map_err(|e| io_failure(path, e))
}

fn integrator(cfg: &RunConfig) -> Result<IntegratorConfig, Failure> {
    Ok(IntegratorConfig::new(cfg.dt, cfg.steps, cfg.seed)?.with_stride(cfg.stride)?)
}

fn meta(command: &str, cfg: &RunConfig, setup: &Setup) -> Vec<String> {
    let stepping = match (setup.frame, setup.system.chart().is_some()) {
        (Frame::Xyz, true) => " stepping=chart",
        (Frame::Xyz, false) => " stepping=cartesian",
        _ => "",
    };
    vec![format!(
        "command={command} model={} frame={} dt={} steps={} seed={} stride={} init={:?}{stepping}",
        setup.system.name(),
        setup.frame,
        cfg.dt,
        cfg.steps,
        cfg.seed,
        cfg.stride,
        setup.initial
    )]
}

/// `auto` uses the default method except in the xyz frame, where D is
/// singular everywhere and no method applies.
fn entropy_method(cfg: &RunConfig, setup: &Setup) -> Result<Option<Arc<dyn EnvEntropyMethod>>, Failure> {
    let registry = EntropyMethodRegistry::default();
    let name = cfg.options.get("entropy").map(String::as_str).unwrap_or("auto");
    let method = match name {
        "none" => return Ok(None),
        "auto" if setup.frame == Frame::Xyz => return Ok(None),
        "auto" => registry.default_for(setup.system.clone()),
        other => registry.create(other, setup.system.clone()).map_err(|e| Failure::Config(e.to_string()))?,
    };
    if !method.accepts(&setup.system.labels()) {
        return Err(Failure::Config(format!(
            "entropy method `{}` does not apply to frame `{}`",
            method.name(),
            setup.frame
        )));
    }
    Ok(Some(method))
}

fn default_edges(system: &dyn SdeSystem, cells: usize) -> Result<Vec<f64>, Failure> {
    let (a, b) = match system.interval() {
        Some((a, b)) if b.is_finite() => (a, b),
        // dx = x dt + x² dW: p vanishes faster than any power at 0 and decays as x⁻⁴
        Some(_) => (1e-3, 100.0),
        None => return Err(Failure::Config("needs a one-dimensional model (frame z, theta or x)".into())),
    };
    if cells < 3 {
        return Err(Failure::Config("cells must be at least 3".into()));
    }
    Ok(Pdf1DGrid::uniform_edges(a, b, cells))
}

fn analytic_pdf(setup: &Setup) -> Result<Option<StationaryPdf>, Failure> {
    let numeric = |e: qsd_core::quadrature::QuadratureError| Failure::Numerical(e.to_string());
    Ok(match (setup.frame, setup.system.name().as_str()) {
        (Frame::Z, "pure-z:0") => Some(stationary_pdf_z().map_err(numeric)?),
        (Frame::Theta, _) => Some(stationary_pdf_theta().map_err(numeric)?),
        (Frame::X, _) => Some(stationary_pdf_quadratic_noise().map_err(numeric)?),
        _ => None,
    })
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let setup = cfg.setup()?;
    let ic = integrator(cfg)?;
    let method = entropy_method(cfg, &setup)?;
    let opts = TrajectoryOptions { record_wiener: false, entropy: method.as_deref() };
    let mut traj = run_trajectory_with(setup.system.as_ref(), &ic, &setup.initial, opts)?;
    let mut lines = meta("simulate", cfg, &setup);
    if let Some(m) = &method {
        let flagged = traj.entropy.as_ref().map_or(0, |e| e.ledger.flagged);
        lines.push(format!("entropy={} flagged_steps={flagged}", m.name()));
    }
    if cfg.flag("sys-entropy")? {
        if method.is_none() {
            return Err(Failure::Config("sys-entropy needs an environmental entropy method".into()));
        }
        let edges = default_edges(setup.system.as_ref(), cfg.option_or("cells", 4000)?)?;
        let grid = fpe_stationary_1d(setup.system.as_ref(), &edges)?;
        traj = attach_system_entropy(traj, &[grid])?;
        lines.push("ds_sys from the stationary density".into());
    }
    emit(cfg.out.as_deref(), |w| csv::write_trajectory(w, &traj, &lines))
}

fn cmd_ensemble(cfg: &RunConfig) -> Result<(), Failure> {
    let setup = cfg.setup()?;
    let ic = integrator(cfg)?;
    let traces_path: Option<PathBuf> = cfg.option("traces")?;
    let ens = EnsembleConfig {
        n_traj: cfg.n_traj,
        workers: cfg.workers,
        keep_traces: traces_path.is_some(),
        entropy: entropy_method(cfg, &setup)?,
    };
    let res = run_ensemble(setup.system.as_ref(), &ic, &setup.initial, &ens)?;
    let mut extra = Vec::new();
    if setup.frame == Frame::Z {
        // d⟨z⟩/dt = −γ − 2⟨z⟩, with −γ the drift at z = 0
        let a0 = drift_vector(setup.system.as_ref(), &[0.0])[0];
        let z0 = setup.initial[0];
        let col = res.times.iter().map(|t| a0 / 2.0 + (z0 - a0 / 2.0) * (-2.0 * t).exp()).collect();
        extra.push(("expected_mean_z".to_string(), col));
    }
    let mut lines = meta("ensemble", cfg, &setup);
    lines.push(format!("ntraj={} completed={} failed={}", cfg.n_traj, res.completed, res.failed));
    if let Some(m) = &ens.entropy {
        let flagged: usize = res.summaries.iter().filter_map(|s| s.ledger.as_ref()).map(|l| l.flagged).sum();
        lines.push(format!("entropy={} flagged_steps={flagged}", m.name()));
    }
    emit(cfg.out.as_deref(), |w| csv::write_ensemble(w, &res, &extra, &lines))?;
    if let Some(path) = traces_path {
        emit(Some(&path), |w| csv::write_entropy_traces(w, &res.traces, &lines))?;
    }
    eprintln!("{} of {} trajectories completed", res.completed, cfg.n_traj);
    for s in res.summaries.iter().filter(|s| s.failure.is_some()) {
        eprintln!("trajectory {} (seed {}): {}", s.index, s.seed, s.failure.as_deref().unwrap_or(""));
    }
    if res.failed > 0 {
        return Err(Failure::Numerical(format!("{} trajectories failed", res.failed)));
    }
    Ok(())
}

fn cmd_histogram(cfg: &RunConfig) -> Result<(), Failure> {
    let from_xyz = cfg.flag("from-xyz")?;
    let target = cfg.frame.unwrap_or(Frame::Z);
    if !matches!(target, Frame::Z | Frame::Theta) {
        return Err(Failure::Config(format!("histogram needs frame z or theta, got `{target}`")));
    }
    let setup = if from_xyz {
        let mut c = cfg.clone();
        c.frame = Some(Frame::Xyz);
        c.setup()?
    } else {
        cfg.setup()?
    };
    let reference = Setup { system: setup.system.clone(), initial: setup.initial.clone(), frame: target };
    let pdf = if from_xyz {
        match (target, setup.system.name().as_str()) {
            (Frame::Z, "raising-lowering") => Some(stationary_pdf_z().map_err(|e| Failure::Numerical(e.to_string()))?),
            (Frame::Theta, "raising-lowering") => {
                Some(stationary_pdf_theta().map_err(|e| Failure::Numerical(e.to_string()))?)
            }
            _ => None,
        }
    } else {
        analytic_pdf(&reference)?
    };
    let pdf = pdf.ok_or_else(|| {
        Failure::Config("no closed-form stationary density for this model; use raising-lowering or gamma = 0".into())
    })?;

    let ic = IntegratorConfig::new(cfg.dt, cfg.steps, cfg.seed)?;
    let burn: u64 = cfg.option_or("burn", 0)?;
    let thin: u64 = cfg.option_or("thin", 1)?;
    if thin == 0 {
        return Err(Failure::Config("thin must be at least 1".into()));
    }
    let (lo, hi) = if target == Frame::Z { (-1.0, 1.0) } else { (0.0, PI) };
    let width: f64 = cfg.option_or("bin-width", 1e-4)?;
    if !(width > 0.0 && width < hi - lo) {
        return Err(Failure::Config(format!("bin width {width} does not fit the range [{lo}, {hi}]")));
    }
    let bins = ((hi - lo) / width).round().max(1.0) as usize;
    let mut hist = Histogram::new(lo, hi, bins).map_err(|e| Failure::Config(e.to_string()))?;
    integrate(setup.system.as_ref(), &ic, &setup.initial, |ev| {
        if ev.step <= burn || ev.step % thin != 0 {
            return;
        }
        let v = if from_xyz {
            let r = ev.after;
            let c = r[2] / (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if target == Frame::Z {
                r[2]
            } else {
                c.clamp(-1.0, 1.0).acos()
            }
        } else {
            ev.after[0]
        };
        // the closed upper end belongs to the last bin
        hist.add(if v == hi { v - 0.5 * width } else { v });
    })?;
    if hist.total() == 0 {
        return Err(Failure::Config("no samples survive burn-in and thinning".into()));
    }
    let mass = |a: f64, b: f64| pdf.mass(a, b).unwrap_or(f64::NAN);
    let mut lines = meta("histogram", cfg, &setup);
    lines.push(format!("coordinate={target} burn={burn} thin={thin} bins={bins} samples={}", hist.total()));
    if let Ok(chi) = chi_square_histogram(&hist, mass, 0.02) {
        let summary = format!("chi2={:.6} dof={} p={:.6} (outer 2% excluded)", chi.statistic, chi.dof, chi.p_value);
        eprintln!("{summary}");
        lines.push(summary);
    }
    emit(cfg.out.as_deref(), |w| csv::write_histogram(w, &hist, |a, b| mass(a, b) / (b - a), &lines))
}

fn cmd_stationary(cfg: &RunConfig) -> Result<(), Failure> {
    let setup = cfg.setup()?;
    let edges = default_edges(setup.system.as_ref(), cfg.option_or("cells", 2000)?)?;
    let grid = fpe_stationary_1d(setup.system.as_ref(), &edges)?;
    let points = grid.centers();
    let pdf = analytic_pdf(&setup)?;
    let analytic: Vec<f64> = points.iter().map(|&x| pdf.as_ref().map_or(f64::NAN, |p| p.pdf(x))).collect();
    let label = setup.system.labels()[0].clone();
    let lines = meta("stationary", cfg, &setup);
    emit(cfg.out.as_deref(), |w| csv::write_stationary(w, &label, &points, &analytic, &grid.p, &lines))
}

fn cmd_fpe(cfg: &RunConfig) -> Result<(), Failure> {
    let setup = cfg.setup()?;
    let edges = default_edges(setup.system.as_ref(), cfg.option_or("cells", 2000)?)?;
    let x0 = setup.initial[0];
    let width: f64 = cfg.option_or("width", 0.05)?;
    if !(width > 0.0) {
        return Err(Failure::Config("width must be positive".into()));
    }
    let mut initial = Pdf1DGrid::from_fn(edges, |x| (-0.5 * ((x - x0) / width).powi(2)).exp())?;
    if !(initial.mass() > 0.0) {
        return Err(Failure::Config("initial density has no mass on the grid".into()));
    }
    initial.normalize();
    let t_end = cfg.dt * cfg.steps as f64;
    if cfg.steps == 0 {
        return Err(Failure::Config("steps must be at least 1".into()));
    }
    let mut snapshots = match cfg.options.get("times") {
        Some(t) => parse_list("times", t)?,
        None => vec![0.0],
    };
    snapshots.push(t_end);
    let scheme = FpeSchemeRegistry::default().get(&cfg.option_or("scheme", "implicit".to_string())?)?;
    let sol = fpe_solve_1d_with(setup.system.as_ref(), &initial, cfg.dt, t_end, &FpeOptions { scheme, snapshots })?;
    if sol.last.p.iter().any(|p| !p.is_finite()) {
        return Err(Failure::Numerical("density became non-finite".into()));
    }
    let label = setup.system.labels()[0].clone();
    let lines = meta("fpe", cfg, &setup);
    emit(cfg.out.as_deref(), |w| csv::write_fpe(w, &label, &sol.snapshots, &lines))
}

fn cmd_verify(cfg: &RunConfig) -> Result<(), Failure> {
    let mut suite = VerifySuite::default();
    match cfg.options.get("mutate").map(String::as_str) {
        None => {}
        Some("z-drift-sign") => suite.z_method = Arc::new(FlippedZDrift),
        Some(other) => return Err(Failure::Config(format!("unknown mutation `{other}`"))),
    }
    let report = suite.run();
    let text = report.to_string();
    emit(cfg.out.as_deref(), |mut w| w.write_all(text.as_bytes()).map(|_| w))?;
    if cfg.out.is_some() {
        print!("{text}");
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(f) => cmd_simulate(&f.run_config()?),
        Command::Ensemble(f) => cmd_ensemble(&f.run_config()?),
        Command::Histogram(f) => cmd_histogram(&f.run_config()?),
        Command::Stationary(f) => cmd_stationary(&f.run_config()?),
        Command::Fpe(f) => cmd_fpe(&f.run_config()?),
        Command::Verify(f) => cmd_verify(&f.run_config()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}
