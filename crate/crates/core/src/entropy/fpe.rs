//! One-dimensional Fokker–Planck solver on a cell-centred finite-volume grid.
//!
//! The current J = A p − ∂(D p)/∂x is discretized with the
//! Scharfetter–Gummel flux, which is exact for piecewise-constant A/D and
//! keeps densities non-negative across the steep layers near degenerate
//! walls. Walls are no-flux, so total mass is conserved to roundoff.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::system::{drift_vector, SdeSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpeError {
    #[error("time step {dt:e} exceeds the explicit stability limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("the Fokker–Planck solver needs a one-dimensional system, got {0} coordinates")]
    NotOneDimensional(usize),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid time stepping: {0}")]
    Time(String),
}

/// Cell densities on a 1-D grid with arbitrary cell widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Pdf1DGrid {
    /// Cell boundaries, strictly increasing, one more than `p`.
    pub edges: Vec<f64>,
    /// Density value per cell; the mass of cell i is p[i]·(edges[i+1] − edges[i]).
    pub p: Vec<f64>,
    pub time: f64,
}

impl Pdf1DGrid {
    pub fn from_edges(edges: Vec<f64>, p: Vec<f64>) -> Result<Self, FpeError> {
        if edges.len() < 3 || edges.len() != p.len() + 1 {
            return Err(FpeError::Grid("need at least two cells and one density per cell".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(FpeError::Grid("edges must be finite and strictly increasing".into()));
        }
        if p.iter().any(|v| !(*v >= 0.0)) {
            return Err(FpeError::Grid("densities must be non-negative".into()));
        }
        Ok(Self { edges, p, time: 0.0 })
    }

    pub fn uniform_edges(a: f64, b: f64, cells: usize) -> Vec<f64> {
        let h = (b - a) / cells as f64;
        (0..=cells).map(|i| if i == cells { b } else { a + i as f64 * h }).collect()
    }

    /// Cell averages of `f` by the midpoint rule, normalized to unit mass.
    pub fn from_fn<F: Fn(f64) -> f64>(edges: Vec<f64>, f: F) -> Result<Self, FpeError> {
        let p = edges.windows(2).map(|w| f(0.5 * (w[0] + w[1])).max(0.0)).collect();
        let mut g = Self::from_edges(edges, p)?;
        if g.mass() <= 0.0 {
            return Err(FpeError::Grid("density has zero mass".into()));
        }
        g.normalize();
        Ok(g)
    }

    pub fn cells(&self) -> usize {
        self.p.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().zip(self.edges.windows(2)).map(|(p, w)| p * (w[1] - w[0])).sum()
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        self.p.iter_mut().for_each(|v| *v /= m);
    }

    /// ∫|p − q| over the grid.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.p.iter().zip(&other.p).zip(self.widths()).map(|((a, b), w)| (a - b).abs() * w).sum()
    }

    /// ∫|p − f| with f sampled at cell centres.
    pub fn l1_to<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.p.iter().zip(self.edges.windows(2)).map(|(p, w)| (p - f(0.5 * (w[0] + w[1]))).abs() * (w[1] - w[0])).sum()
    }

    /// Linear interpolation between cell centres, constant beyond the
    /// outermost centres.
    pub fn interpolate(&self, x: f64) -> f64 {
        let c = self.centers();
        let n = c.len();
        if x <= c[0] {
            return self.p[0];
        }
        if x >= c[n - 1] {
            return self.p[n - 1];
        }
        let i = c.partition_point(|&v| v <= x) - 1;
        let t = (x - c[i]) / (c[i + 1] - c[i]);
        self.p[i] * (1.0 - t) + self.p[i + 1] * t
    }
}

/// B(s) = s/(eˢ − 1).
fn bernoulli(s: f64) -> f64 {
    if s.abs() < 1e-10 {
        1.0 - 0.5 * s
    } else {
        s / s.exp_m1()
    }
}

/// The discrete generator dp/dt = L p as a tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct FpeOperator {
    pub edges: Vec<f64>,
    centers: Vec<f64>,
    /// D at cell centres.
    d_center: Vec<f64>,
    /// Per interior face i (between cells i and i+1): centre spacing and s = (A/D)·h.
    face_h: Vec<f64>,
    face_s: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl FpeOperator {
    pub fn new(system: &dyn SdeSystem, edges: &[f64]) -> Result<Self, FpeError> {
        if system.dim() != 1 {
            return Err(FpeError::NotOneDimensional(system.dim()));
        }
        let n = edges.len() - 1;
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        let d_at = |x: f64| system.diffusion(&[x])[(0, 0)];
        let d_center: Vec<f64> = centers.iter().map(|&c| d_at(c)).collect();
        let mut face_h = Vec::with_capacity(n - 1);
        let mut face_s = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let xf = edges[i + 1];
            let d = d_at(xf);
            if !(d > 0.0) {
                return Err(FpeError::Grid(format!("diffusion vanishes at interior face {xf}")));
            }
            let h = centers[i + 1] - centers[i];
            face_h.push(h);
            face_s.push(drift_vector(system, &[xf])[0] / d * h);
        }
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for f in 0..n - 1 {
            // J_f = (B(−s) D_i p_i − B(s) D_{i+1} p_{i+1}) / h
            let (h, s) = (face_h[f], face_s[f]);
            let out_left = bernoulli(-s) * d_center[f] / h;
            let in_right = bernoulli(s) * d_center[f + 1] / h;
            diag[f] -= out_left / widths[f];
            upper[f] += in_right / widths[f];
            diag[f + 1] -= in_right / widths[f + 1];
            lower[f + 1] += out_left / widths[f + 1];
        }
        Ok(Self { edges: edges.to_vec(), centers, d_center, face_h, face_s, lower, diag, upper })
    }

    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn diffusion_at_centers(&self) -> &[f64] {
        &self.d_center
    }

    /// Current through interior face f (between cells f and f+1).
    pub fn face_flux(&self, p: &[f64], f: usize) -> f64 {
        let (h, s) = (self.face_h[f], self.face_s[f]);
        (bernoulli(-s) * self.d_center[f] * p[f] - bernoulli(s) * self.d_center[f + 1] * p[f + 1]) / h
    }

    /// Largest explicit step that keeps every diagonal entry of I + dt L
    /// non-negative.
    pub fn explicit_limit(&self) -> f64 {
        1.0 / self.diag.iter().fold(0.0_f64, |m, d| m.max(-d))
    }

    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let n = p.len();
        for i in 0..n {
            let mut v = self.diag[i] * p[i];
            if i > 0 {
                v += self.lower[i] * p[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * p[i + 1];
            }
            out[i] = v;
        }
    }

    /// Solve (I − dt L) x = rhs in place by the Thomas algorithm.
    pub fn solve_implicit(&self, rhs: &mut [f64], dt: f64) {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut b0 = 1.0 - dt * self.diag[0];
        c[0] = -dt * self.upper[0] / b0;
        rhs[0] /= b0;
        for i in 1..n {
            let a = -dt * self.lower[i];
            b0 = 1.0 - dt * self.diag[i] - a * c[i - 1];
            c[i] = if i + 1 < n { -dt * self.upper[i] / b0 } else { 0.0 };
            rhs[i] = (rhs[i] - a * rhs[i - 1]) / b0;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
    }
}

/// A time-stepping rule for the discrete Fokker–Planck equation.
pub trait FpeScheme: Send + Sync {
    fn name(&self) -> String;

    fn check(&self, op: &FpeOperator, dt: f64) -> Result<(), FpeError>;

    fn step(&self, op: &FpeOperator, p: &mut [f64], dt: f64);
}

/// Forward Euler; conditionally stable.
pub struct Explicit;

impl FpeScheme for Explicit {
    fn name(&self) -> String {
        "explicit".into()
    }

    fn check(&self, op: &FpeOperator, dt: f64) -> Result<(), FpeError> {
        let limit = op.explicit_limit();
        if dt > limit {
            return Err(FpeError::Cfl { dt, limit });
        }
        Ok(())
    }

    fn step(&self, op: &FpeOperator, p: &mut [f64], dt: f64) {
        let mut lp = vec![0.0; p.len()];
        op.apply(p, &mut lp);
        for (v, d) in p.iter_mut().zip(lp) {
            *v += dt * d;
        }
    }
}

/// Backward Euler; unconditionally stable and positivity preserving.
pub struct Implicit;

impl FpeScheme for Implicit {
    fn name(&self) -> String {
        "implicit".into()
    }

    fn check(&self, _op: &FpeOperator, _dt: f64) -> Result<(), FpeError> {
        Ok(())
    }

    fn step(&self, op: &FpeOperator, p: &mut [f64], dt: f64) {
        op.solve_implicit(p, dt);
    }
}

pub struct FpeSchemeRegistry {
    schemes: BTreeMap<String, Arc<dyn FpeScheme>>,
}

impl Default for FpeSchemeRegistry {
    fn default() -> Self {
        let mut r = Self { schemes: BTreeMap::new() };
        r.register(Arc::new(Explicit));
        r.register(Arc::new(Implicit));
        r
    }
}

impl FpeSchemeRegistry {
    pub fn register(&mut self, scheme: Arc<dyn FpeScheme>) {
        self.schemes.insert(scheme.name(), scheme);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FpeScheme>, FpeError> {
        self.schemes.get(name).cloned().ok_or_else(|| FpeError::UnknownScheme(name.to_string()))
    }
}

#[derive(Clone)]
pub struct FpeOptions {
    pub scheme: Arc<dyn FpeScheme>,
    /// Times at which to keep a copy of the density.
    pub snapshots: Vec<f64>,
}

impl Default for FpeOptions {
    fn default() -> Self {
        Self { scheme: Arc::new(Explicit), snapshots: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct FpeSolution {
    pub last: Pdf1DGrid,
    /// Densities at the first step reaching each requested snapshot time.
    pub snapshots: Vec<Pdf1DGrid>,
}

/// Evolve `initial` to `t_end` with the explicit scheme.
pub fn fpe_solve_1d(system: &dyn SdeSystem, initial: &Pdf1DGrid, dt: f64, t_end: f64) -> Result<Pdf1DGrid, FpeError> {
    Ok(fpe_solve_1d_with(system, initial, dt, t_end, &FpeOptions::default())?.last)
}

pub fn fpe_solve_1d_with(
    system: &dyn SdeSystem,
    initial: &Pdf1DGrid,
    dt: f64,
    t_end: f64,
    options: &FpeOptions,
) -> Result<FpeSolution, FpeError> {
    let op = FpeOperator::new(system, &initial.edges)?;
    evolve(&op, initial, dt, t_end, options)
}

/// Time stepping with a prebuilt operator.
pub fn evolve(
    op: &FpeOperator,
    initial: &Pdf1DGrid,
    dt: f64,
    t_end: f64,
    options: &FpeOptions,
) -> Result<FpeSolution, FpeError> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0) {
        return Err(FpeError::Time(format!("dt = {dt}, t_end = {t_end}")));
    }
    if op.edges != initial.edges {
        return Err(FpeError::Grid("operator and density use different grids".into()));
    }
    options.scheme.check(op, dt)?;
    let mut snaps: Vec<f64> = options.snapshots.clone();
    snaps.sort_by(f64::total_cmp);
    let mut pending = snaps.into_iter().peekable();
    let mut snapshots = Vec::new();

    let mut grid = initial.clone();
    let start = grid.time;
    let steps = ((t_end / dt) - 1e-9).ceil().max(0.0) as u64;
    while pending.peek().is_some_and(|&t| t <= start) {
        pending.next();
        snapshots.push(grid.clone());
    }
    for k in 1..=steps {
        let h = if k == steps { t_end - (steps - 1) as f64 * dt } else { dt };
        options.scheme.step(op, &mut grid.p, h);
        grid.time = start + if k == steps { t_end } else { k as f64 * dt };
        while pending.peek().is_some_and(|&t| t <= grid.time + 1e-12 * dt) {
            pending.next();
            snapshots.push(grid.clone());
        }
    }
    Ok(FpeSolution { last: grid, snapshots })
}

/// The zero-current density of the discrete operator on `edges`. Each face
/// balance fixes D_{i+1}p_{i+1} = eˢ D_i p_i, so the recursion runs in logs.
pub fn fpe_stationary_1d(system: &dyn SdeSystem, edges: &[f64]) -> Result<Pdf1DGrid, FpeError> {
    let op = FpeOperator::new(system, edges)?;
    let n = op.cells();
    let mut ln_q = vec![0.0; n];
    for f in 0..n - 1 {
        ln_q[f + 1] = ln_q[f] + op.face_s[f];
    }
    let ln_p: Vec<f64> = ln_q.iter().zip(&op.d_center).map(|(lq, d)| lq - d.ln()).collect();
    let top = ln_p.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let p = ln_p.iter().map(|v| (v - top).exp()).collect();
    let mut grid = Pdf1DGrid::from_edges(edges.to_vec(), p)?;
    grid.normalize();
    Ok(grid)
}
