//! System entropy: Gibbs entropy of a gridded density, the boundary terms in
//! the mean balance, and −ln p along a trajectory.

use super::fpe::{FpeError, FpeOperator, Pdf1DGrid};
use crate::engine::{EntropyTrace, Trajectory};
use crate::entropy::EntropyLedger;
use crate::system::SdeSystem;

/// Lower clamp for p inside logarithms.
pub const P_FLOOR: f64 = 1e-300;

fn ln_p(p: f64) -> f64 {
    p.max(P_FLOOR).ln()
}

/// Gibbs entropy and boundary terms of one density snapshot. Brackets are
/// upper minus lower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SysEntropyRecord {
    pub time: f64,
    /// S_G = −∫ p ln p.
    pub gibbs: f64,
    /// [J ln p] over the coordinate domain.
    pub flux_log: f64,
    /// [D ∂p/∂x] over the coordinate domain.
    pub diffusion_gradient: f64,
    /// [D (∂ ln p/∂x)² P(Δs_sys)] over the range of Δs_sys, using
    /// P dΔs_sys = p dx so that it reads D|∂p/∂x| at the extremes of −ln p.
    pub extreme: f64,
    /// Cells where p fell below the floor.
    pub floored_cells: usize,
}

fn face_diffusion(system: &dyn SdeSystem, x: f64) -> f64 {
    system.diffusion(&[x])[(0, 0)]
}

/// D|∂p/∂x| at cell i: one-sided at the outermost cells, centred elsewhere.
fn diffusion_slope(system: &dyn SdeSystem, grid: &Pdf1DGrid, c: &[f64], i: usize) -> f64 {
    let n = c.len();
    let (slope, x) = if i == 0 {
        ((grid.p[1] - grid.p[0]) / (c[1] - c[0]), grid.edges[1])
    } else if i == n - 1 {
        ((grid.p[n - 1] - grid.p[n - 2]) / (c[n - 1] - c[n - 2]), grid.edges[n - 1])
    } else {
        ((grid.p[i + 1] - grid.p[i - 1]) / (c[i + 1] - c[i - 1]), c[i])
    };
    face_diffusion(system, x) * slope.abs()
}

fn record(system: &dyn SdeSystem, op: &FpeOperator, grid: &Pdf1DGrid) -> SysEntropyRecord {
    let n = grid.cells();
    let c = grid.centers();
    let widths = grid.widths();
    let mut gibbs = 0.0;
    let mut floored_cells = 0;
    for (p, w) in grid.p.iter().zip(&widths) {
        if *p < P_FLOOR {
            floored_cells += 1;
        } else {
            gibbs -= p * p.ln() * w;
        }
    }
    // currents at the faces next to each wall; the walls themselves carry none
    let flux_log = op.face_flux(&grid.p, n - 2) * ln_p(grid.p[n - 1]) - op.face_flux(&grid.p, 0) * ln_p(grid.p[0]);
    let grad_lo = face_diffusion(system, grid.edges[1]) * (grid.p[1] - grid.p[0]) / (c[1] - c[0]);
    let grad_hi =
        face_diffusion(system, grid.edges[n - 1]) * (grid.p[n - 1] - grid.p[n - 2]) / (c[n - 1] - c[n - 2]);

    let usable = |i: &usize| grid.p[*i] >= P_FLOOR;
    let i_smallest_p = (0..n).filter(usable).min_by(|&a, &b| grid.p[a].total_cmp(&grid.p[b]));
    let i_largest_p = (0..n).filter(usable).max_by(|&a, &b| grid.p[a].total_cmp(&grid.p[b]));
    let extreme = match (i_smallest_p, i_largest_p) {
        // Δs_sys = −ln p is largest where p is smallest
        (Some(hi), Some(lo)) => diffusion_slope(system, grid, &c, hi) - diffusion_slope(system, grid, &c, lo),
        _ => 0.0,
    };
    SysEntropyRecord {
        time: grid.time,
        gibbs,
        flux_log,
        diffusion_gradient: grad_hi - grad_lo,
        extreme,
        floored_cells,
    }
}

/// Gibbs entropy and boundary terms for each density in `series`.
pub fn ds_sys_mean(system: &dyn SdeSystem, series: &[Pdf1DGrid]) -> Result<Vec<SysEntropyRecord>, FpeError> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    if series.iter().any(|g| g.edges != first.edges) {
        return Err(FpeError::Grid("snapshots must share one grid".into()));
    }
    let op = FpeOperator::new(system, &first.edges)?;
    Ok(series.iter().map(|g| record(system, &op, g)).collect())
}

/// Mean system entropy production rate between consecutive records:
/// dS_G/dt − [J ln p] − [D ∂p/∂x] − [D(∂ ln p)²P], boundary terms averaged
/// over the two ends of each interval. Returns (midpoint time, rate).
pub fn mean_rates(records: &[SysEntropyRecord]) -> Vec<(f64, f64)> {
    records
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dsg = (b.gibbs - a.gibbs) / (b.time - a.time);
            let avg = |f: fn(&SysEntropyRecord) -> f64| 0.5 * (f(a) + f(b));
            let rate = dsg - avg(|r| r.flux_log) - avg(|r| r.diffusion_gradient) - avg(|r| r.extreme);
            (0.5 * (a.time + b.time), rate)
        })
        .collect()
}

/// [D p] over the grid's domain, with p extrapolated linearly from the two
/// outermost cells onto each wall. This is the correction in
/// d⟨x⟩/dt = ⟨A⟩ − [D p].
pub fn boundary_term_mean(system: &dyn SdeSystem, pdf: &Pdf1DGrid) -> f64 {
    let n = pdf.cells();
    let c = pdf.centers();
    let (a, b) = pdf.bounds();
    let extrapolate = |i: usize, j: usize, x: f64| {
        let slope = (pdf.p[j] - pdf.p[i]) / (c[j] - c[i]);
        (pdf.p[i] + slope * (x - c[i])).max(0.0)
    };
    let upper = face_diffusion(system, b) * extrapolate(n - 1, n - 2, b);
    let lower = face_diffusion(system, a) * extrapolate(0, 1, a);
    upper - lower
}

/// Limit of D p as x → ∞, from a least-squares fit of D p against 1/x² over
/// the cells with centre ≥ `from`.
pub fn dp_limit_at_infinity(system: &dyn SdeSystem, pdf: &Pdf1DGrid, from: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pdf
        .centers()
        .into_iter()
        .zip(&pdf.p)
        .filter(|(x, _)| *x >= from)
        .map(|(x, p)| (1.0 / (x * x), face_diffusion(system, x) * p))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mu, mq) = pts.iter().fold((0.0, 0.0), |(a, b), (u, q)| (a + u / n, b + q / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(sxy, sxx), (u, q)| (sxy + (u - mu) * (q - mq), sxx + (u - mu) * (u - mu)));
    Some(mq - sxy / sxx * mu)
}

/// Δs_sys = −ln p(x_t, t) + ln p(x_0, 0) along a one-dimensional trajectory,
/// reading p from the snapshot nearest in time to each sample.
pub fn attach_system_entropy(mut traj: Trajectory, series: &[Pdf1DGrid]) -> Result<Trajectory, FpeError> {
    if traj.dim() != 1 {
        return Err(FpeError::NotOneDimensional(traj.dim()));
    }
    if series.is_empty() {
        return Err(FpeError::Grid("no density snapshots".into()));
    }
    let nearest = |t: f64| {
        let i = series.partition_point(|g| g.time < t);
        if i == 0 {
            &series[0]
        } else if i == series.len() || (t - series[i - 1].time) <= (series[i].time - t) {
            &series[i - 1]
        } else {
            &series[i]
        }
    };
    let start = -ln_p(nearest(traj.times[0]).interpolate(traj.state(0)[0]));
    let sys: Vec<f64> =
        (0..traj.len()).map(|k| -ln_p(nearest(traj.times[k]).interpolate(traj.state(k)[0])) - start).collect();
    let last = sys.last().copied();
    let mut trace = traj.entropy.take().unwrap_or_else(|| EntropyTrace {
        env: vec![0.0; traj.len()],
        sys: None,
        ledger: EntropyLedger::default(),
    });
    trace.ledger.sys = last;
    trace.sys = Some(sys);
    traj.entropy = Some(trace);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::fpe::fpe_stationary_1d;
    use crate::entropy::{attach_entropy, ClosedFormTheta};
    use crate::engine::{run_trajectory, IntegratorConfig};
    use crate::system::{PureZ, QuadraticNoise, Theta};
    use std::f64::consts::PI;

    /// dx = √2 dW on [0, π]: A = 0, D = 1.
    struct Flat;

    impl SdeSystem for Flat {
        fn name(&self) -> String {
            "flat".into()
        }
        fn labels(&self) -> Vec<String> {
            vec!["x".into()]
        }
        fn noise_count(&self) -> usize {
            1
        }
        fn drift(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn noise(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 2f64.sqrt();
        }
    }

    #[test]
    fn uniform_density() {
        let g = Pdf1DGrid::from_fn(Pdf1DGrid::uniform_edges(0.0, PI, 100), |_| 1.0).unwrap();
        let r = ds_sys_mean(&Flat, std::slice::from_ref(&g)).unwrap()[0];
        assert!((r.gibbs - PI.ln()).abs() < 1e-12);
        assert!(r.flux_log.abs() < 1e-12);
        assert!(r.diffusion_gradient.abs() < 1e-12);
        assert!(r.extreme.abs() < 1e-12);
        assert!(boundary_term_mean(&Flat, &g).abs() < 1e-12);
    }

    #[test]
    fn stationary_boundary_terms() {
        let th = fpe_stationary_1d(&Theta, &Pdf1DGrid::uniform_edges(0.0, PI, 2000)).unwrap();
        assert!(boundary_term_mean(&Theta, &th).abs() < 1e-8);
        let z = PureZ::new(0.0).unwrap();
        let zg = fpe_stationary_1d(&z, &Pdf1DGrid::uniform_edges(-1.0, 1.0, 2000)).unwrap();
        assert_eq!(boundary_term_mean(&z, &zg), 0.0);
    }

    #[test]
    fn stationary_theta_has_no_mean_production() {
        let th = fpe_stationary_1d(&Theta, &Pdf1DGrid::uniform_edges(0.0, PI, 4000)).unwrap();
        let mut later = th.clone();
        later.time = 1.0;
        let recs = ds_sys_mean(&Theta, &[th, later]).unwrap();
        assert!(recs[0].flux_log.abs() < 1e-10);
        assert!(recs[0].diffusion_gradient.abs() < 1e-2);
        let rates = mean_rates(&recs);
        assert!(rates[0].1.abs() < 1e-2);
    }

    #[test]
    fn dp_limit_for_quadratic_noise() {
        let g = fpe_stationary_1d(&QuadraticNoise, &Pdf1DGrid::uniform_edges(1e-3, 100.0, 100_000)).unwrap();
        let lim = dp_limit_at_infinity(&QuadraticNoise, &g, 10.0).unwrap();
        assert!((lim - 2.0 / PI.sqrt()).abs() < 1e-3, "{lim}");
    }

    #[test]
    fn ledger_decomposes() {
        let cfg = IntegratorConfig::new(1e-3, 500, 4).unwrap();
        let traj = run_trajectory(&Theta, &cfg, &[1.0]).unwrap();
        let traj = attach_entropy(traj, &ClosedFormTheta).unwrap();
        let st = fpe_stationary_1d(&Theta, &Pdf1DGrid::uniform_edges(0.0, PI, 500)).unwrap();
        let traj = attach_system_entropy(traj, &[st]).unwrap();
        let e = traj.entropy.unwrap();
        let tot = e.total().unwrap();
        let sys = e.sys.as_ref().unwrap();
        for k in 0..tot.len() {
            assert_eq!(tot[k], sys[k] + e.env[k]);
        }
        assert_eq!(e.ledger.total(), Some(e.ledger.sys.unwrap() + e.ledger.env));
    }
}
