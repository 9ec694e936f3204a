//! Goodness-of-fit helpers for comparing simulated samples with densities
//! and with each other.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("histogram needs lo < hi and at least one bin")]
    BadBins,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("observed and expected counts differ in length")]
    LengthMismatch,
    #[error("no bins with positive expected count")]
    NoDegreesOfFreedom,
}

/// Equal-width bins on [lo, hi). Samples outside are counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, StatsError> {
        if !(lo < hi) || bins == 0 {
            return Err(StatsError::BadBins);
        }
        Ok(Self { lo, hi, counts: vec![0; bins], outside: 0 })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }

    pub fn centre(&self, k: usize) -> f64 {
        let (a, b) = self.edges(k);
        0.5 * (a + b)
    }

    pub fn add(&mut self, x: f64) {
        if x >= self.lo && x < self.hi {
            let k = (((x - self.lo) / self.width()) as usize).min(self.bins() - 1);
            self.counts[k] += 1;
        } else {
            self.outside += 1;
        }
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, xs: I) {
        xs.into_iter().for_each(|x| self.add(x));
    }

    /// Samples seen, including those outside the bins.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }

    /// Empirical density in bin k relative to all samples seen.
    pub fn density(&self, k: usize) -> f64 {
        self.counts[k] as f64 / (self.total() as f64 * self.width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquare {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Pearson χ² of observed counts against expected counts. `fitted` is the
/// number of parameters estimated from the data, removed from the degrees
/// of freedom along with one for the fixed total.
pub fn chi_square(observed: &[u64], expected: &[f64], fitted: usize) -> Result<ChiSquare, StatsError> {
    if observed.len() != expected.len() {
        return Err(StatsError::LengthMismatch);
    }
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            statistic += (o as f64 - e).powi(2) / e;
            used += 1;
        }
    }
    let dof = used.checked_sub(1 + fitted).filter(|&d| d > 0).ok_or(StatsError::NoDegreesOfFreedom)?;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquare { statistic, dof, p_value: dist.sf(statistic) })
}

/// χ² of a histogram against a distribution, conditioned on the binned
/// range: samples outside the bins are dropped and `mass(lo, hi)` is
/// renormalized over the bins. Bins whose edges are not both at least
/// `exclude` of the range away from its ends are dropped too.
pub fn chi_square_histogram<M: Fn(f64, f64) -> f64>(
    hist: &Histogram,
    mass: M,
    exclude: f64,
) -> Result<ChiSquare, StatsError> {
    let margin = exclude * (hist.hi - hist.lo);
    let keep: Vec<usize> = (0..hist.bins())
        .filter(|&k| {
            let (a, b) = hist.edges(k);
            a >= hist.lo + margin - 1e-12 && b <= hist.hi - margin + 1e-12
        })
        .collect();
    let observed: Vec<u64> = keep.iter().map(|&k| hist.counts[k]).collect();
    let masses: Vec<f64> = keep
        .iter()
        .map(|&k| {
            let (a, b) = hist.edges(k);
            mass(a, b)
        })
        .collect();
    let n: u64 = observed.iter().sum();
    let total_mass: f64 = masses.iter().sum();
    let expected: Vec<f64> = masses.iter().map(|m| n as f64 * m / total_mass).collect();
    chi_square(&observed, &expected, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovSmirnov {
    /// sup |F₁ − F₂|
    pub distance: f64,
    /// Rejection threshold at the requested level.
    pub critical: f64,
}

impl KolmogorovSmirnov {
    pub fn passes(&self) -> bool {
        self.distance < self.critical
    }
}

/// Asymptotic two-sample critical value c(α)√((n + m)/(nm)) with
/// c(α) = √(−ln(α/2)/2).
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KolmogorovSmirnov, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples { need: 1, got: a.len().min(b.len()) });
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sort(a), sort(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut distance) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        distance = distance.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KolmogorovSmirnov { distance, critical: ks_critical(alpha, a.len(), b.len()) })
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Centred moving average; the window shrinks at the ends.
pub fn moving_average(xs: &[f64], half_width: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Ordinary least-squares slope of ys against xs.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn histogram_bins_and_density() {
        let mut h = Histogram::new(0.0, 1.0, 4).unwrap();
        h.extend([0.0, 0.1, 0.3, 0.99, 1.0, -0.2]);
        assert_eq!(h.counts, vec![2, 1, 0, 1]);
        assert_eq!(h.outside, 2);
        assert_eq!(h.total(), 6);
        assert!((h.density(0) - 2.0 / (6.0 * 0.25)).abs() < 1e-15);
        assert!(Histogram::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn chi_square_matches_hand_computation() {
        // (10−12)²/12 + (14−12)²/12 + (12−12)²/12 = 2/3 on 2 dof
        let r = chi_square(&[10, 14, 12], &[12.0, 12.0, 12.0], 0).unwrap();
        assert!((r.statistic - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.dof, 2);
        // survival of χ²₂ is exp(−x/2)
        assert!((r.p_value - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn uniform_samples_pass_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = Histogram::new(0.0, 1.0, 20).unwrap();
        h.extend((0..20_000).map(|_| rng.random::<f64>()));
        let expected = vec![1000.0; 20];
        assert!(chi_square(&h.counts, &expected, 0).unwrap().passes(0.01));
        let skewed = (0..20).map(|k| 2000.0 * (k as f64 + 0.5) / 20.0).collect::<Vec<_>>();
        assert!(!chi_square(&h.counts, &skewed, 0).unwrap().passes(0.01));
    }

    #[test]
    fn histogram_test_conditions_on_the_kept_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // density 2x on [0, 1]
        let xs: Vec<f64> = (0..40_000).map(|_| rng.random::<f64>().sqrt()).collect();
        let mut h = Histogram::new(0.0, 1.0, 50).unwrap();
        h.extend(xs.iter().copied());
        let right = chi_square_histogram(&h, |a, b| b * b - a * a, 0.02).unwrap();
        assert_eq!(right.dof, 47);
        assert!(right.passes(0.01), "{right:?}");
        assert!(!chi_square_histogram(&h, |a, b| b - a, 0.02).unwrap().passes(0.01));
    }

    #[test]
    fn ks_distance_and_critical_value() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5], 0.05).unwrap();
        assert!((r.distance - 1.0 / 3.0).abs() < 1e-15);
        let separated = ks_two_sample(&[0.0, 1.0], &[2.0, 3.0], 0.05).unwrap();
        assert_eq!(separated.distance, 1.0);
        // c(0.01) ≈ 1.6276
        assert!((ks_critical(0.01, 200, 200) - 1.6276 * 0.1).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_same_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        assert!(ks_two_sample(&a, &b, 0.01).unwrap().passes());
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(!ks_two_sample(&a, &c, 0.01).unwrap().passes());
    }

    #[test]
    fn smoothing_and_slope() {
        assert_eq!(moving_average(&[0.0, 3.0, 6.0, 9.0], 1), vec![1.5, 3.0, 6.0, 7.5]);
        assert!((ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
        let (m, se) = mean_and_se(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
