//! Small statistics helpers shared by the simulator tests and experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new(value: f64) -> Self {
        CompensatedSum {
            sum: value,
            compensation: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSe { mean, se: f64::NAN, n };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// Pearson chi-square goodness of fit; returns `(statistic, p_value)`.
///
/// `expected_probs` must sum to one; categories with zero expected
/// probability must have zero counts.
pub fn chi_square_gof(counts: &[u64], expected_probs: &[f64]) -> (f64, f64) {
    assert_eq!(counts.len(), expected_probs.len());
    let total: u64 = counts.iter().sum();
    let n = total as f64;
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&c, &p) in counts.iter().zip(expected_probs) {
        if p > 0.0 {
            let e = n * p;
            stat += (c as f64 - e).powi(2) / e;
            dof += 1;
        } else if c > 0 {
            return (f64::INFINITY, 0.0);
        }
    }
    let dof = dof.saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    (stat, 1.0 - dist.cdf(stat))
}

/// Two-sample chi-square test of homogeneity on a `2 x k` table.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let n = na + nb;
    let mut stat = 0.0;
    let mut cats = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cats += 1;
        let ea = na * col / n;
        let eb = nb * col / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = cats.saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    (stat, 1.0 - dist.cdf(stat))
}

/// Binomial standard error `sqrt(p(1-p)/n)`.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Wilson score interval for `successes / n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::new(1e8);
        let mut naive = 1e8;
        for _ in 0..1_000_000 {
            c.add(1e-3);
            naive += 1e-3;
        }
        assert!((c.value() - (1e8 + 1e3)).abs() < 1e-7);
        assert!((naive - (1e8 + 1e3_f64)).abs() > (c.value() - (1e8 + 1e3)).abs());
    }

    #[test]
    fn mean_and_se() {
        let m = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m.mean, 2.5);
        assert_relative_eq!(m.se, (1.666_666_666_666_666_7_f64 / 4.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (stat, p) = chi_square_gof(&[25, 25, 50], &[0.25, 0.25, 0.5]);
        assert_eq!(stat, 0.0);
        assert_relative_eq!(p, 1.0);
        let (_, p) = chi_square_gof(&[90, 10], &[0.5, 0.5]);
        assert!(p < 1e-10);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        let (lo, _) = wilson_interval(1, 100, 1.645);
        assert!(lo > 0.0);
        let (lo, _) = wilson_interval(0, 100, 1.645);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn slope_and_median() {
        assert_relative_eq!(ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), 2.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
