//! HMC against Gaussian targets with known moments.

use spatial_aft::sampler::{run_hmc, HmcConfig, LogDensity};
use spatial_aft::Result;
use statrs::distribution::{ContinuousCDF, Normal};

/// Zero-mean bivariate normal with unit variances and correlation `rho`.
struct Bivariate {
    rho: f64,
}

impl LogDensity for Bivariate {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = 1.0 - self.rho * self.rho;
        grad[0] = -(x[0] - self.rho * x[1]) / d;
        grad[1] = -(x[1] - self.rho * x[0]) / d;
        Ok(-0.5 * (x[0] * x[0] - 2.0 * self.rho * x[0] * x[1] + x[1] * x[1]) / d)
    }
}

struct StdNormal;

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad[0] = -x[0];
        Ok(-0.5 * x[0] * x[0])
    }
}

fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (n - 1.0);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    (ma, mb, va.sqrt(), vb.sqrt(), cov / (va * vb).sqrt())
}

fn check_bivariate(rho: f64, seed: u64) {
    let config = HmcConfig {
        n_warmup: 1000,
        n_draws: 4000,
        seed,
        ..HmcConfig::default()
    };
    let draws = run_hmc(&Bivariate { rho }, &[0.0, 0.0], &config).unwrap();
    assert_eq!(draws.n_rows(), 4000);
    let (ma, mb, sa, sb, r) = moments(&draws.column(0), &draws.column(1));
    for m in [ma, mb] {
        assert!(m.abs() < 0.1, "mean {m}");
    }
    for s in [sa, sb] {
        assert!((s - 1.0).abs() < 0.1, "sd {s}");
    }
    assert!((r - rho).abs() < 0.05, "correlation {r} vs {rho}");
}

#[test]
fn independent_bivariate_moments() {
    check_bivariate(0.0, 11);
}

#[test]
fn correlated_bivariate_moments() {
    check_bivariate(0.9, 12);
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

fn ks_statistic(mut x: Vec<f64>) -> f64 {
    let normal = Normal::standard();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn ks_one_dimensional_normal() {
    let passes = (0..10u64)
        .filter(|&seed| {
            let config = HmcConfig {
                n_warmup: 1000,
                n_draws: 4000,
                thin: 5,
                seed: 100 + seed,
                ..HmcConfig::default()
            };
            let draws = run_hmc(&StdNormal, &[0.0], &config).unwrap();
            let d = ks_statistic(draws.column(0));
            d < ks_critical_1pct(draws.n_rows())
        })
        .count();
    assert!(passes >= 9, "{passes}/10 seeds passed");
}

#[test]
fn identical_seed_gives_identical_draws() {
    let config = HmcConfig {
        n_warmup: 200,
        n_draws: 200,
        n_chains: 3,
        seed: 5,
        ..HmcConfig::default()
    };
    let a = run_hmc(&Bivariate { rho: 0.5 }, &[0.0, 0.0], &config).unwrap();
    let b = run_hmc(&Bivariate { rho: 0.5 }, &[0.0, 0.0], &config).unwrap();
    assert_eq!(a.values(), b.values());
}
