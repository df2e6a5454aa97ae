//! Stepping-stone evidence against a closed-form marginal likelihood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spatial_aft::analyze::{log_marginal_stepping_stone, SteppingStoneConfig, TemperedTarget};
use spatial_aft::sampler::HmcConfig;
use spatial_aft::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `y_i ~ N(theta, 1)`, `theta ~ N(0, tau^2)`.
struct NormalNormal {
    y: Vec<f64>,
    tau: f64,
}

impl NormalNormal {
    fn exact_log_marginal(&self) -> f64 {
        let n = self.y.len() as f64;
        let s: f64 = self.y.iter().sum();
        let ss: f64 = self.y.iter().map(|v| v * v).sum();
        let t2 = self.tau * self.tau;
        -0.5 * n * LN_2PI - 0.5 * (1.0 + n * t2).ln() - 0.5 * (ss - t2 * s * s / (1.0 + n * t2))
    }
}

impl TemperedTarget for NormalNormal {
    fn dim(&self) -> usize {
        1
    }

    fn log_lik_and_prior(&self, x: &[f64], grad_lik: &mut [f64], grad_prior: &mut [f64]) -> Result<(f64, f64)> {
        let th = x[0];
        grad_lik[0] = self.y.iter().map(|v| v - th).sum();
        grad_prior[0] = -th / (self.tau * self.tau);
        let lp = -0.5 * LN_2PI - self.tau.ln() - 0.5 * th * th / (self.tau * self.tau);
        Ok((self.log_lik(x)?, lp))
    }

    fn log_lik(&self, x: &[f64]) -> Result<f64> {
        Ok(self.y.iter().map(|v| -0.5 * LN_2PI - 0.5 * (v - x[0]).powi(2)).sum())
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![self.tau * rng.sample::<f64, _>(StandardNormal)]
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0]
    }
}

#[test]
fn stepping_stone_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..50).map(|_| 1.3 + rng.sample::<f64, _>(StandardNormal)).collect();
    let target = NormalNormal { y, tau: 3.0 };
    let config = SteppingStoneConfig {
        hmc: HmcConfig {
            n_warmup: 500,
            n_draws: 250,
            n_chains: 4,
            seed: 21,
            ..HmcConfig::default()
        },
        ..SteppingStoneConfig::default()
    };
    let est = log_marginal_stepping_stone(&target, &config).unwrap();
    let exact = target.exact_log_marginal();
    assert!((est.log_marginal - exact).abs() < 0.1, "estimate {} vs exact {exact}", est.log_marginal);
    assert!(!est.unreliable);
    assert_eq!(est.rungs.len(), 32);
}

#[test]
fn too_few_rungs_rejected() {
    let target = NormalNormal { y: vec![0.0], tau: 1.0 };
    let config = SteppingStoneConfig {
        n_rungs: 4,
        ..SteppingStoneConfig::default()
    };
    assert!(log_marginal_stepping_stone(&target, &config).is_err());
}
