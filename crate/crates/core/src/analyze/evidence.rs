//! Stepping-stone estimation of the log marginal likelihood and Bayes
//! factors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpatialAft;
use crate::sampler::{ess_bulk, run_chains, split_rhat, Adaptation, HmcConfig, LogDensity};

/// A model whose log density splits into a log-likelihood and a proper
/// log prior, both on the same unconstrained space.
pub trait TemperedTarget: Sync {
    fn dim(&self) -> usize;

    /// `(log_lik, log_prior)` with their gradients written into the buffers.
    fn log_lik_and_prior(&self, x: &[f64], grad_lik: &mut [f64], grad_prior: &mut [f64]) -> Result<(f64, f64)>;

    fn log_lik(&self, x: &[f64]) -> Result<f64>;

    /// Exact draw from the prior.
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn initial_point(&self) -> Vec<f64>;
}

impl TemperedTarget for SpatialAft {
    fn dim(&self) -> usize {
        self.layout().dim
    }

    fn log_lik_and_prior(&self, x: &[f64], grad_lik: &mut [f64], grad_prior: &mut [f64]) -> Result<(f64, f64)> {
        let e = self.evaluate(x, true)?;
        grad_lik.copy_from_slice(&e.grad_lik);
        grad_prior.copy_from_slice(&e.grad_prior);
        Ok((e.log_lik, e.log_prior))
    }

    fn log_lik(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x, false)?.log_lik)
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        SpatialAft::sample_prior(self, rng)
    }

    fn initial_point(&self) -> Vec<f64> {
        SpatialAft::initial_point(self)
    }
}

/// `prior * likelihood^temperature` as a sampling target.
pub struct PowerPosterior<'a, T: ?Sized> {
    pub target: &'a T,
    pub temperature: f64,
}

impl<T: TemperedTarget + ?Sized> LogDensity for PowerPosterior<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut gp = vec![0.0; grad.len()];
        let (ll, lp) = self.target.log_lik_and_prior(x, grad, &mut gp)?;
        for (g, p) in grad.iter_mut().zip(&gp) {
            *g = self.temperature * *g + p;
        }
        Ok(self.temperature * ll + lp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteppingStoneConfig {
    /// Number of ratios `K`; temperatures are `(k / K)^exponent`.
    pub n_rungs: usize,
    pub exponent: f64,
    /// Sampler settings for the first tempered rung; `seed` is the base seed.
    pub hmc: HmcConfig,
    /// Warmup for later rungs, which start from the previous rung's state
    /// and adaptation.
    pub rung_warmup: usize,
    /// R-hat above which a rung marks the estimate unreliable.
    pub rhat_threshold: f64,
}

impl Default for SteppingStoneConfig {
    fn default() -> Self {
        Self {
            n_rungs: 32,
            exponent: 5.0,
            hmc: HmcConfig {
                n_warmup: 500,
                n_draws: 250,
                n_chains: 4,
                ..HmcConfig::default()
            },
            rung_warmup: 150,
            rhat_threshold: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungReport {
    /// Temperature the draws were taken at.
    pub temperature: f64,
    pub next_temperature: f64,
    pub log_ratio: f64,
    pub std_error: f64,
    pub rhat: Option<f64>,
    pub n_divergent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_marginal: f64,
    /// Delta-method Monte Carlo standard error summed over rungs.
    pub std_error: f64,
    pub unreliable: bool,
    pub rungs: Vec<RungReport>,
}

pub fn temperatures(n_rungs: usize, exponent: f64) -> Vec<f64> {
    (0..=n_rungs).map(|k| (k as f64 / n_rungs as f64).powf(exponent)).collect()
}

fn rung_seed(base: u64, k: usize) -> u64 {
    base ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `ln mean exp(delta * ll)` and its standard error; non-finite
/// log-likelihoods carry zero weight.
fn log_mean_ratio(ll: &[f64], delta: f64, ess: f64) -> (f64, f64) {
    let a: Vec<f64> = ll
        .iter()
        .map(|l| if l.is_finite() { delta * l } else { f64::NEG_INFINITY })
        .collect();
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let w: Vec<f64> = a.iter().map(|x| (x - max).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / (ess.max(1.0) * mean * mean)).sqrt();
    (max + mean.ln(), se)
}

/// Stepping-stone estimate of `ln p(y)`. Rung 0 uses exact prior draws;
/// each later rung runs HMC on the power posterior, warm-started from the
/// previous rung.
pub fn log_marginal_stepping_stone<T: TemperedTarget + ?Sized>(
    target: &T,
    config: &SteppingStoneConfig,
) -> Result<EvidenceEstimate> {
    if config.n_rungs < 8 {
        return Err(Error::Domain(format!("at least 8 rungs are required, got {}", config.n_rungs)));
    }
    config.hmc.validate()?;
    let temps = temperatures(config.n_rungs, config.exponent);
    let n_prior = config.hmc.n_draws * config.hmc.n_chains;

    let mut rungs = Vec::with_capacity(config.n_rungs);
    let mut rng = ChaCha8Rng::seed_from_u64(rung_seed(config.hmc.seed, 0));
    let prior_ll: Vec<f64> = (0..n_prior)
        .map(|_| {
            let x = target.sample_prior(&mut rng);
            target.log_lik(&x).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    let (lr, se) = log_mean_ratio(&prior_ll, temps[1] - temps[0], n_prior as f64);
    rungs.push(RungReport {
        temperature: temps[0],
        next_temperature: temps[1],
        log_ratio: lr,
        std_error: se,
        rhat: None,
        n_divergent: 0,
    });

    let mut init = target.initial_point();
    let mut warm: Option<Adaptation> = None;
    for k in 1..config.n_rungs {
        let power = PowerPosterior {
            target,
            temperature: temps[k],
        };
        let hmc = HmcConfig {
            seed: rung_seed(config.hmc.seed, k),
            n_warmup: if warm.is_some() { config.rung_warmup } else { config.hmc.n_warmup },
            ..config.hmc.clone()
        };
        let chains = run_chains(&power, &init, &hmc, warm.as_ref())?;
        let mut ll_by_chain: Vec<Vec<f64>> = Vec::with_capacity(chains.len());
        for c in &chains {
            ll_by_chain.push(
                (0..c.n_draws())
                    .map(|i| target.log_lik(c.draw(i)).unwrap_or(f64::NEG_INFINITY))
                    .collect(),
            );
        }
        let refs: Vec<&[f64]> = ll_by_chain.iter().map(|c| c.as_slice()).collect();
        let mut rhat = split_rhat(&refs).ok().flatten();
        for d in 0..target.dim() {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| (0..c.n_draws()).map(|i| c.draw(i)[d]).collect()).collect();
            let r: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            if let Ok(Some(x)) = split_rhat(&r) {
                rhat = Some(rhat.map_or(x, |m: f64| m.max(x)));
            }
        }
        let all: Vec<f64> = ll_by_chain.concat();
        let ess = ess_bulk(&refs).ok().flatten().unwrap_or(all.len() as f64).min(all.len() as f64);
        let (lr, se) = log_mean_ratio(&all, temps[k + 1] - temps[k], ess);
        rungs.push(RungReport {
            temperature: temps[k],
            next_temperature: temps[k + 1],
            log_ratio: lr,
            std_error: se,
            rhat,
            n_divergent: chains.iter().map(|c| c.stats.n_divergent).sum(),
        });
        init = chains[0].last.clone();
        warm = Some(chains[0].adaptation.clone());
    }

    let log_marginal: f64 = rungs.iter().map(|r| r.log_ratio).sum();
    let std_error = rungs.iter().map(|r| r.std_error * r.std_error).sum::<f64>().sqrt();
    let unreliable = !log_marginal.is_finite()
        || rungs.iter().any(|r| r.rhat.is_some_and(|x| x > config.rhat_threshold));
    Ok(EvidenceEstimate {
        log_marginal,
        std_error,
        unreliable,
        rungs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub log_bf: f64,
    pub bf: f64,
}

/// `BF_ab = exp(logml_a - logml_b)`, also in log form.
pub fn bayes_factor(logml_a: f64, logml_b: f64) -> BayesFactor {
    let log_bf = logml_a - logml_b;
    BayesFactor { log_bf, bf: log_bf.exp() }
}
