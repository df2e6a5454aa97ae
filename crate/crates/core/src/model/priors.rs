//! Proper priors for every sampled scalar, and the unconstraining transform
//! each prior's support implies: identity for normal priors, log for gamma
//! priors, logit for beta priors.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF, Gamma as GammaDist};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Gamma priors are shape/rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    Positive,
    UnitInterval,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Prior::Gamma { shape, rate } => shape.is_finite() && rate.is_finite() && shape > 0.0 && rate > 0.0,
            Prior::Beta { a, b } => a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Prior(format!("improper or invalid hyperparameters in {self:?}")))
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Prior::Normal { .. } => Support::Real,
            Prior::Gamma { .. } => Support::Positive,
            Prior::Beta { .. } => Support::UnitInterval,
        }
    }

    /// Normalized log density on the constrained scale.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - HALF_LN_2PI
            }
            Prior::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            Prior::Beta { a, b } => {
                if x <= 0.0 || x >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
            }
        }
    }

    pub fn constrain(&self, u: f64) -> f64 {
        match self.support() {
            Support::Real => u,
            Support::Positive => u.exp(),
            Support::UnitInterval => logistic(u),
        }
    }

    pub fn unconstrain(&self, x: f64) -> f64 {
        match self.support() {
            Support::Real => x,
            Support::Positive => x.ln(),
            Support::UnitInterval => x.ln() - (-x).ln_1p(),
        }
    }

    /// Log density of the unconstrained coordinate `u` (prior plus the
    /// log-Jacobian of the transform) and its derivative.
    pub fn unconstrained_log_density(&self, u: f64) -> (f64, f64) {
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (u - mean) / sd;
                (-0.5 * z * z - sd.ln() - HALF_LN_2PI, -z / sd)
            }
            Prior::Gamma { shape, rate } => {
                let x = u.exp();
                (shape * rate.ln() - ln_gamma(shape) + shape * u - rate * x, shape - rate * x)
            }
            Prior::Beta { a, b } => {
                let x = logistic(u);
                // ln x = -softplus(-u), ln(1 - x) = -softplus(u)
                let ln_x = -softplus(-u);
                let ln_1mx = -softplus(u);
                (a * ln_x + b * ln_1mx - ln_beta(a, b), a * (1.0 - x) - b * x)
            }
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            Prior::Normal { mean, .. } => mean,
            Prior::Gamma { shape, rate } => GammaDist::new(shape, rate).map(|d| d.inverse_cdf(0.5)).unwrap_or(shape / rate),
            Prior::Beta { a, b } => BetaDist::new(a, b).map(|d| d.inverse_cdf(0.5)).unwrap_or(a / (a + b)),
        }
    }

    /// Exact draw on the unconstrained scale.
    pub fn sample_unconstrained<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            Prior::Gamma { shape, rate } => {
                let d = rand_distr::Gamma::new(shape, 1.0 / rate).expect("validated gamma prior");
                let x: f64 = rng.sample(d);
                x.max(f64::MIN_POSITIVE).ln()
            }
            Prior::Beta { a, b } => {
                // ratio of gammas keeps the logit accurate near 0 and 1
                let ga = rand_distr::Gamma::new(a, 1.0).expect("validated beta prior");
                let gb = rand_distr::Gamma::new(b, 1.0).expect("validated beta prior");
                let xa: f64 = rng.sample(ga);
                let xb: f64 = rng.sample(gb);
                xa.max(f64::MIN_POSITIVE).ln() - xb.max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Priors for every scalar the model samples. `beta` applies independently
/// to each regression coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub name: String,
    /// Always `"shape-rate"`; kept in the files so they describe themselves.
    pub gamma_parameterization: String,
    pub beta: Prior,
    pub sigma: Prior,
    pub sigma_v2: Prior,
    pub nu_r_p: Prior,
    pub nu_c_p: Prior,
    pub lambda_v: Prior,
    pub sigma_w2: Prior,
    pub nu_r_l: Prior,
    pub nu_c_l: Prior,
    pub kappa_w: Prior,
}

pub const PRESET_NAMES: [&str; 2] = ["simulation", "analysis"];

const SIMULATION: &str = include_str!("../../presets/simulation.json");
const ANALYSIS: &str = include_str!("../../presets/analysis.json");

impl PriorSpec {
    /// Informative priors used for the simulation study.
    pub fn simulation() -> Self {
        Self::preset("simulation").expect("bundled preset parses")
    }

    /// Diffuse priors used for the GPU data analysis.
    pub fn analysis() -> Self {
        Self::preset("analysis").expect("bundled preset parses")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "simulation" => SIMULATION,
            "analysis" => ANALYSIS,
            other => {
                return Err(Error::Prior(format!(
                    "unknown preset {other:?}; expected one of {PRESET_NAMES:?}"
                )))
            }
        };
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PriorSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// A preset name or a path to a JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&name_or_path) {
            Self::preset(name_or_path)
        } else {
            Self::from_file(Path::new(name_or_path))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_parameterization != "shape-rate" {
            return Err(Error::Prior(format!(
                "gamma_parameterization must be \"shape-rate\", got {:?}",
                self.gamma_parameterization
            )));
        }
        let expect = |name: &str, prior: &Prior, support: Support| {
            prior.validate()?;
            if prior.support() != support {
                return Err(Error::Prior(format!("{name}: {prior:?} does not match the parameter's support {support:?}")));
            }
            Ok(())
        };
        expect("beta", &self.beta, Support::Real)?;
        for (name, p) in [
            ("sigma", &self.sigma),
            ("sigma_v2", &self.sigma_v2),
            ("nu_r_p", &self.nu_r_p),
            ("nu_c_p", &self.nu_c_p),
            ("lambda_v", &self.lambda_v),
            ("sigma_w2", &self.sigma_w2),
            ("nu_r_l", &self.nu_r_l),
            ("nu_c_l", &self.nu_c_l),
        ] {
            expect(name, p, Support::Positive)?;
        }
        expect("kappa_w", &self.kappa_w, Support::UnitInterval)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_load() {
        let sim = PriorSpec::simulation();
        assert_eq!(sim.kappa_w, Prior::Beta { a: 18.0, b: 2.0 });
        assert_eq!(sim.sigma_v2, Prior::Gamma { shape: 6.0, rate: 100.0 });
        let ana = PriorSpec::analysis();
        assert_eq!(ana.kappa_w, Prior::Beta { a: 0.5, b: 0.5 });
        assert_eq!(ana.nu_c_l, Prior::Gamma { shape: 5.0, rate: 5.0 });
        assert!(PriorSpec::preset("nope").is_err());
    }

    #[test]
    fn wrong_support_is_rejected() {
        let mut spec = PriorSpec::analysis();
        spec.sigma = Prior::Normal { mean: 0.0, sd: 1.0 };
        assert!(spec.validate().is_err());
        let mut spec = PriorSpec::analysis();
        spec.beta = Prior::Normal { mean: 0.0, sd: 0.0 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn densities_normalize() {
        // trapezoid on the unconstrained scale integrates prior + Jacobian to 1
        for prior in [
            Prior::Normal { mean: 1.0, sd: 2.0 },
            Prior::Gamma { shape: 2.0, rate: 3.0 },
            Prior::Gamma { shape: 6.0, rate: 100.0 },
            Prior::Beta { a: 18.0, b: 2.0 },
            Prior::Beta { a: 2.5, b: 1.5 },
        ] {
            let (lo, hi, n) = (-40.0, 40.0, 400_000);
            let h = (hi - lo) / n as f64;
            let total: f64 = (0..=n)
                .map(|k| {
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    w * prior.unconstrained_log_density(lo + k as f64 * h).0.exp()
                })
                .sum::<f64>()
                * h;
            assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn unconstrained_density_consistent_with_constrained() {
        for (prior, x) in [
            (Prior::Gamma { shape: 2.0, rate: 3.0 }, 0.7),
            (Prior::Beta { a: 0.5, b: 0.5 }, 0.3),
        ] {
            let u = prior.unconstrain(x);
            let jac = match prior.support() {
                Support::Positive => x.ln(),
                Support::UnitInterval => (x * (1.0 - x)).ln(),
                Support::Real => 0.0,
            };
            assert_relative_eq!(prior.unconstrained_log_density(u).0, prior.log_density(x) + jac, max_relative = 1e-12);
            assert_relative_eq!(prior.constrain(u), x, max_relative = 1e-12);
        }
    }

    #[test]
    fn unconstrained_derivative_matches_fd() {
        let h = 1e-6;
        for prior in [
            Prior::Normal { mean: 1.0, sd: 2.0 },
            Prior::Gamma { shape: 0.1, rate: 0.1 },
            Prior::Beta { a: 0.5, b: 0.5 },
        ] {
            for &u in &[-2.0, 0.3, 1.7] {
                let fd = (prior.unconstrained_log_density(u + h).0 - prior.unconstrained_log_density(u - h).0) / (2.0 * h);
                assert_relative_eq!(prior.unconstrained_log_density(u).1, fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn medians() {
        assert_relative_eq!(Prior::Gamma { shape: 1.0, rate: 2.0 }.median(), std::f64::consts::LN_2 / 2.0, max_relative = 1e-8);
        assert_relative_eq!(Prior::Beta { a: 0.5, b: 0.5 }.median(), 0.5, max_relative = 1e-8);
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = Prior::Gamma { shape: 4.0, rate: 2.0 };
        let n = 100_000;
        let mean = (0..n).map(|_| prior.constrain(prior.sample_unconstrained(&mut rng))).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.03, "{mean}");
        let prior = Prior::Beta { a: 18.0, b: 2.0 };
        let mean = (0..n).map(|_| prior.constrain(prior.sample_unconstrained(&mut rng))).sum::<f64>() / n as f64;
        assert!((mean - 0.9).abs() < 0.003, "{mean}");
    }
}
