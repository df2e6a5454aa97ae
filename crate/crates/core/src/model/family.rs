//! Standardized log-lifetime noise: normal (lognormal lifetimes) and
//! smallest extreme value (Weibull lifetimes).

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "lognormal", alias = "NOR", alias = "nor")]
    Nor,
    #[serde(rename = "weibull", alias = "SEV", alias = "sev")]
    Sev,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lognormal" | "nor" | "normal" => Ok(Family::Nor),
            "weibull" | "sev" => Ok(Family::Sev),
            other => Err(Error::Domain(format!("unknown family {other:?}"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Nor => "lognormal",
            Family::Sev => "weibull",
        })
    }
}

/// `ln Φ(x)` for the standard normal, accurate far into the lower tail.
pub fn log_ndtr(x: f64) -> f64 {
    if x > 6.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -20.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let z2 = x * x;
        let inv = 1.0 / z2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
        -0.5 * z2 - HALF_LN_2PI - (-x).ln() + series.ln()
    }
}

impl Family {
    /// `(Φ(z), φ(z))` of the standard member of the family.
    pub fn cdf_pdf(self, z: f64) -> (f64, f64) {
        match self {
            Family::Nor => (0.5 * erfc(-z / SQRT_2), (-0.5 * z * z).exp() / (2.0 * PI).sqrt()),
            Family::Sev => {
                let ez = z.exp();
                (-(-ez).exp_m1(), (z - ez).exp())
            }
        }
    }

    pub fn log_pdf(self, z: f64) -> f64 {
        match self {
            Family::Nor => -0.5 * z * z - HALF_LN_2PI,
            Family::Sev => z - z.exp(),
        }
    }

    /// `ln(1 - Φ(z))`.
    pub fn log_sf(self, z: f64) -> f64 {
        match self {
            Family::Nor => log_ndtr(-z),
            Family::Sev => -z.exp(),
        }
    }

    pub fn dlog_pdf(self, z: f64) -> f64 {
        match self {
            Family::Nor => -z,
            Family::Sev => 1.0 - z.exp(),
        }
    }

    /// `d/dz ln(1 - Φ(z))`, the negated hazard.
    pub fn dlog_sf(self, z: f64) -> f64 {
        match self {
            Family::Nor => -(self.log_pdf(z) - log_ndtr(-z)).exp(),
            Family::Sev => -z.exp(),
        }
    }

    /// One standardized noise draw.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Family::Nor => rng.sample(StandardNormal),
            Family::Sev => {
                // inverse cdf: z = ln(-ln(1 - u))
                let u: f64 = rng.random();
                (-(-u).ln_1p()).ln()
            }
        }
    }

    /// Median of the standardized distribution.
    pub fn median(self) -> f64 {
        match self {
            Family::Nor => 0.0,
            Family::Sev => LN_2.ln(),
        }
    }
}

/// `(Φ(z), φ(z))` for `family`.
pub fn standard_cdf_pdf(z: f64, family: Family) -> (f64, f64) {
    family.cdf_pdf(z)
}

fn check_unit(t: f64, sigma: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Log-likelihood contribution of one right-censored unit on the observed
/// time scale: the density `φ(z) / (σ t)` for a failure, `1 - Φ(z)` for a
/// censored unit, with `z = (ln t - μ) / σ`.
pub fn unit_loglik(t: f64, event: bool, mu: f64, sigma: f64, family: Family) -> Result<f64> {
    check_unit(t, sigma)?;
    let log_t = t.ln();
    let z = (log_t - mu) / sigma;
    Ok(if event {
        family.log_pdf(z) - sigma.ln() - log_t
    } else {
        family.log_sf(z)
    })
}

/// `(ℓ, ∂ℓ/∂μ, ∂ℓ/∂ln σ)` for one unit given `ln t`; no input checks.
#[inline]
pub(crate) fn unit_loglik_grad(log_t: f64, event: bool, mu: f64, sigma: f64, log_sigma: f64, family: Family) -> (f64, f64, f64) {
    let z = (log_t - mu) / sigma;
    if event {
        let dz = family.dlog_pdf(z);
        (family.log_pdf(z) - log_sigma - log_t, -dz / sigma, -z * dz - 1.0)
    } else {
        let dz = family.dlog_sf(z);
        (family.log_sf(z), -dz / sigma, -z * dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn cdf_pdf_at_zero() {
        let (c, p) = standard_cdf_pdf(0.0, Family::Sev);
        assert_relative_eq!(c, 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(p, (-1.0f64).exp(), epsilon = 1e-15);
        let (c, p) = standard_cdf_pdf(0.0, Family::Nor);
        assert_relative_eq!(c, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p, 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn sev_deep_left_tail_survival() {
        let ls = Family::Sev.log_sf(-40.0);
        assert!(ls < 0.0);
        assert_relative_eq!(ls, -(-40.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn log_ndtr_tails() {
        // reference values from mpmath at 40 digits
        assert_relative_eq!(log_ndtr(-40.0), -804.608_442_013_753_8, max_relative = 1e-13);
        assert_relative_eq!(log_ndtr(-19.99), (0.5 * erfc(19.99 / SQRT_2)).ln(), max_relative = 1e-12);
        assert_relative_eq!(log_ndtr(-20.01), (0.5 * erfc(20.01 / SQRT_2)).ln(), max_relative = 1e-10);
        assert_relative_eq!(log_ndtr(10.0), -7.619_853_024_160_527e-24, max_relative = 1e-6);
        assert_relative_eq!(log_ndtr(0.0), -LN_2, epsilon = 1e-15);
    }

    #[test]
    fn unit_loglik_examples() {
        assert_relative_eq!(unit_loglik(1.0, false, 0.0, 1.0, Family::Nor).unwrap(), -LN_2, epsilon = 1e-15);
        assert_relative_eq!(unit_loglik(1.0, true, 0.0, 1.0, Family::Nor).unwrap(), -HALF_LN_2PI, epsilon = 1e-15);
        assert_relative_eq!(unit_loglik(E, false, 0.0, 1.0, Family::Sev).unwrap(), -E, epsilon = 1e-14);
        assert!(unit_loglik(0.0, true, 0.0, 1.0, Family::Nor).is_err());
        assert!(unit_loglik(1.0, true, 0.0, 0.0, Family::Nor).is_err());
    }

    #[test]
    fn hazard_is_consistent_with_pdf_over_sf() {
        for fam in [Family::Nor, Family::Sev] {
            for &z in &[-3.0, -0.5, 0.0, 1.2, 3.0] {
                let (c, p) = fam.cdf_pdf(z);
                assert_relative_eq!(-fam.dlog_sf(z), p / fam.log_sf(z).exp(), max_relative = 1e-10);
                assert_relative_eq!(1.0 - c, fam.log_sf(z).exp(), max_relative = 1e-6);
                assert_relative_eq!(fam.log_pdf(z), p.ln(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn unit_gradient_matches_finite_differences() {
        let h = 1e-6;
        for fam in [Family::Nor, Family::Sev] {
            for event in [true, false] {
                let (lt, mu, ls) = (0.7f64, 0.2f64, -0.4f64);
                let f = |mu: f64, ls: f64| unit_loglik_grad(lt, event, mu, ls.exp(), ls, fam).0;
                let (_, dmu, dls) = unit_loglik_grad(lt, event, mu, ls.exp(), ls, fam);
                assert_relative_eq!(dmu, (f(mu + h, ls) - f(mu - h, ls)) / (2.0 * h), max_relative = 1e-7);
                assert_relative_eq!(dls, (f(mu, ls + h) - f(mu, ls - h)) / (2.0 * h), max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn parse_family() {
        assert_eq!("lognormal".parse::<Family>().unwrap(), Family::Nor);
        assert_eq!("Weibull".parse::<Family>().unwrap(), Family::Sev);
        assert!("gamma".parse::<Family>().is_err());
    }
}
