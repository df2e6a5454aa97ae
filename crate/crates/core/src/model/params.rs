//! Model variants, the constrained parameter state, and the layout of the
//! unconstrained sampling vector.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nested model structures: fixed effects only, plus the physical effect,
/// plus the logical effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    M0,
    M1,
    M2,
}

impl ModelTag {
    pub fn has_physical(self) -> bool {
        self >= ModelTag::M1
    }

    pub fn has_logical(self) -> bool {
        self == ModelTag::M2
    }
}

impl FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m0" => Ok(ModelTag::M0),
            "m1" => Ok(ModelTag::M1),
            "m2" => Ok(ModelTag::M2),
            other => Err(Error::Domain(format!("unknown model {other:?}; expected m0, m1 or m2"))),
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::M0 => "m0",
            ModelTag::M1 => "m1",
            ModelTag::M2 => "m2",
        })
    }
}

/// Shape of the physical kernel as a function of its positive
/// reparameterization; always in `(1, 2)`.
pub fn kappa_from_lambda(lambda_v: f64) -> Result<f64> {
    if !(lambda_v > 0.0) {
        return Err(Error::Domain(format!("lambda_v must be positive, got {lambda_v}")));
    }
    Ok(kappa_from_lambda_unchecked(lambda_v))
}

#[inline]
pub(crate) fn kappa_from_lambda_unchecked(lambda_v: f64) -> f64 {
    2.0 / (1.0 + (-lambda_v).exp())
}

/// Inverse of [`kappa_from_lambda`] for `kappa` in `(1, 2)`.
pub fn lambda_from_kappa(kappa_v: f64) -> Result<f64> {
    if !(kappa_v > 1.0 && kappa_v < 2.0) {
        return Err(Error::Domain(format!("kappa_v must lie in (1, 2), got {kappa_v}")));
    }
    Ok(-(2.0 / kappa_v - 1.0).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalEffect {
    pub sigma_v2: f64,
    pub nu_r: f64,
    pub nu_c: f64,
    pub lambda_v: f64,
    /// Indexed by physical location.
    pub v: Vec<f64>,
}

impl PhysicalEffect {
    pub fn kappa_v(&self) -> f64 {
        kappa_from_lambda_unchecked(self.lambda_v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalEffect {
    pub sigma_w2: f64,
    pub nu_r: f64,
    pub nu_c: f64,
    pub kappa_w: f64,
    /// Indexed by logical location.
    pub w: Vec<f64>,
}

/// Constrained parameter values. Absent blocks mean the model omits that
/// random effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub physical: Option<PhysicalEffect>,
    pub logical: Option<LogicalEffect>,
}

impl ParameterState {
    pub fn model(&self) -> Result<ModelTag> {
        match (&self.physical, &self.logical) {
            (None, None) => Ok(ModelTag::M0),
            (Some(_), None) => Ok(ModelTag::M1),
            (Some(_), Some(_)) => Ok(ModelTag::M2),
            (None, Some(_)) => Err(Error::Domain("a logical effect requires a physical effect".into())),
        }
    }

    pub fn validate(&self, n_covariates: usize, n_locations: usize) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive, got {x}")))
            }
        };
        if self.beta.len() != n_covariates {
            return Err(Error::Domain(format!(
                "beta has length {}, expected {n_covariates}",
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("beta must be finite".into()));
        }
        positive("sigma", self.sigma)?;
        if let Some(p) = &self.physical {
            positive("sigma_v2", p.sigma_v2)?;
            positive("nu_r_P", p.nu_r)?;
            positive("nu_c_P", p.nu_c)?;
            positive("lambda_v", p.lambda_v)?;
            if p.v.len() != n_locations || p.v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("v must be {n_locations} finite values")));
            }
        }
        if let Some(l) = &self.logical {
            positive("sigma_w2", l.sigma_w2)?;
            positive("nu_r_L", l.nu_r)?;
            positive("nu_c_L", l.nu_c)?;
            if !(l.kappa_w > 0.0 && l.kappa_w <= 1.0) {
                return Err(Error::Domain(format!("kappa_w must lie in (0, 1], got {}", l.kappa_w)));
            }
            if l.w.len() != n_locations || l.w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("w must be {n_locations} finite values")));
            }
        }
        self.model().map(|_| ())
    }
}

/// Offsets of the hyperparameters of one random effect inside the
/// unconstrained vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectSlots {
    pub log_variance: usize,
    pub log_nu_r: usize,
    pub log_nu_c: usize,
    /// `ln lambda_v` for the physical effect, `logit kappa_w` for the logical.
    pub shape: usize,
    pub whitened: Range<usize>,
}

/// Positions inside the unconstrained vector:
/// `[beta.., ln sigma, (physical block), (logical block)]`, each effect block
/// being `[ln variance, ln nu_r, ln nu_c, shape, whitened effects..]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub model: ModelTag,
    pub n_beta: usize,
    pub n_locations: usize,
    pub log_sigma: usize,
    pub physical: Option<EffectSlots>,
    pub logical: Option<EffectSlots>,
    pub dim: usize,
}

impl ParamLayout {
    pub fn new(model: ModelTag, n_beta: usize, n_locations: usize) -> Self {
        let log_sigma = n_beta;
        let mut next = n_beta + 1;
        let mut block = |present: bool| {
            present.then(|| {
                let s = EffectSlots {
                    log_variance: next,
                    log_nu_r: next + 1,
                    log_nu_c: next + 2,
                    shape: next + 3,
                    whitened: next + 4..next + 4 + n_locations,
                };
                next += 4 + n_locations;
                s
            })
        };
        let physical = block(model.has_physical());
        let logical = block(model.has_logical());
        Self {
            model,
            n_beta,
            n_locations,
            log_sigma,
            physical,
            logical,
            dim: next,
        }
    }

    /// Labels of the constrained draw vector, see [`Self::constrained_dim`].
    pub fn labels(&self, covariate_names: &[String]) -> Vec<String> {
        let mut out: Vec<String> = covariate_names.iter().map(|n| format!("beta[{n}]")).collect();
        out.push("sigma".into());
        if self.physical.is_some() {
            for s in ["sigma_v2", "nu_r_P", "nu_c_P", "lambda_v", "kappa_v"] {
                out.push(s.into());
            }
        }
        if self.logical.is_some() {
            for s in ["sigma_w2", "nu_r_L", "nu_c_L", "kappa_w"] {
                out.push(s.into());
            }
        }
        if self.physical.is_some() {
            out.extend((1..=self.n_locations).map(|j| format!("v[{j}]")));
        }
        if self.logical.is_some() {
            out.extend((1..=self.n_locations).map(|j| format!("w[{j}]")));
        }
        out
    }

    /// Length of the constrained draw vector: the unconstrained coordinates
    /// plus the derived `kappa_v`.
    pub fn constrained_dim(&self) -> usize {
        self.dim + usize::from(self.physical.is_some())
    }
}
