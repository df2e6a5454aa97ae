//! The AFT log posterior: censored log-location-scale likelihood, proper
//! priors, dual spatial random effects, reparameterization and gradients.

pub mod dataset;
pub mod family;
pub mod params;
pub mod posterior;
pub mod priors;

pub use dataset::SurvivalDataset;
pub use family::{log_ndtr, standard_cdf_pdf, unit_loglik, Family};
pub use params::{
    kappa_from_lambda, lambda_from_kappa, EffectSlots, LogicalEffect, ModelTag, ParamLayout, ParameterState,
    PhysicalEffect,
};
pub use posterior::{linear_predictor, log_posterior, log_posterior_gradient, Evaluation, SpatialAft};
pub use priors::{Prior, PriorSpec, Support, PRESET_NAMES};
