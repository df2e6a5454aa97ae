//! Posterior summaries, Kaplan–Meier curves and the log-rank test,
//! stepping-stone evidence and Bayes factors.

pub mod evidence;
pub mod km;
pub mod summary;

pub use evidence::{
    bayes_factor, log_marginal_stepping_stone, temperatures, BayesFactor, EvidenceEstimate, PowerPosterior, RungReport,
    SteppingStoneConfig, TemperedTarget,
};
pub use km::{kaplan_meier, kaplan_meier_levels, logrank_test, write_km_csv, write_logrank_csv, KmCurve, LogRankResult};
pub use summary::{
    correlation_grid, display_name, posterior_probability, probability_greater, quantile_type7, summarize_column,
    summarize_draws, write_correlation_csv, write_summary_csv, CorrelationPoint, ParamSummary, PosteriorSummary,
};
